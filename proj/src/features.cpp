#include "fanranker/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fanranker/digest.hpp"

namespace fanranker {

using nlohmann::ordered_json;

std::string_view to_string(BaseFeature f) {
  switch (f) {
    case BaseFeature::ChatSent: return "chat_sent";
    case BaseFeature::GiftScCount: return "gift_sc_count";
    case BaseFeature::GiftScValue: return "gift_sc_value";
    case BaseFeature::LiveWatchRate: return "live_watch_rate";
    case BaseFeature::OnTimeRate: return "on_time_rate";
    case BaseFeature::LiveWatchTime: return "live_watch_time";
    case BaseFeature::ChatPerLive: return "chat_per_live";
    case BaseFeature::GiftScCountVtb: return "gift_sc_count_vtb";
    case BaseFeature::GiftScValueVtb: return "gift_sc_value_vtb";
    case BaseFeature::ChatSimAvg: return "chatsim_avg";
    case BaseFeature::Sexual: return "sexual";
    case BaseFeature::Harassment: return "harassment";
    case BaseFeature::Violence: return "violence";
  }
  return "chat_sent";
}

std::size_t column_delta(BaseFeature f) {
  for (std::size_t k = 0; k < kDeltaFeatures.size(); ++k) {
    if (kDeltaFeatures[k] == f) return 2 * kBaseFeatureCount + k;
  }
  throw Error(ErrorCode::InvalidArgument, "no delta column for " + std::string(to_string(f)));
}

const std::vector<FeatureColumn>& feature_columns() {
  static const std::vector<FeatureColumn> columns = [] {
    std::vector<FeatureColumn> c;
    for (const char* w : {"W1", "W2"}) {
      for (std::size_t b = 0; b < kBaseFeatureCount; ++b) {
        const auto f = static_cast<BaseFeature>(b);
        std::string suffix = w[1] == '1' ? "_w1" : "_w2";
        c.push_back({std::string(to_string(f)) + suffix, w, false, f == BaseFeature::ChatSimAvg});
      }
    }
    for (BaseFeature f : kDeltaFeatures) {
      c.push_back({std::string(to_string(f)) + "_delta", "DELTA", true, f == BaseFeature::ChatSimAvg});
    }
    c.push_back({"chatsim_present_w1", "W1", false, true});
    c.push_back({"chatsim_present_w2", "W2", false, true});
    return c;
  }();
  return columns;
}

std::string manifest_json(std::span<const FeatureColumn> columns) {
  ordered_json j;
  j["header"] = kMatrixHeader;
  j["columns"] = ordered_json::array();
  for (const auto& c : columns) {
    j["columns"].push_back({{"name", c.name}, {"window", c.window}, {"delta", c.delta}, {"chatsim", c.chatsim}});
  }
  return j.dump();
}

std::vector<FeatureColumn> parse_manifest_json(std::string_view text) {
  auto j = ordered_json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded() || !j.contains("columns") || !j["columns"].is_array()) {
    throw Error(ErrorCode::ManifestMismatch, "unreadable column manifest");
  }
  std::vector<FeatureColumn> out;
  try {
    for (const auto& c : j["columns"]) {
      out.push_back({c.at("name").get<std::string>(), c.at("window").get<std::string>(), c.at("delta").get<bool>(),
                     c.value("chatsim", false)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestMismatch, std::string("bad manifest column: ") + e.what());
  }
  return out;
}

std::uint64_t manifest_hash(std::span<const FeatureColumn> columns) { return fnv1a64(manifest_json(columns)); }

FeatureVector assemble_vector(const WindowValues& d0, const WindowValues& w1, const WindowValues& w2) {
  FeatureVector x(kFeatureWidth, 0.0);
  for (std::size_t b = 0; b < kBaseFeatureCount; ++b) {
    x[b] = w1.base[b];
    x[kBaseFeatureCount + b] = w2.base[b];
  }
  const auto sim = [](const WindowValues& w) { return w.chatsim.average.value_or(0.0); };
  x[column_w1(BaseFeature::ChatSimAvg)] = sim(w1);
  x[column_w2(BaseFeature::ChatSimAvg)] = sim(w2);
  for (std::size_t k = 0; k < kDeltaFeatures.size(); ++k) {
    const auto b = static_cast<std::size_t>(kDeltaFeatures[k]);
    if (kDeltaFeatures[k] == BaseFeature::ChatSimAvg) {
      x[2 * kBaseFeatureCount + k] = sim(w2) - sim(d0);
    } else {
      x[2 * kBaseFeatureCount + k] = w2.base[b] - d0.base[b];
    }
  }
  x[kColumnChatSimPresentW1] = w1.chatsim.average ? 1.0 : 0.0;
  x[kColumnChatSimPresentW2] = w2.chatsim.average ? 1.0 : 0.0;
  return x;
}

FeatureExtractor::FeatureExtractor(const LogStore& store, std::shared_ptr<const ChatSimEngine> chatsim,
                                   std::shared_ptr<const ChatLabels> labels, MetricOptions options)
    : store_(store), chatsim_(std::move(chatsim)), labels_(std::move(labels)), options_(options) {
  if (!chatsim_ || !labels_) throw Error(ErrorCode::InvalidArgument, "feature extractor needs ChatSim and labels");
}

WindowValues FeatureExtractor::window_values(ViewerId viewer, StreamerId vtuber, const Window& window,
                                             std::optional<SessionIndex> exclude) const {
  WindowValues v;
  auto set = [&](BaseFeature f, double value) { v.base[static_cast<std::size_t>(f)] = value; };

  const ChatMetrics chat = chat_metrics(store_, viewer, vtuber, window, exclude);
  const GiftMetrics gifts = gift_metrics(store_, viewer, window, std::nullopt, exclude);
  const GiftMetrics gifts_vtb = gift_metrics(store_, viewer, window, vtuber, exclude);
  const ViewingMetrics viewing = viewing_metrics(store_, viewer, vtuber, window, options_, exclude);

  set(BaseFeature::ChatSent, static_cast<double>(chat.totalChats));
  set(BaseFeature::GiftScCount, static_cast<double>(gifts.count));
  set(BaseFeature::GiftScValue, gifts.value_cny());
  set(BaseFeature::LiveWatchRate, viewing.liveWatchRate);
  set(BaseFeature::OnTimeRate, viewing.onTimeRate);
  set(BaseFeature::LiveWatchTime, viewing.watchTimeProportion);
  set(BaseFeature::ChatPerLive, chat.chatsPerWatchedSession);
  set(BaseFeature::GiftScCountVtb, static_cast<double>(gifts_vtb.count));
  set(BaseFeature::GiftScValueVtb, gifts_vtb.value_cny());

  v.chatsim = chatsim_->window_average(viewer, vtuber, window, exclude);
  set(BaseFeature::ChatSimAvg, v.chatsim.average.value_or(0.0));

  std::array<bool, 3> toxic{};
  for (EventIndex i : query_viewer_window(store_, viewer, window, vtuber)) {
    if (exclude && store_.session_of(i) == *exclude) continue;
    const auto label = labels_->label(i);
    if (!label) continue;
    for (std::size_t c = 0; c < 3; ++c) toxic[c] = toxic[c] || label->is(kToxicityCategories[c]);
  }
  set(BaseFeature::Sexual, toxic[0] ? 1.0 : 0.0);
  set(BaseFeature::Harassment, toxic[1] ? 1.0 : 0.0);
  set(BaseFeature::Violence, toxic[2] ? 1.0 : 0.0);
  return v;
}

FeatureDetail FeatureExtractor::detail_at(ViewerId viewer, StreamerId vtuber, EpochSeconds anchor,
                                          std::optional<SessionIndex> exclude) const {
  FeatureDetail d;
  d.viewerId = viewer;
  d.vtuberId = vtuber;
  d.anchorTs = anchor;
  d.d0 = window_values(viewer, vtuber, Window(anchor, kWindowD0), exclude);
  d.w1 = window_values(viewer, vtuber, Window(anchor, kWindowW1), exclude);
  d.w2 = window_values(viewer, vtuber, Window(anchor, kWindowW2), exclude);
  d.values = assemble_vector(d.d0, d.w1, d.w2);
  return d;
}

FeatureDetail FeatureExtractor::detail(const CohortRecord& record) const {
  return detail_at(record.viewerId, record.vtuberId, record.anchorTs, store_.find_session(record.anchorSession));
}

FeatureVector FeatureExtractor::extract(const CohortRecord& record) const { return detail(record).values; }

// ---------------------------------------------------------------- matrix

void LabeledMatrix::append(const CohortRecord& record, std::span<const double> x) {
  if (x.size() != cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "row width " + std::to_string(x.size()) + " != " + std::to_string(cols()));
  }
  values.insert(values.end(), x.begin(), x.end());
  labels.push_back(record.is_member() ? 1 : 0);
  records.push_back(record);
}

LabeledMatrix LabeledMatrix::subset(std::span<const std::size_t> indices) const {
  LabeledMatrix out;
  out.columns = columns;
  out.values.reserve(indices.size() * cols());
  for (std::size_t i : indices) {
    auto r = row(i);
    out.values.insert(out.values.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
    out.records.push_back(records[i]);
  }
  return out;
}

std::size_t LabeledMatrix::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

LabeledMatrix build_matrix(const FeatureExtractor& extractor, std::span<const CohortRecord> cohort) {
  if (cohort.empty()) throw Error(ErrorCode::EmptyCohort, "cannot build a matrix from an empty cohort");
  std::vector<CohortRecord> sorted(cohort.begin(), cohort.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const CohortRecord& a, const CohortRecord& b) {
    if (a.anchorTs != b.anchorTs) return a.anchorTs < b.anchorTs;
    if (a.viewerId != b.viewerId) return a.viewerId < b.viewerId;
    return canonical_less(a, b);
  });
  LabeledMatrix m;
  m.columns = feature_columns();
  m.values.reserve(sorted.size() * m.cols());
  for (const auto& r : sorted) m.append(r, extractor.extract(r));
  return m;
}

std::string format_double(double v) {
  if (v == 0.0) return "0";  // folds -0
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const auto comma = line.find(',', begin);
    out.push_back(line.substr(begin, comma == std::string_view::npos ? std::string_view::npos : comma - begin));
    if (comma == std::string_view::npos) break;
    begin = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, std::size_t line_no) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::MalformedRecord, "matrix line " + std::to_string(line_no) + ": bad number '" +
                                                std::string(s) + "'");
  }
  return v;
}

constexpr std::size_t kKeyColumns = 5;

}  // namespace

void write_matrix_csv(std::ostream& out, const LabeledMatrix& matrix) {
  out << kMatrixHeader << '\n';
  out << "viewerId,vtuberId,liveId,anchorTs,label";
  for (const auto& c : matrix.columns) out << ',' << c.name;
  out << '\n';
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    const auto& r = matrix.records[i];
    if (r.anchorSession.find_first_of(",\n\r") != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "liveId contains a CSV delimiter: " + r.anchorSession);
    }
    out << r.viewerId.value << ',' << r.vtuberId.value << ',' << r.anchorSession << ',' << r.anchorTs << ','
        << int(matrix.labels[i]);
    for (double v : matrix.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

LabeledMatrix read_matrix_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMatrixHeader) {
    throw Error(ErrorCode::MalformedRecord, "missing " + std::string(kMatrixHeader) + " header");
  }
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedRecord, "missing matrix column line");
  const auto head = split_commas(line);
  static constexpr std::array<std::string_view, kKeyColumns> kKeys = {"viewerId", "vtuberId", "liveId", "anchorTs",
                                                                      "label"};
  if (head.size() < kKeyColumns || !std::equal(kKeys.begin(), kKeys.end(), head.begin())) {
    throw Error(ErrorCode::MalformedRecord, "unexpected matrix key columns");
  }
  LabeledMatrix m;
  const auto& canonical = feature_columns();
  for (std::size_t j = kKeyColumns; j < head.size(); ++j) {
    auto it = std::find_if(canonical.begin(), canonical.end(),
                           [&](const FeatureColumn& c) { return c.name == head[j]; });
    if (it == canonical.end()) throw Error(ErrorCode::MalformedRecord, "unknown column " + std::string(head[j]));
    m.columns.push_back(*it);
  }
  std::size_t line_no = 2;
  std::vector<double> x(m.cols());
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != head.size()) {
      throw Error(ErrorCode::MalformedRecord, "matrix line " + std::to_string(line_no) + " has " +
                                                  std::to_string(cells.size()) + " cells");
    }
    CohortRecord r;
    r.viewerId = ViewerId(parse_number<std::uint64_t>(cells[0], line_no));
    r.vtuberId = StreamerId(parse_number<std::uint64_t>(cells[1], line_no));
    r.anchorSession = std::string(cells[2]);
    r.anchorTs = parse_number<std::int64_t>(cells[3], line_no);
    const int label = parse_number<int>(cells[4], line_no);
    if (label != 0 && label != 1) throw Error(ErrorCode::MalformedRecord, "label must be 0 or 1");
    r.label = label ? CohortLabel::Member : CohortLabel::NonMember;
    for (std::size_t j = 0; j < m.cols(); ++j) x[j] = parse_number<double>(cells[kKeyColumns + j], line_no);
    m.append(r, x);
  }
  return m;
}

std::string feature_detail_json(const FeatureDetail& detail, std::span<const FeatureColumn> columns) {
  ordered_json j;
  j["viewerId"] = detail.viewerId.value;
  j["vtuberId"] = detail.vtuberId.value;
  j["anchorTs"] = detail.anchorTs;
  j["features"] = ordered_json::array();
  const auto& canonical = feature_columns();
  for (const auto& c : columns) {
    auto it = std::find(canonical.begin(), canonical.end(), c);
    if (it == canonical.end()) throw Error(ErrorCode::ManifestMismatch, "unknown column " + c.name);
    const double v = detail.values.at(static_cast<std::size_t>(it - canonical.begin()));
    j["features"].push_back({{"name", c.name}, {"window", c.window}, {"value", v}});
  }
  auto sim = [](const WindowValues& w) {
    ordered_json s;
    s["average"] = w.chatsim.average ? ordered_json(*w.chatsim.average) : ordered_json(nullptr);
    s["sessions"] = w.chatsim.definedSessions;
    return s;
  };
  j["chatsim"] = {{"D0", sim(detail.d0)}, {"W1", sim(detail.w1)}, {"W2", sim(detail.w2)}};
  return j.dump();
}

}  // namespace fanranker
