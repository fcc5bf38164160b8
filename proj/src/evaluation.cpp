#include "fanranker/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>
#include <nlohmann/json.hpp>

namespace fanranker {

using nlohmann::ordered_json;

std::size_t rank_position(double member, std::span<const double> others) {
  return static_cast<std::size_t>(
      std::count_if(others.begin(), others.end(), [member](double o) { return o >= member; }));
}

RankResult rank_from_scores(const CohortRecord& member, double member_score, std::span<const double> others) {
  if (others.empty()) throw Error(ErrorCode::EmptyPool, "no non-member viewers in session " + member.anchorSession);
  RankResult r;
  r.member = member;
  r.memberScore = member_score;
  r.poolSize = others.size();
  r.rank = rank_position(member_score, others);
  r.percentile = static_cast<double>(r.rank) / static_cast<double>(r.poolSize);
  return r;
}

SessionPools::SessionPools(std::span<const CohortRecord> cohort) {
  for (const auto& r : cohort) {
    if (!r.is_member()) pools_[{r.anchorSession, r.vtuberId}].push_back(r);
  }
}

std::span<const CohortRecord> SessionPools::pool(const CohortRecord& member) const {
  auto it = pools_.find({member.anchorSession, member.vtuberId});
  if (it == pools_.end()) return {};
  return it->second;
}

std::vector<std::size_t> column_projection(std::span<const FeatureColumn> columns) {
  const auto& canonical = feature_columns();
  std::vector<std::size_t> out;
  out.reserve(columns.size());
  for (const auto& c : columns) {
    auto it = std::find(canonical.begin(), canonical.end(), c);
    if (it == canonical.end()) throw Error(ErrorCode::ManifestMismatch, "column " + c.name + " is not canonical");
    out.push_back(static_cast<std::size_t>(it - canonical.begin()));
  }
  return out;
}

RecordScorer::RecordScorer(const RankingModel& model, const FeatureExtractor& extractor,
                           std::span<const FeatureColumn> columns)
    : model_(model), extractor_(extractor), projection_(column_projection(columns)) {
  if (projection_.size() != model.width()) {
    throw Error(ErrorCode::ManifestMismatch, "manifest width differs from the model width");
  }
}

double RecordScorer::score_vector(std::span<const double> canonical) const {
  std::vector<double> x(projection_.size());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = canonical[projection_[j]];
  return model_.predict_score(x);
}

double RecordScorer::operator()(const CohortRecord& record) const { return score_vector(extractor_.extract(record)); }

RankResult rank_member(const RecordScorer& scorer, const CohortRecord& member, std::span<const CohortRecord> others) {
  if (others.empty()) throw Error(ErrorCode::EmptyPool, "no non-member viewers in session " + member.anchorSession);
  std::vector<double> scores;
  scores.reserve(others.size());
  for (const auto& o : others) scores.push_back(scorer(o));
  return rank_from_scores(member, scorer(member), scores);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

Quantiles summarize(std::span<const double> values) {
  Quantiles q;
  if (values.empty()) return q;
  q.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::vector<double> v(values.begin(), values.end());
  q.p25 = quantile(v, 0.25);
  q.p50 = quantile(v, 0.50);
  q.p75 = quantile(v, 0.75);
  return q;
}

EvaluationReport summarize(std::vector<RankResult> results, std::size_t skipped_empty_pool) {
  EvaluationReport rep;
  rep.results = std::move(results);
  rep.skippedEmptyPool = skipped_empty_pool;
  std::vector<double> ranks, pct;
  std::size_t zero = 0, top = 0;
  for (const auto& r : rep.results) {
    ranks.push_back(static_cast<double>(r.rank));
    pct.push_back(r.percentile);
    zero += r.rank == 0;
    top += r.rank < kTopN;
  }
  rep.rank = summarize(ranks);
  rep.percentile = summarize(pct);
  if (!rep.results.empty()) {
    rep.fractionRank0 = static_cast<double>(zero) / static_cast<double>(rep.results.size());
    rep.fractionTopN = static_cast<double>(top) / static_cast<double>(rep.results.size());
  }
  return rep;
}

std::vector<std::pair<std::size_t, double>> EvaluationReport::rank_cdf() const {
  std::vector<std::size_t> ranks;
  for (const auto& r : results) ranks.push_back(r.rank);
  std::sort(ranks.begin(), ranks.end());
  std::vector<std::pair<std::size_t, double>> cdf;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (i + 1 < ranks.size() && ranks[i + 1] == ranks[i]) continue;
    cdf.emplace_back(ranks[i], static_cast<double>(i + 1) / static_cast<double>(ranks.size()));
  }
  return cdf;
}

std::string EvaluationReport::to_json() const {
  auto q = [](const Quantiles& x) { return ordered_json{{"mean", x.mean}, {"p25", x.p25}, {"p50", x.p50}, {"p75", x.p75}}; };
  ordered_json j;
  j["members"] = results.size();
  j["skippedEmptyPool"] = skippedEmptyPool;
  j["summary"] = {{"rank", q(rank)},
                  {"percentile", q(percentile)},
                  {"fractionRank0", fractionRank0},
                  {"fractionTop50", fractionTopN}};
  j["cdf"] = ordered_json::array();
  for (auto [rank, frac] : rank_cdf()) j["cdf"].push_back({{"rank", rank}, {"fraction", frac}});
  j["results"] = ordered_json::array();
  for (const auto& r : results) {
    j["results"].push_back({{"viewerId", r.member.viewerId.value},
                            {"vtuberId", r.member.vtuberId.value},
                            {"liveId", r.member.anchorSession},
                            {"anchorTs", r.member.anchorTs},
                            {"score", r.memberScore},
                            {"rank", r.rank},
                            {"poolSize", r.poolSize},
                            {"percentile", r.percentile}});
  }
  return j.dump(2);
}

EvaluationReport evaluate_suite(const RecordScorer& scorer, std::span<const CohortRecord> test,
                                const SessionPools& pools) {
  std::vector<RankResult> results;
  std::size_t skipped = 0;
  for (const auto& m : test) {
    if (!m.is_member()) continue;
    const auto others = pools.pool(m);
    if (others.empty()) {
      ++skipped;
      continue;
    }
    results.push_back(rank_member(scorer, m, others));
  }
  return summarize(std::move(results), skipped);
}

// ---------------------------------------------------------------- baselines

std::string_view to_string(BaselineCriterion c) { return c == BaselineCriterion::ChatCount ? "CHAT_COUNT" : "GIFT_COUNT"; }

std::optional<BaselineCriterion> parse_baseline_criterion(std::string_view name) {
  if (name == "CHAT_COUNT" || name == "chat") return BaselineCriterion::ChatCount;
  if (name == "GIFT_COUNT" || name == "gift") return BaselineCriterion::GiftCount;
  return std::nullopt;
}

std::int64_t baseline_count(const LogStore& store, const CohortRecord& record, BaselineCriterion criterion) {
  std::int64_t n = 0;
  for (EventIndex i : query_viewer_window(store, record.viewerId, Window(record.anchorTs, kBaselineSpan),
                                          record.vtuberId)) {
    const auto kind = store.event(i).kind;
    if (criterion == BaselineCriterion::ChatCount ? kind == InteractionKind::Chat : is_gift_or_superchat(kind)) ++n;
  }
  return n;
}

RankResult baseline_rank(const LogStore& store, const CohortRecord& member, std::span<const CohortRecord> others,
                         BaselineCriterion criterion) {
  std::vector<double> scores;
  scores.reserve(others.size());
  for (const auto& o : others) scores.push_back(static_cast<double>(baseline_count(store, o, criterion)));
  return rank_from_scores(member, static_cast<double>(baseline_count(store, member, criterion)), scores);
}

EvaluationReport evaluate_baseline(const LogStore& store, std::span<const CohortRecord> test,
                                   const SessionPools& pools, BaselineCriterion criterion) {
  std::vector<RankResult> results;
  std::size_t skipped = 0;
  for (const auto& m : test) {
    if (!m.is_member()) continue;
    const auto others = pools.pool(m);
    if (others.empty()) {
      ++skipped;
      continue;
    }
    results.push_back(baseline_rank(store, m, others, criterion));
  }
  return summarize(std::move(results), skipped);
}

// ---------------------------------------------------------------- importance

std::string ImportanceReport::to_csv() const {
  std::ostringstream out;
  out << "feature,meanDrop,scaled\n";
  for (std::size_t j = 0; j < names.size(); ++j) {
    out << names[j] << ',' << format_double(meanDrop[j]) << ',' << format_double(scaled[j]) << '\n';
  }
  return out.str();
}

ImportanceReport permutation_importance(const RankingModel& model, const LabeledMatrix& heldout, std::size_t repeats,
                                        std::uint64_t seed, const PermutationHook& hook) {
  if (repeats == 0) throw Error(ErrorCode::InvalidArgument, "repeats must be positive");
  if (heldout.rows() == 0) throw Error(ErrorCode::TooFewRows, "empty held-out matrix");
  ImportanceReport rep;
  for (const auto& c : heldout.columns) rep.names.push_back(c.name);
  rep.baselineLogLoss = log_loss(heldout.labels, model.predict(heldout));
  const std::size_t n = heldout.rows(), d = heldout.cols();
  rep.meanDrop.assign(d, 0.0);
  LabeledMatrix work = heldout;
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < d; ++j) {
    Rng rng(Rng::derive(seed, j));
    for (std::size_t r = 0; r < repeats; ++r) {
      std::iota(perm.begin(), perm.end(), 0);
      if (hook) {
        hook(perm, j, r);
      } else {
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
      }
      for (std::size_t i = 0; i < n; ++i) work.values[i * d + j] = heldout.at(perm[i], j);
      rep.meanDrop[j] += log_loss(work.labels, model.predict(work)) - rep.baselineLogLoss;
    }
    rep.meanDrop[j] /= static_cast<double>(repeats);
    for (std::size_t i = 0; i < n; ++i) work.values[i * d + j] = heldout.at(i, j);
  }
  const auto [lo, hi] = std::minmax_element(rep.meanDrop.begin(), rep.meanDrop.end());
  rep.scaled.assign(d, 0.0);
  if (*hi > *lo) {
    for (std::size_t j = 0; j < d; ++j) rep.scaled[j] = (rep.meanDrop[j] - *lo) / (*hi - *lo);
  }
  return rep;
}

// ---------------------------------------------------------------- ablation

std::vector<FeatureColumn> ablated_columns() {
  std::vector<FeatureColumn> out;
  for (const auto& c : feature_columns()) {
    if (!c.chatsim) out.push_back(c);
  }
  return out;
}

LabeledMatrix ablate_chatsim(const LabeledMatrix& matrix) {
  if (matrix.columns != feature_columns()) {
    throw Error(ErrorCode::ManifestMismatch, "ablation needs the canonical feature columns");
  }
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < matrix.cols(); ++j) {
    if (!matrix.columns[j].chatsim) keep.push_back(j);
  }
  LabeledMatrix out;
  out.columns = ablated_columns();
  out.values.reserve(matrix.rows() * keep.size());
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    for (std::size_t j : keep) out.values.push_back(matrix.at(i, j));
  }
  out.labels = matrix.labels;
  out.records = matrix.records;
  return out;
}

// ---------------------------------------------------------------- chi-square

double chi_square_survival(double statistic, int dof) {
  if (dof < 1) throw Error(ErrorCode::InvalidArgument, "degrees of freedom must be >= 1");
  if (statistic <= 0) return 1.0;
  return boost::math::gamma_q(static_cast<double>(dof) / 2.0, statistic / 2.0);
}

ChiSquareResult chi_square_independence(const std::vector<std::vector<double>>& table) {
  const std::size_t r = table.size();
  if (r < 2 || table[0].size() < 2) throw Error(ErrorCode::InvalidArgument, "table must be at least 2x2");
  const std::size_t c = table[0].size();
  std::vector<double> rows(r, 0.0), cols(c, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (table[i].size() != c) throw Error(ErrorCode::InvalidArgument, "table rows differ in length");
    for (std::size_t j = 0; j < c; ++j) {
      const double o = table[i][j];
      if (!(o >= 0) || !std::isfinite(o)) throw Error(ErrorCode::InvalidArgument, "counts must be finite and >= 0");
      rows[i] += o;
      cols[j] += o;
      total += o;
    }
  }
  for (double m : rows) {
    if (m <= 0) throw Error(ErrorCode::DegenerateTable, "a row sums to zero");
  }
  for (double m : cols) {
    if (m <= 0) throw Error(ErrorCode::DegenerateTable, "a column sums to zero");
  }
  ChiSquareResult res;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double e = rows[i] * cols[j] / total;
      const double diff = table[i][j] - e;
      res.statistic += diff * diff / e;
    }
  }
  res.degreesOfFreedom = static_cast<int>((r - 1) * (c - 1));
  res.pValue = chi_square_survival(res.statistic, res.degreesOfFreedom);
  return res;
}

int decline_category(double at_t0, double at_t30) {
  if (at_t30 > at_t0) return 1;
  if (at_t30 < at_t0) return -1;
  return 0;
}

std::vector<RenewalChiSquareRow> renewal_chi_square(const LogStore& store,
                                                    std::span<const RenewalObservation> observations,
                                                    const MetricOptions& options) {
  using Metric = std::function<double(const CohortRecord&, const Window&)>;
  const std::vector<std::pair<std::string, Metric>> metrics = {
      {"live_watch_rate",
       [&](const CohortRecord& m, const Window& w) {
         return viewing_metrics(store, m.viewerId, m.vtuberId, w, options).liveWatchRate;
       }},
      {"on_time_rate",
       [&](const CohortRecord& m, const Window& w) {
         return viewing_metrics(store, m.viewerId, m.vtuberId, w, options).onTimeRate;
       }},
      {"live_watch_time",
       [&](const CohortRecord& m, const Window& w) {
         return viewing_metrics(store, m.viewerId, m.vtuberId, w, options).watchTimeProportion;
       }},
      {"chat_per_live",
       [&](const CohortRecord& m, const Window& w) {
         return chat_metrics(store, m.viewerId, m.vtuberId, w).chatsPerWatchedSession;
       }},
      {"gift_sc_count_vtb",
       [&](const CohortRecord& m, const Window& w) {
         return static_cast<double>(gift_metrics(store, m.viewerId, w, m.vtuberId).count);
       }},
  };
  std::vector<RenewalChiSquareRow> out;
  for (const auto& [name, metric] : metrics) {
    RenewalChiSquareRow row;
    row.metric = name;
    row.table.assign(3, std::vector<double>(2, 0.0));
    for (const auto& o : observations) {
      if (!o.observable) continue;
      const double early = metric(o.member, Window(o.member.anchorTs, kDeclineEarly));
      const double late = metric(o.member, Window(o.member.anchorTs, kDeclineLate));
      row.table[static_cast<std::size_t>(decline_category(early, late) + 1)][o.renewed ? 1 : 0] += 1.0;
    }
    std::vector<std::vector<double>> kept;
    for (int cat = -1; cat <= 1; ++cat) {
      const auto& t = row.table[static_cast<std::size_t>(cat + 1)];
      if (t[0] + t[1] > 0) {
        kept.push_back(t);
      } else {
        row.droppedCategories.push_back(cat);
      }
    }
    try {
      if (kept.size() >= 2) row.result = chi_square_independence(kept);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateTable) throw;
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string renewal_chi_square_json(std::span<const RenewalChiSquareRow> rows) {
  ordered_json j = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row;
    row["metric"] = r.metric;
    row["table"] = {{"decline", {{"notRenewed", r.table[0][0]}, {"renewed", r.table[0][1]}}},
                    {"noChange", {{"notRenewed", r.table[1][0]}, {"renewed", r.table[1][1]}}},
                    {"increase", {{"notRenewed", r.table[2][0]}, {"renewed", r.table[2][1]}}}};
    row["droppedCategories"] = r.droppedCategories;
    if (r.result) {
      row["statistic"] = r.result->statistic;
      row["dof"] = r.result->degreesOfFreedom;
      row["pValue"] = r.result->pValue;
    } else {
      row["statistic"] = nullptr;
      row["dof"] = nullptr;
      row["pValue"] = nullptr;
    }
    j.push_back(std::move(row));
  }
  return j.dump(2);
}

}  // namespace fanranker
