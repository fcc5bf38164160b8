#include "fanranker/ingestion.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fanranker {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

[[noreturn]] void malformed(const std::string& why) { throw Error(ErrorCode::MalformedRecord, why); }

const json& field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end()) malformed(std::string("missing field '") + name + "'");
  return *it;
}

std::int64_t int_field(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_number_integer()) malformed(std::string("field '") + name + "' is not an integer");
  if (v.is_number_unsigned()) {
    auto u = v.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      malformed(std::string("field '") + name + "' out of range");
    }
    return static_cast<std::int64_t>(u);
  }
  return v.get<std::int64_t>();
}

std::uint64_t id_field(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_number_integer()) malformed(std::string("field '") + name + "' is not an integer");
  if (v.is_number_unsigned()) {
    const auto u = v.get<std::uint64_t>();
    if (u == 0) malformed(std::string("field '") + name + "' must be non-zero");
    return u;
  }
  const auto s = v.get<std::int64_t>();
  if (s <= 0) malformed(std::string("field '") + name + "' must be positive");
  return static_cast<std::uint64_t>(s);
}

std::string string_field(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_string()) malformed(std::string("field '") + name + "' is not a string");
  return v.get<std::string>();
}

json parse_object(std::string_view line) {
  json j = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) malformed("invalid JSON");
  if (!j.is_object()) malformed("record is not a JSON object");
  return j;
}

bool blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; });
}

}  // namespace

// ---------------------------------------------------------------- CodeMap

CodeMap::CodeMap(std::map<std::int64_t, InteractionKind> codes) : codes_(std::move(codes)) {}

CodeMap CodeMap::defaults() {
  return CodeMap({{0, InteractionKind::Enter},
                  {1, InteractionKind::Chat},
                  {2, InteractionKind::Gift},
                  {3, InteractionKind::SuperChat},
                  {4, InteractionKind::Membership}});
}

CodeMap CodeMap::from_json(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::InvalidConfig, "codemap must be a JSON object");
  }
  std::map<std::int64_t, InteractionKind> codes;
  for (auto& [key, value] : j.items()) {
    std::int64_t code = 0;
    try {
      std::size_t used = 0;
      code = std::stoll(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "codemap key '" + key + "' is not an integer");
    }
    if (!value.is_string()) throw Error(ErrorCode::InvalidConfig, "codemap value must be a string");
    auto kind = parse_interaction_kind(value.get<std::string>());
    if (!kind) {
      throw Error(ErrorCode::InvalidConfig, "unknown interaction kind '" + value.get<std::string>() + "'");
    }
    codes.emplace(code, *kind);
  }
  return CodeMap(std::move(codes));
}

CodeMap CodeMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open codemap " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string CodeMap::to_json() const {
  ordered_json j = ordered_json::object();
  for (const auto& [code, kind] : codes_) j[std::to_string(code)] = std::string(to_string(kind));
  return j.dump();
}

std::optional<InteractionKind> CodeMap::kind_of(std::int64_t code) const {
  auto it = codes_.find(code);
  if (it == codes_.end()) return std::nullopt;
  return it->second;
}

std::int64_t CodeMap::code_of(InteractionKind kind) const {
  for (const auto& [code, k] : codes_) {
    if (k == kind) return code;
  }
  throw Error(ErrorCode::InvalidConfig,
              "codemap has no code for " + std::string(to_string(kind)));
}

// ---------------------------------------------------------------- records

LiveSession parse_session_line(std::string_view line) {
  const json j = parse_object(line);
  LiveSession s;
  s.uId = StreamerId(id_field(j, "uId"));
  s.uName = string_field(j, "uName");
  s.liveId = string_field(j, "liveId");
  if (s.liveId.empty()) malformed("liveId is empty");
  s.parentArea = string_field(j, "parentArea");
  s.area = string_field(j, "area");
  s.coverUrl = string_field(j, "coverUrl");
  s.startDate = int_field(j, "startDate");
  s.stopDate = int_field(j, "stopDate");
  s.title = string_field(j, "title");
  if (s.stopDate < s.startDate) {
    throw Error(ErrorCode::InvalidTimespan, "stopDate precedes startDate for " + s.liveId);
  }
  return s;
}

InteractionEvent parse_event_line(std::string_view line, const CodeMap& codes) {
  const json j = parse_object(line);
  InteractionEvent e;
  e.uId = ViewerId(id_field(j, "uId"));
  e.uName = string_field(j, "uName");
  const std::int64_t type = int_field(j, "type");
  e.sendDate = int_field(j, "sendDate");
  e.message = string_field(j, "message");
  e.price = int_field(j, "price");
  e.count = int_field(j, "count");
  e.sessionRef = string_field(j, "liveId");
  if (e.sessionRef.empty()) malformed("liveId is empty");
  if (e.count < 0) malformed("count is negative");

  auto kind = codes.kind_of(type);
  if (!kind) throw Error(ErrorCode::UnknownTypeCode, "type code " + std::to_string(type));
  e.kind = *kind;
  if (e.price < 0) throw Error(ErrorCode::NegativePrice, std::to_string(e.price));
  if (e.kind == InteractionKind::Chat && e.message.empty()) {
    throw Error(ErrorCode::EmptyChatMessage, "chat without message");
  }
  if (e.kind == InteractionKind::Membership && e.price <= 0) {
    throw Error(ErrorCode::NonPositiveMembershipPrice, "membership event without price");
  }
  return e;
}

std::string serialize_session_line(const LiveSession& s) {
  ordered_json j;
  j["uId"] = s.uId.value;
  j["uName"] = s.uName;
  j["liveId"] = s.liveId;
  j["parentArea"] = s.parentArea;
  j["area"] = s.area;
  j["coverUrl"] = s.coverUrl;
  j["startDate"] = s.startDate;
  j["stopDate"] = s.stopDate;
  j["title"] = s.title;
  return j.dump();
}

std::string serialize_event_line(const InteractionEvent& e, const CodeMap& codes) {
  ordered_json j;
  j["uId"] = e.uId.value;
  j["uName"] = e.uName;
  j["type"] = codes.code_of(e.kind);
  j["sendDate"] = e.sendDate;
  j["message"] = e.message;
  j["price"] = e.price;
  j["count"] = e.count;
  j["liveId"] = e.sessionRef;
  return j.dump();
}

// ---------------------------------------------------------------- LogStore

LogStore::LogStore(EpochSeconds grace_seconds) : grace_(grace_seconds) {}

SessionIndex LogStore::add_session(LiveSession session) {
  if (session.stopDate < session.startDate) {
    throw Error(ErrorCode::InvalidTimespan, "stopDate precedes startDate for " + session.liveId);
  }
  if (session_by_id_.count(session.liveId) != 0) {
    throw Error(ErrorCode::DuplicateSession, session.liveId);
  }
  const auto idx = static_cast<SessionIndex>(sessions_.size());
  session_by_id_.emplace(session.liveId, idx);
  max_duration_ = std::max(max_duration_, session_duration(session));
  sessions_.push_back(std::move(session));
  finalized_ = false;
  return idx;
}

void LogStore::append_event(InteractionEvent event) {
  auto it = session_by_id_.find(event.sessionRef);
  if (it == session_by_id_.end()) throw Error(ErrorCode::OrphanEvent, "unknown liveId " + event.sessionRef);
  const LiveSession& s = sessions_[it->second];
  if (event.sendDate < s.startDate - grace_ || event.sendDate > s.stopDate + grace_) {
    throw Error(ErrorCode::EventOutsideSession,
                "sendDate " + std::to_string(event.sendDate) + " outside session " + s.liveId);
  }
  events_.push_back(std::move(event));
  event_session_.push_back(it->second);
  finalized_ = false;
}

void LogStore::finalize() {
  // Stable sort of all events by (session, sendDate) keeps arrival order for
  // equal timestamps, so re-finalizing an already sorted log is a no-op.
  std::vector<EventIndex> order(events_.size());
  std::iota(order.begin(), order.end(), EventIndex{0});
  std::stable_sort(order.begin(), order.end(), [this](EventIndex a, EventIndex b) {
    if (event_session_[a] != event_session_[b]) return event_session_[a] < event_session_[b];
    return events_[a].sendDate < events_[b].sendDate;
  });
  std::vector<InteractionEvent> sorted_events;
  std::vector<SessionIndex> sorted_sessions;
  sorted_events.reserve(events_.size());
  sorted_sessions.reserve(events_.size());
  for (EventIndex i : order) {
    sorted_events.push_back(std::move(events_[i]));
    sorted_sessions.push_back(event_session_[i]);
  }
  events_ = std::move(sorted_events);
  event_session_ = std::move(sorted_sessions);

  session_ranges_.assign(sessions_.size(), {0, 0});
  {
    EventIndex pos = 0;
    for (SessionIndex s = 0; s < sessions_.size(); ++s) {
      const EventIndex begin = pos;
      while (pos < events_.size() && event_session_[pos] == s) ++pos;
      session_ranges_[s] = {begin, pos};
    }
  }

  streamer_index_.clear();
  for (SessionIndex s = 0; s < sessions_.size(); ++s) streamer_index_[sessions_[s].uId].push_back(s);
  for (auto& [streamer, list] : streamer_index_) {
    std::sort(list.begin(), list.end(), [this](SessionIndex a, SessionIndex b) {
      if (sessions_[a].startDate != sessions_[b].startDate) {
        return sessions_[a].startDate < sessions_[b].startDate;
      }
      return sessions_[a].liveId < sessions_[b].liveId;
    });
  }

  viewer_index_.clear();
  for (EventIndex i = 0; i < events_.size(); ++i) viewer_index_[events_[i].uId].events.push_back(i);
  for (auto& [viewer, entry] : viewer_index_) {
    // Events are already grouped by session and time-sorted within a session.
    std::vector<ViewerPosting> postings;
    for (EventIndex i : entry.events) {
      const SessionIndex s = event_session_[i];
      if (postings.empty() || postings.back().session != s) {
        postings.push_back({s, events_[i].sendDate, events_[i].sendDate});
      } else {
        postings.back().lastTs = std::max(postings.back().lastTs, events_[i].sendDate);
      }
    }
    std::sort(postings.begin(), postings.end(), [](const ViewerPosting& a, const ViewerPosting& b) {
      if (a.firstTs != b.firstTs) return a.firstTs < b.firstTs;
      return a.session < b.session;
    });
    entry.postings = std::move(postings);
    std::stable_sort(entry.events.begin(), entry.events.end(), [this](EventIndex a, EventIndex b) {
      return events_[a].sendDate < events_[b].sendDate;
    });
  }
  finalized_ = true;
}

void LogStore::require_finalized() const {
  if (!finalized_) throw Error(ErrorCode::InvalidArgument, "store is not finalized");
}

std::optional<SessionIndex> LogStore::find_session(std::string_view live_id) const {
  auto it = session_by_id_.find(std::string(live_id));
  if (it == session_by_id_.end()) return std::nullopt;
  return it->second;
}

std::span<const InteractionEvent> LogStore::session_events(SessionIndex idx) const {
  require_finalized();
  const auto [begin, end] = session_ranges_.at(idx);
  return std::span<const InteractionEvent>(events_).subspan(begin, end - begin);
}

std::span<const SessionIndex> LogStore::streamer_sessions(StreamerId streamer) const {
  require_finalized();
  auto it = streamer_index_.find(streamer);
  if (it == streamer_index_.end()) return {};
  return it->second;
}

std::span<const SessionIndex> LogStore::streamer_sessions_between(StreamerId streamer,
                                                                  EpochSeconds begin,
                                                                  EpochSeconds end) const {
  auto all = streamer_sessions(streamer);
  auto lo = std::lower_bound(all.begin(), all.end(), begin,
                             [this](SessionIndex s, EpochSeconds t) { return sessions_[s].startDate < t; });
  auto hi = std::lower_bound(lo, all.end(), end,
                             [this](SessionIndex s, EpochSeconds t) { return sessions_[s].startDate < t; });
  return all.subspan(static_cast<std::size_t>(lo - all.begin()), static_cast<std::size_t>(hi - lo));
}

std::vector<StreamerId> LogStore::streamers() const {
  require_finalized();
  std::vector<StreamerId> out;
  out.reserve(streamer_index_.size());
  for (const auto& [id, list] : streamer_index_) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

std::span<const ViewerPosting> LogStore::viewer_postings(ViewerId viewer) const {
  require_finalized();
  auto it = viewer_index_.find(viewer);
  if (it == viewer_index_.end()) return {};
  return it->second.postings;
}

std::span<const EventIndex> LogStore::viewer_events(ViewerId viewer) const {
  require_finalized();
  auto it = viewer_index_.find(viewer);
  if (it == viewer_index_.end()) return {};
  return it->second.events;
}

std::span<const EventIndex> LogStore::viewer_events_between(ViewerId viewer, EpochSeconds begin,
                                                            EpochSeconds end) const {
  auto all = viewer_events(viewer);
  auto lo = std::lower_bound(all.begin(), all.end(), begin,
                             [this](EventIndex i, EpochSeconds t) { return events_[i].sendDate < t; });
  auto hi = std::lower_bound(lo, all.end(), end,
                             [this](EventIndex i, EpochSeconds t) { return events_[i].sendDate < t; });
  return all.subspan(static_cast<std::size_t>(lo - all.begin()), static_cast<std::size_t>(hi - lo));
}

std::vector<ViewerId> LogStore::viewers() const {
  require_finalized();
  std::vector<ViewerId> out;
  out.reserve(viewer_index_.size());
  for (const auto& [id, entry] : viewer_index_) out.push_back(id);
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<std::pair<EpochSeconds, EpochSeconds>> LogStore::time_range() const {
  if (sessions_.empty()) return std::nullopt;
  EpochSeconds lo = sessions_.front().startDate;
  EpochSeconds hi = sessions_.front().stopDate;
  for (const auto& s : sessions_) {
    lo = std::min(lo, s.startDate);
    hi = std::max(hi, s.stopDate);
  }
  return std::make_pair(lo, hi);
}

std::vector<EventIndex> query_viewer_window(const LogStore& store, ViewerId viewer,
                                            const Window& window,
                                            std::optional<StreamerId> streamer_filter) {
  std::vector<EventIndex> out;
  for (EventIndex i : store.viewer_events_between(viewer, window.begin(), window.end())) {
    if (streamer_filter && store.session(store.session_of(i)).uId != *streamer_filter) continue;
    out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------- ingest

std::size_t IngestReport::rejected_count(ErrorCode code) const {
  auto it = rejectedByError.find(code);
  return it == rejectedByError.end() ? 0 : it->second;
}

std::string IngestReport::to_json() const {
  ordered_json j;
  j["inputLines"] = inputLines;
  j["accepted"] = accepted;
  j["rejected"] = rejected;
  j["sessionsAccepted"] = sessionsAccepted;
  j["eventsAccepted"] = eventsAccepted;
  ordered_json by = ordered_json::object();
  for (const auto& [code, n] : rejectedByError) by[std::string(to_string(code))] = n;
  j["rejectedByError"] = by;
  j["samples"] = samples;
  return j.dump(2);
}

IngestReport ingest_into(LogStore& store, std::istream& sessions, std::istream& events,
                         const CodeMap& codes, std::size_t max_error_samples) {
  IngestReport report;
  std::string line;
  auto reject = [&](const char* source, std::size_t line_no, const Error& e) {
    ++report.rejected;
    ++report.rejectedByError[e.code()];
    if (report.samples.size() < max_error_samples) {
      report.samples.push_back(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  };

  std::size_t line_no = 0;
  while (std::getline(sessions, line)) {
    ++line_no;
    if (blank(line)) continue;
    ++report.inputLines;
    try {
      store.add_session(parse_session_line(line));
      ++report.accepted;
      ++report.sessionsAccepted;
    } catch (const Error& e) {
      reject("sessions", line_no, e);
    }
  }
  line_no = 0;
  while (std::getline(events, line)) {
    ++line_no;
    if (blank(line)) continue;
    ++report.inputLines;
    try {
      store.append_event(parse_event_line(line, codes));
      ++report.accepted;
      ++report.eventsAccepted;
    } catch (const Error& e) {
      reject("events", line_no, e);
    }
  }
  store.finalize();
  return report;
}

IngestResult ingest(std::istream& sessions, std::istream& events, const CodeMap& codes,
                    const IngestOptions& options) {
  IngestResult result{LogStore(options.graceSeconds), {}};
  result.report = ingest_into(result.store, sessions, events, codes, options.maxErrorSamples);
  return result;
}

// ---------------------------------------------------------------- persistence

void save_store(const LogStore& store, const std::filesystem::path& dir, const CodeMap& codes) {
  if (!store.finalized()) throw Error(ErrorCode::InvalidArgument, "store must be finalized before saving");
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("STORE_VERSION");
    out << kStoreVersion << '\n';
  }
  {
    auto out = open("codemap.json");
    out << codes.to_json() << '\n';
  }
  {
    auto out = open("meta.json");
    ordered_json meta;
    meta["graceSeconds"] = store.grace_seconds();
    meta["sessions"] = store.session_count();
    meta["events"] = store.event_count();
    out << meta.dump() << '\n';
  }
  {
    auto out = open("sessions.jsonl");
    for (const auto& s : store.sessions()) out << serialize_session_line(s) << '\n';
  }
  {
    auto out = open("events.jsonl");
    for (const auto& e : store.events()) out << serialize_event_line(e, codes) << '\n';
  }
}

LogStore load_store(const std::filesystem::path& dir) {
  std::ifstream version(dir / "STORE_VERSION");
  std::string v;
  if (!version || !std::getline(version, v)) {
    throw Error(ErrorCode::IoError, "missing STORE_VERSION in " + dir.string());
  }
  if (v != kStoreVersion) throw Error(ErrorCode::IoError, "unsupported store version '" + v + "'");

  EpochSeconds grace = kDefaultGraceSeconds;
  {
    std::ifstream meta_in(dir / "meta.json");
    if (meta_in) {
      json meta = json::parse(meta_in, nullptr, false);
      if (!meta.is_discarded() && meta.contains("graceSeconds")) grace = meta["graceSeconds"].get<EpochSeconds>();
    }
  }
  const CodeMap codes = CodeMap::load(dir / "codemap.json");
  std::ifstream sessions(dir / "sessions.jsonl");
  std::ifstream events(dir / "events.jsonl");
  if (!sessions || !events) throw Error(ErrorCode::IoError, "store " + dir.string() + " is incomplete");
  LogStore store(grace);
  const IngestReport report = ingest_into(store, sessions, events, codes);
  if (report.rejected != 0) {
    throw Error(ErrorCode::IoError, "store " + dir.string() + " contains " +
                                        std::to_string(report.rejected) + " invalid records");
  }
  return store;
}

}  // namespace fanranker
