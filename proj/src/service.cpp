#include "fanranker/service.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fanranker/digest.hpp"
#include "fanranker/evaluation.hpp"

namespace fanranker {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------- config

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_int(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be an integer, got '" + std::string(value) + "'");
  }
  return out;
}

}  // namespace

void ServiceConfig::set(std::string_view key, std::string_view value) {
  if (key == "bind") {
    bindAddress = std::string(value);
  } else if (key == "port") {
    port = parse_int<int>(key, value);
  } else if (key == "model") {
    modelPath = std::string(value);
  } else if (key == "store") {
    storePath = std::string(value);
  } else if (key == "journal_dir") {
    journalDir = std::string(value);
  } else if (key == "ui_dir") {
    uiDir = std::string(value);
  } else if (key == "lexicon") {
    lexiconPath = std::string(value);
  } else if (key == "embedding_cache") {
    embeddingCachePath = std::string(value);
  } else if (key == "ranking_interval_ms") {
    rankingIntervalMs = parse_int<int>(key, value);
  } else if (key == "chatsim_interval_ms") {
    chatsimIntervalMs = parse_int<int>(key, value);
  } else if (key == "top_n") {
    topN = parse_int<std::size_t>(key, value);
  } else if (key == "token") {
    bearerToken = std::string(value);
  } else if (key == "threads") {
    threads = parse_int<int>(key, value);
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown config key " + std::string(key));
  }
}

ServiceConfig ServiceConfig::parse(std::string_view text) {
  ServiceConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::InvalidConfig, "config line " + std::to_string(line_no) + " has no '='");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void ServiceConfig::apply_env(const std::function<const char*(const char*)>& getenv_fn) {
  static constexpr std::pair<const char*, const char*> kVars[] = {
      {"FANRANKER_BIND", "bind"},
      {"FANRANKER_PORT", "port"},
      {"FANRANKER_MODEL", "model"},
      {"FANRANKER_STORE", "store"},
      {"FANRANKER_JOURNAL_DIR", "journal_dir"},
      {"FANRANKER_UI_DIR", "ui_dir"},
      {"FANRANKER_LEXICON", "lexicon"},
      {"FANRANKER_EMBEDDING_CACHE", "embedding_cache"},
      {"FANRANKER_RANKING_INTERVAL_MS", "ranking_interval_ms"},
      {"FANRANKER_CHATSIM_INTERVAL_MS", "chatsim_interval_ms"},
      {"FANRANKER_TOP_N", "top_n"},
      {"FANRANKER_TOKEN", "token"},
      {"FANRANKER_THREADS", "threads"},
  };
  for (auto [var, key] : kVars) {
    if (const char* v = getenv_fn(var)) set(key, v);
  }
}

void ServiceConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidConfig, what);
  };
  require(port >= 0 && port <= 65535, "port must be in [0, 65535]");
  require(!modelPath.empty(), "model path is required");
  require(!storePath.empty(), "store path is required");
  require(rankingIntervalMs >= 0, "ranking_interval_ms must be >= 0");
  require(chatsimIntervalMs >= 0, "chatsim_interval_ms must be >= 0");
  require(topN >= 1, "top_n must be >= 1");
  require(threads >= 1, "threads must be >= 1");
}

// ---------------------------------------------------------------- scoring

void LiveViewerStats::observe(const InteractionEvent& e) {
  if (uName.empty()) uName = e.uName;
  if (chats + gifts == 0 && firstTs == 0 && lastTs == 0) {
    firstTs = lastTs = e.sendDate;
  } else {
    firstTs = std::min(firstTs, e.sendDate);
    lastTs = std::max(lastTs, e.sendDate);
  }
  switch (e.kind) {
    case InteractionKind::Chat: ++chats; break;
    case InteractionKind::Gift:
    case InteractionKind::SuperChat:
      ++gifts;
      giftValueMinor += e.price;
      break;
    case InteractionKind::Membership: purchased = true; break;
    case InteractionKind::Enter: break;
  }
}

FeatureDetail adjust_for_live(const FeatureDetail& historical, const LiveViewerStats& live,
                              std::optional<double> live_chatsim) {
  FeatureDetail d = historical;
  auto& w2 = d.w2.base;
  const double value = static_cast<double>(live.giftValueMinor) / 100.0;
  w2[static_cast<std::size_t>(BaseFeature::ChatSent)] += static_cast<double>(live.chats);
  w2[static_cast<std::size_t>(BaseFeature::GiftScCount)] += static_cast<double>(live.gifts);
  w2[static_cast<std::size_t>(BaseFeature::GiftScValue)] += value;
  w2[static_cast<std::size_t>(BaseFeature::GiftScCountVtb)] += static_cast<double>(live.gifts);
  w2[static_cast<std::size_t>(BaseFeature::GiftScValueVtb)] += value;
  if (live_chatsim) {
    d.w2.chatsim.sum += *live_chatsim;
    ++d.w2.chatsim.definedSessions;
    d.w2.chatsim.average = d.w2.chatsim.sum / static_cast<double>(d.w2.chatsim.definedSessions);
    w2[static_cast<std::size_t>(BaseFeature::ChatSimAvg)] = *d.w2.chatsim.average;
  }
  d.values = assemble_vector(d.d0, d.w1, d.w2);
  return d;
}

std::map<ViewerId, std::optional<double>> live_chatsim(std::vector<LiveChat> chats,
                                                       const EmbeddingProvider& provider) {
  std::sort(chats.begin(), chats.end(), [](const LiveChat& a, const LiveChat& b) {
    if (a.sendDate != b.sendDate) return a.sendDate < b.sendDate;
    if (a.viewer != b.viewer) return a.viewer < b.viewer;
    return a.message < b.message;
  });
  std::map<ViewerId, std::optional<double>> out;
  if (chats.empty()) return out;
  std::vector<Embedding> all;
  all.reserve(chats.size());
  std::map<ViewerId, std::vector<Embedding>> mine;
  for (const auto& c : chats) {
    all.push_back(provider.embed(c.message));
    mine[c.viewer].push_back(all.back());
  }
  const SessionEnvironment env = session_environment_from_embeddings("live", all);
  for (const auto& [viewer, vectors] : mine) out[viewer] = chatsim_from_embeddings(vectors, env);
  return out;
}

void sort_ranking(std::vector<RankingRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const RankingRow& a, const RankingRow& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.viewerId < b.viewerId;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = i;
}

namespace {

// Bought a membership for the streamer in a session that started before `ts`.
bool bought_before(const LogStore& store, ViewerId viewer, StreamerId vtuber, EpochSeconds ts) {
  for (EventIndex i : store.viewer_events(viewer)) {
    const auto& e = store.event(i);
    if (e.kind != InteractionKind::Membership) continue;
    const auto& s = store.session(store.session_of(i));
    if (s.uId == vtuber && s.startDate < ts) return true;
  }
  return false;
}

double score_projected(const RankingModel& model, std::span<const std::size_t> projection,
                       std::span<const double> canonical) {
  std::vector<double> x(projection.size());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = canonical[projection[j]];
  return model.predict_score(x);
}

}  // namespace

std::vector<RankingRow> batch_rank(const LogStore& store, SessionIndex session, const RankingModel& model,
                                   std::span<const FeatureColumn> columns, const FeatureExtractor& extractor) {
  const auto projection = column_projection(columns);
  if (projection.size() != model.width()) throw Error(ErrorCode::ManifestMismatch, "model width differs from manifest");
  const LiveSession& s = store.session(session);
  std::map<ViewerId, LiveViewerStats> stats;
  std::vector<LiveChat> chats;
  for (const auto& e : store.session_events(session)) {
    stats[e.uId].observe(e);
    if (e.kind == InteractionKind::Chat) chats.push_back({e.sendDate, e.uId, e.message});
  }
  const auto sims = live_chatsim(std::move(chats), extractor.chatsim().provider());
  std::vector<RankingRow> rows;
  for (const auto& [viewer, st] : stats) {
    if (st.purchased || bought_before(store, viewer, s.uId, s.startDate)) continue;
    const FeatureDetail hist = extractor.detail_at(viewer, s.uId, s.startDate, session);
    auto it = sims.find(viewer);
    const FeatureDetail adj = adjust_for_live(hist, st, it == sims.end() ? std::nullopt : it->second);
    RankingRow row;
    row.viewerId = viewer;
    row.uName = st.uName;
    row.score = score_projected(model, projection, adj.values);
    rows.push_back(std::move(row));
  }
  sort_ranking(rows);
  return rows;
}

std::string RankingPush::to_json() const {
  ordered_json j;
  j["sessionId"] = sessionId;
  j["generatedAt"] = generatedAt;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"viewerId", r.viewerId.value},
                         {"uName", r.uName},
                         {"score", r.score},
                         {"rank", r.rank},
                         {"deltaRank", r.deltaRank},
                         {"pinned", r.pinned},
                         {"isNew", r.isNew}});
  }
  return j.dump();
}

std::string EventAck::to_json() const {
  ordered_json j;
  j["accepted"] = accepted;
  j["rejected"] = rejected;
  j["errors"] = ordered_json::array();
  for (const auto& e : errors) {
    j["errors"].push_back({{"index", e.index}, {"code", to_string(e.code)}, {"message", e.message}});
  }
  return j.dump();
}

// ---------------------------------------------------------------- service

namespace {

std::string journal_name(const SessionId& id) { return to_hex(sha256(id)).substr(0, 24) + ".jsonl"; }

ordered_json session_json(const LiveSession& s) { return ordered_json::parse(serialize_session_line(s)); }

void check_event(const InteractionEvent& e, const LiveSession& s, EpochSeconds grace) {
  if (e.sessionRef != s.liveId) throw Error(ErrorCode::MalformedRecord, "event belongs to session " + e.sessionRef);
  if (!e.uId.valid()) throw Error(ErrorCode::MalformedRecord, "uId must be positive");
  if (e.price < 0) throw Error(ErrorCode::NegativePrice, std::to_string(e.price));
  if (e.count < 0) throw Error(ErrorCode::MalformedRecord, "count is negative");
  if (e.kind == InteractionKind::Chat && e.message.empty()) throw Error(ErrorCode::EmptyChatMessage, "chat without message");
  if (e.kind == InteractionKind::Membership && e.price <= 0) {
    throw Error(ErrorCode::NonPositiveMembershipPrice, "membership event without price");
  }
  const bool open = s.stopDate <= s.startDate;
  if (e.sendDate < s.startDate - grace || (!open && e.sendDate > s.stopDate + grace)) {
    throw Error(ErrorCode::EventOutsideSession, "sendDate " + std::to_string(e.sendDate) + " outside " + s.liveId);
  }
}

}  // namespace

LiveService::LiveService(const LogStore& history, std::shared_ptr<const RankingModel> model,
                         std::vector<FeatureColumn> columns, std::shared_ptr<const FeatureExtractor> extractor,
                         CodeMap codes, LiveServiceOptions options)
    : history_(history),
      model_(std::move(model)),
      columns_(std::move(columns)),
      model_hash_(manifest_hash(columns_)),
      extractor_(std::move(extractor)),
      codes_(std::move(codes)),
      options_(std::move(options)) {
  if (!model_ || !model_->fitted()) throw Error(ErrorCode::NotFitted, "service needs a fitted model");
  if (!extractor_) throw Error(ErrorCode::InvalidArgument, "service needs a feature extractor");
  if (columns_ != feature_columns()) {
    throw Error(ErrorCode::ManifestMismatch, "model manifest has " + std::to_string(columns_.size()) +
                                                 " columns; the live pipeline produces the " +
                                                 std::to_string(kFeatureWidth) + " canonical columns");
  }
  projection_ = column_projection(columns_);
  if (projection_.size() != model_->width()) throw Error(ErrorCode::ManifestMismatch, "model width differs");
  if (!options_.journalDir.empty()) {
    std::filesystem::create_directories(options_.journalDir);
    replay_journals();
  }
}

LiveService::~LiveService() { stop(); }

std::int64_t LiveService::now() const {
  if (options_.nowMs) return options_.nowMs();
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::shared_ptr<LiveService::SessionState> LiveService::find(const SessionId& id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, id);
  return it->second;
}

bool LiveService::has_session(const SessionId& id) const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.count(id) != 0;
}

std::vector<SessionId> LiveService::sessions() const {
  std::shared_lock lock(sessions_mutex_);
  std::vector<SessionId> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

void LiveService::journal(SessionState& s, const std::string& line) {
  if (!s.journal) return;
  *s.journal << line << '\n';
  s.journal->flush();
  if (!*s.journal) throw Error(ErrorCode::IoError, "journal write failed for " + s.session.liveId);
}

void LiveService::register_session(const LiveSession& session) { register_locked(session, true); }

void LiveService::register_locked(const LiveSession& session, bool write_journal) {
  if (session.liveId.empty()) throw Error(ErrorCode::MalformedRecord, "liveId is empty");
  if (!session.uId.valid()) throw Error(ErrorCode::MalformedRecord, "uId must be positive");
  std::unique_lock lock(sessions_mutex_);
  if (auto it = sessions_.find(session.liveId); it != sessions_.end()) {
    if (it->second->session == session) return;
    throw Error(ErrorCode::DuplicateSession, session.liveId);
  }
  if (history_.find_session(session.liveId)) {
    throw Error(ErrorCode::DuplicateSession, session.liveId + " is already in the historical store");
  }
  auto state = std::make_shared<SessionState>();
  state->session = session;
  if (!options_.journalDir.empty()) {
    const auto path = options_.journalDir / journal_name(session.liveId);
    const bool fresh = write_journal;
    state->journal = std::make_unique<std::ofstream>(path, fresh ? std::ios::trunc : std::ios::app);
    if (!*state->journal) throw Error(ErrorCode::IoError, "cannot open journal " + path.string());
    if (fresh) {
      ordered_json j;
      j["op"] = "register";
      j["session"] = session_json(session);
      journal(*state, j.dump());
    }
  }
  sessions_.emplace(session.liveId, std::move(state));
}

EventAck LiveService::ingest_events(const SessionId& id, std::span<const InteractionEvent> events) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return ingest_locked(*s, events, true);
}

EventAck LiveService::ingest_locked(SessionState& s, std::span<const InteractionEvent> events, bool write_journal) {
  EventAck ack;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const InteractionEvent& e = events[i];
    try {
      check_event(e, s.session, options_.graceSeconds);
    } catch (const Error& err) {
      ++ack.rejected;
      ack.errors.push_back({i, err.code(), err.what()});
      continue;
    }
    if (write_journal && s.journal) {
      ordered_json j;
      j["op"] = "event";
      j["event"] = ordered_json::parse(serialize_event_line(e, codes_));
      journal(s, j.dump());
    }
    auto [it, inserted] = s.viewers.try_emplace(e.uId);
    ViewerState& v = it->second;
    if (inserted && bought_before(history_, e.uId, s.session.uId, s.session.startDate)) {
      s.historicalMembers.insert(e.uId);
    }
    v.stats.observe(e);
    v.dirty = true;
    if (e.kind == InteractionKind::Chat) {
      s.chats.push_back({e.sendDate, e.uId, e.message});
      s.chatsDirty = true;
    }
    s.rankingDirty = true;
    ++ack.accepted;
  }
  return ack;
}

EventAck LiveService::ingest_payload(const SessionId& id, std::string_view body) {
  auto s = find(id);
  std::vector<std::string> lines;
  std::string_view trimmed = trim(body);
  if (!trimmed.empty() && trimmed.front() == '[') {
    json arr = json::parse(trimmed.begin(), trimmed.end(), nullptr, false);
    if (arr.is_discarded() || !arr.is_array()) throw Error(ErrorCode::MalformedRecord, "body is not a JSON array");
    for (const auto& e : arr) lines.push_back(e.dump());
  } else {
    std::size_t begin = 0;
    while (begin <= body.size()) {
      const auto nl = body.find('\n', begin);
      std::string_view line = trim(body.substr(begin, nl == std::string_view::npos ? std::string_view::npos : nl - begin));
      if (!line.empty()) lines.emplace_back(line);
      if (nl == std::string_view::npos) break;
      begin = nl + 1;
    }
  }
  EventAck ack;
  std::vector<InteractionEvent> parsed;
  std::vector<std::size_t> position;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      parsed.push_back(parse_event_line(lines[i], codes_));
      position.push_back(i);
    } catch (const Error& err) {
      ++ack.rejected;
      ack.errors.push_back({i, err.code(), err.what()});
    }
  }
  EventAck inner;
  {
    std::lock_guard lock(s->mutex);
    inner = ingest_locked(*s, parsed, true);
  }
  ack.accepted = inner.accepted;
  ack.rejected += inner.rejected;
  for (auto& e : inner.errors) ack.errors.push_back({position[e.index], e.code, std::move(e.message)});
  std::sort(ack.errors.begin(), ack.errors.end(),
            [](const EventAck::Rejection& a, const EventAck::Rejection& b) { return a.index < b.index; });
  return ack;
}

void LiveService::set_flag_locked(SessionState& s, ViewerId viewer, bool pin, bool on, bool write_journal) {
  auto& set = pin ? s.pinned : s.dismissed;
  if (on) {
    set.insert(viewer);
  } else {
    set.erase(viewer);
  }
  s.rankingDirty = true;
  if (write_journal) {
    ordered_json j;
    j["op"] = pin ? "pin" : "dismiss";
    j["viewerId"] = viewer.value;
    j["on"] = on;
    journal(s, j.dump());
  }
}

void LiveService::pin(const SessionId& id, ViewerId viewer, bool on) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  set_flag_locked(*s, viewer, true, on, true);
}

void LiveService::dismiss(const SessionId& id, ViewerId viewer, bool on) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  set_flag_locked(*s, viewer, false, on, true);
}

void LiveService::refresh_chatsim_locked(SessionState& s) {
  const auto sims = live_chatsim(s.chats, extractor_->chatsim().provider());
  for (auto& [viewer, v] : s.viewers) {
    auto it = sims.find(viewer);
    const std::optional<double> sim = it == sims.end() ? std::nullopt : it->second;
    if (sim != v.chatsim) {
      v.chatsim = sim;
      v.dirty = true;
      s.rankingDirty = true;
    }
  }
  s.chatsDirty = false;
  s.lastChatsimMs = now();
}

std::vector<RankingRow> LiveService::ranked_rows_locked(SessionState& s) {
  std::vector<RankingRow> rows;
  for (auto& [viewer, v] : s.viewers) {
    if (v.stats.purchased || s.historicalMembers.count(viewer) || s.dismissed.count(viewer)) continue;
    if (!v.historical) {
      v.historical = std::make_shared<const FeatureDetail>(
          extractor_->detail_at(viewer, s.session.uId, s.session.startDate, std::nullopt));
    }
    if (v.dirty) {
      const FeatureDetail adj = adjust_for_live(*v.historical, v.stats, v.chatsim);
      v.score = score_projected(*model_, projection_, adj.values);
      v.dirty = false;
    }
    RankingRow row;
    row.viewerId = viewer;
    row.uName = v.stats.uName;
    row.score = v.score;
    row.pinned = s.pinned.count(viewer) != 0;
    rows.push_back(std::move(row));
  }
  sort_ranking(rows);
  return rows;
}

RankingPush LiveService::recompute_locked(SessionState& s) {
  RankingPush push;
  push.sessionId = s.session.liveId;
  push.rows = ranked_rows_locked(s);
  std::map<ViewerId, std::size_t> ranks;
  for (auto& r : push.rows) {
    auto it = s.previousRanks.find(r.viewerId);
    if (it == s.previousRanks.end()) {
      r.isNew = true;
    } else {
      r.deltaRank = static_cast<long>(it->second) - static_cast<long>(r.rank);
    }
    ranks[r.viewerId] = r.rank;
  }
  s.previousRanks = std::move(ranks);
  const std::int64_t t = now();
  push.generatedAt = std::max(t, s.lastGeneratedAt + 1);
  s.lastGeneratedAt = push.generatedAt;
  s.lastRankingMs = t;
  s.rankingDirty = false;
  s.lastPush = push;
  return push;
}

namespace {

RankingPush truncate(const RankingPush& full, std::size_t top) {
  RankingPush out;
  out.sessionId = full.sessionId;
  out.generatedAt = full.generatedAt;
  for (const auto& r : full.rows) {
    if (r.rank < top || r.pinned) out.rows.push_back(r);
  }
  return out;
}

}  // namespace

RankingPush LiveService::current_ranking(const SessionId& id, std::optional<std::size_t> top) {
  auto s = find(id);
  std::optional<std::string> payload;
  RankingPush out;
  {
    std::lock_guard lock(s->mutex);
    const bool due = now() - s->lastRankingMs >= options_.rankingIntervalMs;
    if (!s->lastPush || (s->rankingDirty && due)) {
      const RankingPush full = recompute_locked(*s);
      payload = truncate(full, options_.topN).to_json();
    }
    out = truncate(*s->lastPush, top.value_or(options_.topN));
  }
  if (payload) notify(id, *payload);
  return out;
}

RankingPush LiveService::flush(const SessionId& id) {
  auto s = find(id);
  RankingPush out;
  std::string payload;
  {
    std::lock_guard lock(s->mutex);
    refresh_chatsim_locked(*s);
    const RankingPush full = recompute_locked(*s);
    payload = truncate(full, options_.topN).to_json();
    out = truncate(full, options_.topN);
  }
  notify(id, payload);
  return out;
}

std::vector<RankingRow> LiveService::full_ranking(const SessionId& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  return ranked_rows_locked(*s);
}

std::string LiveService::viewer_features_json(ViewerId viewer, const SessionId& id) {
  auto s = find(id);
  std::lock_guard lock(s->mutex);
  auto it = s->viewers.find(viewer);
  if (it == s->viewers.end()) {
    throw Error(ErrorCode::InvalidArgument, "viewer " + std::to_string(viewer.value) + " not yet seen in " + id);
  }
  ViewerState& v = it->second;
  if (!v.historical) {
    v.historical = std::make_shared<const FeatureDetail>(
        extractor_->detail_at(viewer, s->session.uId, s->session.startDate, std::nullopt));
  }
  const FeatureDetail adj = adjust_for_live(*v.historical, v.stats, v.chatsim);
  ordered_json j = ordered_json::parse(feature_detail_json(adj, columns_));
  j["sessionId"] = id;
  j["uName"] = v.stats.uName;
  j["score"] = score_projected(*model_, projection_, adj.values);
  j["live"] = {{"chats", v.stats.chats},
               {"gifts", v.stats.gifts},
               {"giftValue", static_cast<double>(v.stats.giftValueMinor) / 100.0},
               {"chatsim", v.chatsim ? ordered_json(*v.chatsim) : ordered_json(nullptr)},
               {"firstTs", v.stats.firstTs},
               {"lastTs", v.stats.lastTs}};
  j["toxicity"] = {{"sexual", adj.values[column_w2(BaseFeature::Sexual)] != 0 ||
                                  adj.values[column_w1(BaseFeature::Sexual)] != 0},
                   {"harassment", adj.values[column_w2(BaseFeature::Harassment)] != 0 ||
                                      adj.values[column_w1(BaseFeature::Harassment)] != 0},
                   {"violence", adj.values[column_w2(BaseFeature::Violence)] != 0 ||
                                    adj.values[column_w1(BaseFeature::Violence)] != 0}};
  j["pinned"] = s->pinned.count(viewer) != 0;
  j["dismissed"] = s->dismissed.count(viewer) != 0;
  return j.dump();
}

std::size_t LiveService::subscribe(const SessionId& id, Subscriber fn) {
  find(id);
  std::lock_guard lock(subscribers_mutex_);
  const std::size_t token = next_token_++;
  subscribers_.emplace(token, std::make_pair(id, std::move(fn)));
  return token;
}

void LiveService::unsubscribe(std::size_t token) {
  std::lock_guard lock(subscribers_mutex_);
  subscribers_.erase(token);
}

void LiveService::notify(const SessionId& id, const std::string& payload) {
  std::vector<Subscriber> targets;
  {
    std::lock_guard lock(subscribers_mutex_);
    for (const auto& [token, sub] : subscribers_) {
      if (sub.first == id) targets.push_back(sub.second);
    }
  }
  for (const auto& fn : targets) fn(payload);
}

void LiveService::tick() {
  std::vector<std::shared_ptr<SessionState>> all;
  {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  for (const auto& s : all) {
    std::optional<std::string> payload;
    {
      std::lock_guard lock(s->mutex);
      const std::int64_t t = now();
      if (s->chatsDirty && t - s->lastChatsimMs >= options_.chatsimIntervalMs) refresh_chatsim_locked(*s);
      if (s->rankingDirty && t - s->lastRankingMs >= options_.rankingIntervalMs) {
        payload = truncate(recompute_locked(*s), options_.topN).to_json();
      }
    }
    if (payload) notify(s->session.liveId, *payload);
  }
}

void LiveService::start_scheduler() {
  std::lock_guard lock(scheduler_mutex_);
  if (scheduler_.joinable()) return;
  stopping_ = false;
  scheduler_ = std::thread([this] {
    const auto period = std::chrono::milliseconds(std::clamp(options_.rankingIntervalMs / 4, 10, 250));
    std::unique_lock lock(scheduler_mutex_);
    while (!stopping_) {
      lock.unlock();
      try {
        tick();
      } catch (const std::exception&) {
        // A failing tick must not stop the scheduler; the next tick retries.
      }
      lock.lock();
      scheduler_cv_.wait_for(lock, period, [this] { return stopping_; });
    }
  });
}

void LiveService::stop() {
  {
    std::lock_guard lock(scheduler_mutex_);
    stopping_ = true;
  }
  scheduler_cv_.notify_all();
  if (scheduler_.joinable()) scheduler_.join();
}

void LiveService::replay_journals() {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(options_.journalDir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    std::string line;
    std::shared_ptr<SessionState> s;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("op")) {
        throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + " bad journal line");
      }
      const std::string op = j["op"].get<std::string>();
      if (op == "register") {
        register_locked(parse_session_line(j["session"].dump()), false);
        s = find(j["session"]["liveId"].get<std::string>());
        continue;
      }
      if (!s) throw Error(ErrorCode::MalformedRecord, path.string() + " does not start with a register op");
      std::lock_guard lock(s->mutex);
      if (op == "event") {
        const InteractionEvent e = parse_event_line(j["event"].dump(), codes_);
        ingest_locked(*s, std::span<const InteractionEvent>(&e, 1), false);
      } else if (op == "pin" || op == "dismiss") {
        set_flag_locked(*s, ViewerId(j["viewerId"].get<std::uint64_t>()), op == "pin", j.value("on", true), false);
      } else {
        throw Error(ErrorCode::MalformedRecord, path.string() + ": unknown journal op " + op);
      }
    }
  }
}

}  // namespace fanranker
