#pragma once

// Live ranking of a session's viewers: historical features from the store,
// adjusted by live counters and a periodically recomputed live ChatSim.
// Also the batch ranking of a finalized session, which uses the same
// adjustment, and the service configuration.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "fanranker/chatsim.hpp"
#include "fanranker/core.hpp"
#include "fanranker/features.hpp"
#include "fanranker/ingestion.hpp"
#include "fanranker/models.hpp"

namespace fanranker {

inline constexpr std::string_view kServiceVersion = "1.0.0";

struct ServiceConfig {
  std::string bindAddress = "0.0.0.0";
  int port = 8080;
  std::filesystem::path modelPath;
  std::filesystem::path storePath;
  std::filesystem::path journalDir;  // empty disables persistence
  std::filesystem::path uiDir;       // static files for /ui/
  std::filesystem::path lexiconPath;
  std::filesystem::path embeddingCachePath;
  int rankingIntervalMs = 2000;
  int chatsimIntervalMs = 30000;
  std::size_t topN = 50;
  std::string bearerToken;  // empty disables auth
  int threads = 2;

  // key = value lines; '#' starts a comment. Throws InvalidConfig.
  static ServiceConfig parse(std::string_view text);
  static ServiceConfig load(const std::filesystem::path& path);
  void set(std::string_view key, std::string_view value);
  // FANRANKER_PORT, FANRANKER_MODEL, FANRANKER_STORE, FANRANKER_JOURNAL_DIR,
  // FANRANKER_UI_DIR, FANRANKER_RANKING_INTERVAL_MS, FANRANKER_CHATSIM_INTERVAL_MS,
  // FANRANKER_TOP_N, FANRANKER_TOKEN, FANRANKER_BIND, FANRANKER_THREADS,
  // FANRANKER_LEXICON, FANRANKER_EMBEDDING_CACHE.
  void apply_env(const std::function<const char*(const char*)>& getenv_fn);
  void validate() const;
};

struct LiveViewerStats {
  std::string uName;
  std::int64_t chats = 0;
  std::int64_t gifts = 0;           // GIFT + SUPERCHAT events
  std::int64_t giftValueMinor = 0;
  EpochSeconds firstTs = 0;
  EpochSeconds lastTs = 0;
  bool purchased = false;           // MEMBERSHIP for the session's streamer

  void observe(const InteractionEvent& e);
};

// Adds the live session's counts to the W2 count features (and the deltas
// derived from them) and folds the live ChatSim into the W2 average.
FeatureDetail adjust_for_live(const FeatureDetail& historical, const LiveViewerStats& live,
                              std::optional<double> live_chatsim);

struct LiveChat {
  EpochSeconds sendDate = 0;
  ViewerId viewer;
  std::string message;
};

// Per-viewer ChatSim against the environment of all given chats. Chats are
// put in (sendDate, viewer, message) order first, so the result does not
// depend on arrival order.
std::map<ViewerId, std::optional<double>> live_chatsim(std::vector<LiveChat> chats,
                                                       const EmbeddingProvider& provider);

struct RankingRow {
  ViewerId viewerId;
  std::string uName;
  double score = 0.0;
  std::size_t rank = 0;
  long deltaRank = 0;  // previous rank - current rank; 0 for new rows
  bool pinned = false;
  bool isNew = false;
};

struct RankingPush {
  SessionId sessionId;
  std::int64_t generatedAt = 0;  // ms since epoch, strictly increasing per session
  std::vector<RankingRow> rows;

  std::string to_json() const;
};

// Score descending, viewerId ascending on ties.
void sort_ranking(std::vector<RankingRow>& rows);

// Ranks the viewers of a finalized session exactly as the live service would
// after replaying all of its events. `extractor` must be built on `store`.
std::vector<RankingRow> batch_rank(const LogStore& store, SessionIndex session, const RankingModel& model,
                                   std::span<const FeatureColumn> columns, const FeatureExtractor& extractor);

struct EventAck {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  struct Rejection {
    std::size_t index;
    ErrorCode code;
    std::string message;
  };
  std::vector<Rejection> errors;

  std::string to_json() const;
};

struct LiveServiceOptions {
  int rankingIntervalMs = 2000;
  int chatsimIntervalMs = 30000;
  std::size_t topN = 50;
  EpochSeconds graceSeconds = kDefaultGraceSeconds;
  std::filesystem::path journalDir;
  // Injectable clock (ms since epoch) for tests.
  std::function<std::int64_t()> nowMs;
};

class LiveService {
 public:
  using Subscriber = std::function<void(const std::string& push_json)>;

  // Throws ManifestMismatch if the model columns are not the canonical ones.
  LiveService(const LogStore& history, std::shared_ptr<const RankingModel> model,
              std::vector<FeatureColumn> columns, std::shared_ptr<const FeatureExtractor> extractor,
              CodeMap codes, LiveServiceOptions options);
  ~LiveService();

  LiveService(const LiveService&) = delete;
  LiveService& operator=(const LiveService&) = delete;

  // Idempotent for an identical session; DuplicateSession otherwise.
  void register_session(const LiveSession& session);
  bool has_session(const SessionId& id) const;
  std::vector<SessionId> sessions() const;

  // Throws UnknownSession; bad events are rejected individually.
  EventAck ingest_events(const SessionId& id, std::span<const InteractionEvent> events);
  // JSONL or a JSON array of event objects.
  EventAck ingest_payload(const SessionId& id, std::string_view body);

  void pin(const SessionId& id, ViewerId viewer, bool on = true);
  void dismiss(const SessionId& id, ViewerId viewer, bool on = true);

  // Recomputed at most once per rankingIntervalMs; otherwise the last push.
  RankingPush current_ranking(const SessionId& id, std::optional<std::size_t> top = {});
  // Recomputes live ChatSim and the ranking now, notifying subscribers.
  RankingPush flush(const SessionId& id);
  // Every ranked viewer (not truncated to topN).
  std::vector<RankingRow> full_ranking(const SessionId& id);

  // Feature payload of a viewer in a session; throws UnknownSession, or
  // InvalidArgument for a viewer not yet seen in the session.
  std::string viewer_features_json(ViewerId viewer, const SessionId& id);

  std::size_t subscribe(const SessionId& id, Subscriber fn);
  void unsubscribe(std::size_t token);

  // Runs due ChatSim refreshes and ranking pushes.
  void tick();
  void start_scheduler();
  void stop();

  const RankingModel& model() const { return *model_; }
  std::uint64_t model_hash() const { return model_hash_; }

 private:
  struct ViewerState {
    LiveViewerStats stats;
    std::shared_ptr<const FeatureDetail> historical;
    std::optional<double> chatsim;
    double score = 0.0;
    bool dirty = true;
  };

  struct SessionState {
    LiveSession session;
    std::mutex mutex;
    std::map<ViewerId, ViewerState> viewers;
    std::vector<LiveChat> chats;
    std::set<ViewerId> pinned;
    std::set<ViewerId> dismissed;
    std::set<ViewerId> historicalMembers;  // bought before the session
    bool chatsDirty = false;
    bool rankingDirty = true;
    std::int64_t lastChatsimMs = 0;
    std::int64_t lastRankingMs = std::numeric_limits<std::int64_t>::min() / 2;
    std::int64_t lastGeneratedAt = 0;
    std::map<ViewerId, std::size_t> previousRanks;
    std::optional<RankingPush> lastPush;
    std::unique_ptr<std::ofstream> journal;
  };

  std::shared_ptr<SessionState> find(const SessionId& id) const;
  std::int64_t now() const;
  void journal(SessionState& s, const std::string& line);
  void replay_journals();
  void register_locked(const LiveSession& session, bool write_journal);
  EventAck ingest_locked(SessionState& s, std::span<const InteractionEvent> events, bool write_journal);
  void set_flag_locked(SessionState& s, ViewerId viewer, bool pin, bool on, bool write_journal);
  void refresh_chatsim_locked(SessionState& s);
  RankingPush recompute_locked(SessionState& s);
  std::vector<RankingRow> ranked_rows_locked(SessionState& s);
  void notify(const SessionId& id, const std::string& payload);

  const LogStore& history_;
  std::shared_ptr<const RankingModel> model_;
  std::vector<FeatureColumn> columns_;
  std::vector<std::size_t> projection_;
  std::uint64_t model_hash_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  CodeMap codes_;
  LiveServiceOptions options_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<SessionId, std::shared_ptr<SessionState>> sessions_;

  std::mutex subscribers_mutex_;
  std::size_t next_token_ = 1;
  std::map<std::size_t, std::pair<SessionId, Subscriber>> subscribers_;

  std::mutex scheduler_mutex_;
  std::condition_variable scheduler_cv_;
  bool stopping_ = false;
  std::thread scheduler_;
};

}  // namespace fanranker
