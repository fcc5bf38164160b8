#pragma once

// JSONL parsing/validation of session and interaction logs and the in-memory
// LogStore with per-streamer, per-session and per-viewer indexes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fanranker/core.hpp"

namespace fanranker {

using SessionIndex = std::uint32_t;
using EventIndex = std::uint32_t;

inline constexpr EpochSeconds kDefaultGraceSeconds = 600;
inline constexpr std::string_view kStoreVersion = "fanranker-store-1";

// Platform `type` code -> InteractionKind. The platform's codes are not
// documented, so the mapping is always supplied as data.
class CodeMap {
 public:
  CodeMap() = default;
  explicit CodeMap(std::map<std::int64_t, InteractionKind> codes);

  // {"0":"ENTER","1":"CHAT","2":"GIFT","3":"SUPERCHAT","4":"MEMBERSHIP"}
  static CodeMap defaults();
  static CodeMap from_json(std::string_view text);
  static CodeMap load(const std::filesystem::path& path);
  std::string to_json() const;

  std::optional<InteractionKind> kind_of(std::int64_t code) const;
  // Smallest code mapped to `kind`, used when serializing.
  std::int64_t code_of(InteractionKind kind) const;
  const std::map<std::int64_t, InteractionKind>& codes() const { return codes_; }

 private:
  std::map<std::int64_t, InteractionKind> codes_;
};

LiveSession parse_session_line(std::string_view line);
InteractionEvent parse_event_line(std::string_view line, const CodeMap& codes);

std::string serialize_session_line(const LiveSession& s);
std::string serialize_event_line(const InteractionEvent& e, const CodeMap& codes);

struct ViewerPosting {
  SessionIndex session = 0;
  EpochSeconds firstTs = 0;
  EpochSeconds lastTs = 0;

  friend bool operator==(const ViewerPosting&, const ViewerPosting&) = default;
};

class LogStore {
 public:
  explicit LogStore(EpochSeconds grace_seconds = kDefaultGraceSeconds);

  EpochSeconds grace_seconds() const { return grace_; }

  // Mutation. Any append un-finalizes the store.
  SessionIndex add_session(LiveSession session);
  void append_event(InteractionEvent event);
  // Sorts each session's events by sendDate (stable w.r.t. arrival) and
  // rebuilds every index from the raw log.
  void finalize();
  bool finalized() const { return finalized_; }

  std::size_t session_count() const { return sessions_.size(); }
  std::size_t event_count() const { return events_.size(); }

  const LiveSession& session(SessionIndex idx) const { return sessions_.at(idx); }
  std::span<const LiveSession> sessions() const { return sessions_; }
  std::optional<SessionIndex> find_session(std::string_view live_id) const;

  // All events, partitioned by session after finalization.
  std::span<const InteractionEvent> events() const { return events_; }
  const InteractionEvent& event(EventIndex idx) const { return events_[idx]; }
  SessionIndex session_of(EventIndex idx) const { return event_session_[idx]; }
  std::span<const InteractionEvent> session_events(SessionIndex idx) const;
  EventIndex session_first_event(SessionIndex idx) const { return session_ranges_[idx].first; }

  // Streamer's sessions ordered by (startDate, liveId).
  std::span<const SessionIndex> streamer_sessions(StreamerId streamer) const;
  // Subset whose startDate lies in [begin, end).
  std::span<const SessionIndex> streamer_sessions_between(StreamerId streamer, EpochSeconds begin,
                                                          EpochSeconds end) const;
  std::vector<StreamerId> streamers() const;

  // Viewer postings ordered by (firstTs, session).
  std::span<const ViewerPosting> viewer_postings(ViewerId viewer) const;
  // Viewer's events ordered by (sendDate, event index).
  std::span<const EventIndex> viewer_events(ViewerId viewer) const;
  // Viewer's events with sendDate in [begin, end).
  std::span<const EventIndex> viewer_events_between(ViewerId viewer, EpochSeconds begin,
                                                    EpochSeconds end) const;
  std::vector<ViewerId> viewers() const;

  // Longest session duration; bounds event sendDates of a session.
  EpochSeconds max_session_duration() const { return max_duration_; }

  // Earliest session start and latest session stop; nullopt when empty.
  std::optional<std::pair<EpochSeconds, EpochSeconds>> time_range() const;

 private:
  void require_finalized() const;

  struct ViewerEntry {
    std::vector<EventIndex> events;
    std::vector<ViewerPosting> postings;
  };

  EpochSeconds grace_;
  bool finalized_ = true;
  EpochSeconds max_duration_ = 0;
  std::vector<LiveSession> sessions_;
  std::unordered_map<std::string, SessionIndex> session_by_id_;
  std::vector<InteractionEvent> events_;
  std::vector<SessionIndex> event_session_;
  std::vector<std::pair<EventIndex, EventIndex>> session_ranges_;
  std::unordered_map<StreamerId, std::vector<SessionIndex>> streamer_index_;
  std::unordered_map<ViewerId, ViewerEntry> viewer_index_;
};

// Viewer events in the window, optionally restricted to one streamer's
// sessions, ordered by sendDate. Unknown viewers yield an empty result.
std::vector<EventIndex> query_viewer_window(const LogStore& store, ViewerId viewer,
                                            const Window& window,
                                            std::optional<StreamerId> streamer_filter = {});

struct IngestReport {
  std::size_t inputLines = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t sessionsAccepted = 0;
  std::size_t eventsAccepted = 0;
  std::map<ErrorCode, std::size_t> rejectedByError;
  // First few rejection messages, for operator diagnostics.
  std::vector<std::string> samples;

  std::size_t rejected_count(ErrorCode code) const;
  std::string to_json() const;
};

struct IngestOptions {
  EpochSeconds graceSeconds = kDefaultGraceSeconds;
  std::size_t maxErrorSamples = 20;
};

// Streams both inputs line by line. Blank lines are skipped and not counted;
// every other line is either accepted or rejected with one error class.
IngestReport ingest_into(LogStore& store, std::istream& sessions, std::istream& events,
                         const CodeMap& codes, std::size_t max_error_samples = 20);

struct IngestResult {
  LogStore store;
  IngestReport report;
};

IngestResult ingest(std::istream& sessions, std::istream& events, const CodeMap& codes,
                    const IngestOptions& options = {});

// Store directory: STORE_VERSION, codemap.json, sessions.jsonl, events.jsonl
// (canonical order, default-code serialization) and meta.json.
void save_store(const LogStore& store, const std::filesystem::path& dir,
                const CodeMap& codes = CodeMap::defaults());
LogStore load_store(const std::filesystem::path& dir);

}  // namespace fanranker
