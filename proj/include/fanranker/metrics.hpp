#pragma once

// Activity metrics for a (viewer, anchor, window) triple, targeted at one
// streamer or platform-wide, plus the daily member time series.
//
// Two attribution rules are used throughout:
//  * Streamer-targeted viewing/chat metrics look at the streamer's sessions
//    whose startDate lies in the window, and at every event the viewer sent
//    in those sessions.
//  * Platform-wide counts (chats, gifts, active days, sessions, streamers)
//    and per-streamer gift counts look at the viewer's events whose sendDate
//    lies in the window.
// `exclude` drops one session (the anchor session) from every metric.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fanranker/cohort.hpp"
#include "fanranker/core.hpp"
#include "fanranker/ingestion.hpp"

namespace fanranker {

inline constexpr EpochSeconds kOnTimeSeconds = 600;

struct MetricOptions {
  // A first event at most this many seconds after the session start is on time.
  EpochSeconds onTimeSeconds = kOnTimeSeconds;
  // Offset added to timestamps before bucketing into calendar days.
  EpochSeconds tzOffsetSeconds = 0;
};

struct ViewingMetrics {
  double liveWatchRate = 0.0;
  double onTimeRate = 0.0;
  double watchTimeProportion = 0.0;
  std::size_t sessionsInWindow = 0;
  std::size_t sessionsWatched = 0;
  std::size_t sessionsOnTime = 0;
  // Streamer had no session in the window; all rates are 0.
  bool zeroSessions = false;
};

ViewingMetrics viewing_metrics(const LogStore& store, ViewerId viewer, StreamerId vtuber,
                               const Window& window, const MetricOptions& options = {},
                               std::optional<SessionIndex> exclude = {});

struct ChatMetrics {
  std::int64_t totalChats = 0;           // platform-wide, by sendDate
  std::int64_t chatsToVtuber = 0;        // in the streamer's in-window sessions
  std::size_t sessionsWatched = 0;
  double chatsPerWatchedSession = 0.0;   // chatsToVtuber / sessionsWatched
};

ChatMetrics chat_metrics(const LogStore& store, ViewerId viewer, StreamerId vtuber, const Window& window,
                         std::optional<SessionIndex> exclude = {});

struct GiftMetrics {
  std::int64_t count = 0;
  std::int64_t valueMinor = 0;  // CNY minor units
  double value_cny() const { return static_cast<double>(valueMinor) / 100.0; }
};

// GIFT and SUPERCHAT events; restricted to the streamer's sessions if given.
GiftMetrics gift_metrics(const LogStore& store, ViewerId viewer, const Window& window,
                         std::optional<StreamerId> vtuber = {}, std::optional<SessionIndex> exclude = {});

struct PlatformViewingMetrics {
  std::size_t activeDays = 0;
  std::size_t sessionsWatched = 0;
  std::size_t streamersWatched = 0;
};

PlatformViewingMetrics platform_viewing_metrics(const LogStore& store, ViewerId viewer, const Window& window,
                                                const MetricOptions& options = {},
                                                std::optional<SessionIndex> exclude = {});

// Daily aggregate over members for dayOffset in [-45, 45].
struct DailySeriesPoint {
  int dayOffset = 0;
  double meanLiveWatchRate = 0.0;
  double meanOnTimeRate = 0.0;
  double meanWatchTime = 0.0;
  double meanChatsPerLive = 0.0;
  double pctAnyGiftSC = 0.0;
};

namespace series {
inline constexpr unsigned kLiveWatchRate = 1u << 0;
inline constexpr unsigned kOnTimeRate = 1u << 1;
inline constexpr unsigned kWatchTime = 1u << 2;
inline constexpr unsigned kChatsPerLive = 1u << 3;
inline constexpr unsigned kAnyGiftSC = 1u << 4;
inline constexpr unsigned kAll = 0x1f;
}  // namespace series

inline constexpr int kSeriesHalfSpanDays = 45;

// Unselected metrics are left at 0. Throws EmptyCohort for no members.
std::vector<DailySeriesPoint> daily_member_series(const LogStore& store, std::span<const CohortRecord> members,
                                                  unsigned selector = series::kAll,
                                                  const MetricOptions& options = {});

struct MetricRow {
  ViewerId viewerId;
  EpochSeconds anchor = 0;
  WindowTag windowTag = WindowTag::Pre45;
  std::string metricName;
  double value = 0.0;
};

// Every metric of this module for each record and window tag.
std::vector<MetricRow> collect_metric_rows(const LogStore& store, std::span<const CohortRecord> records,
                                           std::span<const WindowTag> tags, const MetricOptions& options = {});

// CSV columns: viewerId,anchor,windowTag,metricName,value
void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows);
void write_series_csv(std::ostream& out, std::span<const DailySeriesPoint> points);

}  // namespace fanranker
