#include "fanranker/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <set>
#include <unordered_map>

namespace fanranker {

namespace {

bool excluded(std::optional<SessionIndex> exclude, SessionIndex s) { return exclude && *exclude == s; }

// The streamer's in-window sessions (by startDate), minus `exclude`.
struct TargetSessions {
  std::size_t count = 0;
  EpochSeconds totalDuration = 0;
};

TargetSessions target_sessions(const LogStore& store, StreamerId vtuber, const Window& w,
                               std::optional<SessionIndex> exclude) {
  TargetSessions t;
  for (SessionIndex s : store.streamer_sessions_between(vtuber, w.begin(), w.end())) {
    if (excluded(exclude, s)) continue;
    ++t.count;
    t.totalDuration += session_duration(store.session(s));
  }
  return t;
}

bool is_target(const LogStore& store, SessionIndex s, StreamerId vtuber, const Window& w,
               std::optional<SessionIndex> exclude) {
  if (excluded(exclude, s)) return false;
  const LiveSession& session = store.session(s);
  return session.uId == vtuber && w.contains(session.startDate);
}

// Viewer events that can belong to a session starting inside the window.
std::span<const EventIndex> candidate_events(const LogStore& store, ViewerId viewer, const Window& w) {
  const EpochSeconds slack = store.grace_seconds();
  return store.viewer_events_between(viewer, w.begin() - slack, w.end() + store.max_session_duration() + slack + 1);
}

}  // namespace

ViewingMetrics viewing_metrics(const LogStore& store, ViewerId viewer, StreamerId vtuber, const Window& window,
                               const MetricOptions& options, std::optional<SessionIndex> exclude) {
  ViewingMetrics m;
  const TargetSessions targets = target_sessions(store, vtuber, window, exclude);
  m.sessionsInWindow = targets.count;
  if (targets.count == 0) {
    m.zeroSessions = true;
    return m;
  }
  EpochSeconds watched_seconds = 0;
  for (const ViewerPosting& p : store.viewer_postings(viewer)) {
    if (!is_target(store, p.session, vtuber, window, exclude)) continue;
    const LiveSession& s = store.session(p.session);
    ++m.sessionsWatched;
    if (p.firstTs - s.startDate <= options.onTimeSeconds) ++m.sessionsOnTime;
    watched_seconds += std::clamp<EpochSeconds>(p.lastTs - p.firstTs, 0, session_duration(s));
  }
  m.liveWatchRate = static_cast<double>(m.sessionsWatched) / static_cast<double>(targets.count);
  m.onTimeRate = m.sessionsWatched == 0
                     ? 0.0
                     : static_cast<double>(m.sessionsOnTime) / static_cast<double>(m.sessionsWatched);
  m.watchTimeProportion = targets.totalDuration == 0 ? 0.0
                                                     : static_cast<double>(watched_seconds) /
                                                           static_cast<double>(targets.totalDuration);
  return m;
}

ChatMetrics chat_metrics(const LogStore& store, ViewerId viewer, StreamerId vtuber, const Window& window,
                         std::optional<SessionIndex> exclude) {
  ChatMetrics m;
  for (EventIndex i : store.viewer_events_between(viewer, window.begin(), window.end())) {
    if (store.event(i).kind == InteractionKind::Chat && !excluded(exclude, store.session_of(i))) ++m.totalChats;
  }
  for (const ViewerPosting& p : store.viewer_postings(viewer)) {
    if (is_target(store, p.session, vtuber, window, exclude)) ++m.sessionsWatched;
  }
  for (EventIndex i : candidate_events(store, viewer, window)) {
    if (store.event(i).kind != InteractionKind::Chat) continue;
    if (is_target(store, store.session_of(i), vtuber, window, exclude)) ++m.chatsToVtuber;
  }
  m.chatsPerWatchedSession = m.sessionsWatched == 0 ? 0.0
                                                    : static_cast<double>(m.chatsToVtuber) /
                                                          static_cast<double>(m.sessionsWatched);
  return m;
}

GiftMetrics gift_metrics(const LogStore& store, ViewerId viewer, const Window& window,
                         std::optional<StreamerId> vtuber, std::optional<SessionIndex> exclude) {
  GiftMetrics m;
  for (EventIndex i : store.viewer_events_between(viewer, window.begin(), window.end())) {
    const InteractionEvent& e = store.event(i);
    if (!is_gift_or_superchat(e.kind)) continue;
    const SessionIndex s = store.session_of(i);
    if (excluded(exclude, s)) continue;
    if (vtuber && store.session(s).uId != *vtuber) continue;
    ++m.count;
    m.valueMinor += e.price;
  }
  return m;
}

PlatformViewingMetrics platform_viewing_metrics(const LogStore& store, ViewerId viewer, const Window& window,
                                                const MetricOptions& options,
                                                std::optional<SessionIndex> exclude) {
  std::set<std::int64_t> days;
  std::set<SessionIndex> sessions;
  std::set<StreamerId> streamers;
  for (EventIndex i : store.viewer_events_between(viewer, window.begin(), window.end())) {
    const SessionIndex s = store.session_of(i);
    if (excluded(exclude, s)) continue;
    days.insert(floor_div(store.event(i).sendDate + options.tzOffsetSeconds, kSecondsPerDay));
    if (sessions.insert(s).second) streamers.insert(store.session(s).uId);
  }
  return {days.size(), sessions.size(), streamers.size()};
}

std::vector<DailySeriesPoint> daily_member_series(const LogStore& store, std::span<const CohortRecord> members,
                                                  unsigned selector, const MetricOptions& options) {
  if (members.empty()) throw Error(ErrorCode::EmptyCohort, "daily series needs at least one member");
  const bool viewing = (selector & (series::kLiveWatchRate | series::kOnTimeRate | series::kWatchTime)) != 0;
  std::vector<DailySeriesPoint> out;
  out.reserve(2 * kSeriesHalfSpanDays + 1);
  const double n = static_cast<double>(members.size());
  for (int d = -kSeriesHalfSpanDays; d <= kSeriesHalfSpanDays; ++d) {
    DailySeriesPoint p;
    p.dayOffset = d;
    std::size_t any_gift = 0;
    for (const CohortRecord& r : members) {
      const Window w(r.anchorTs, d, d + 1);
      if (viewing) {
        const ViewingMetrics v = viewing_metrics(store, r.viewerId, r.vtuberId, w, options);
        p.meanLiveWatchRate += v.liveWatchRate;
        p.meanOnTimeRate += v.onTimeRate;
        p.meanWatchTime += v.watchTimeProportion;
      }
      if (selector & series::kChatsPerLive) {
        p.meanChatsPerLive += chat_metrics(store, r.viewerId, r.vtuberId, w).chatsPerWatchedSession;
      }
      if ((selector & series::kAnyGiftSC) && gift_metrics(store, r.viewerId, w, r.vtuberId).count > 0) {
        ++any_gift;
      }
    }
    if (!(selector & series::kLiveWatchRate)) p.meanLiveWatchRate = 0.0;
    if (!(selector & series::kOnTimeRate)) p.meanOnTimeRate = 0.0;
    if (!(selector & series::kWatchTime)) p.meanWatchTime = 0.0;
    p.meanLiveWatchRate /= n;
    p.meanOnTimeRate /= n;
    p.meanWatchTime /= n;
    p.meanChatsPerLive /= n;
    p.pctAnyGiftSC = static_cast<double>(any_gift) / n;
    out.push_back(p);
  }
  return out;
}

std::vector<MetricRow> collect_metric_rows(const LogStore& store, std::span<const CohortRecord> records,
                                           std::span<const WindowTag> tags, const MetricOptions& options) {
  std::vector<MetricRow> rows;
  for (const CohortRecord& r : records) {
    for (WindowTag tag : tags) {
      const Window w(r.anchorTs, span_of(tag));
      auto add = [&](const char* name, double value) {
        rows.push_back({r.viewerId, r.anchorTs, tag, name, value});
      };
      const ViewingMetrics v = viewing_metrics(store, r.viewerId, r.vtuberId, w, options);
      add("liveWatchRate", v.liveWatchRate);
      add("onTimeRate", v.onTimeRate);
      add("watchTimeProportion", v.watchTimeProportion);
      const ChatMetrics c = chat_metrics(store, r.viewerId, r.vtuberId, w);
      add("totalChats", static_cast<double>(c.totalChats));
      add("chatsPerWatchedSession", c.chatsPerWatchedSession);
      const GiftMetrics g = gift_metrics(store, r.viewerId, w);
      add("giftCount", static_cast<double>(g.count));
      add("giftValueCny", g.value_cny());
      const GiftMetrics gv = gift_metrics(store, r.viewerId, w, r.vtuberId);
      add("giftCountToVtuber", static_cast<double>(gv.count));
      add("giftValueCnyToVtuber", gv.value_cny());
      const PlatformViewingMetrics pv = platform_viewing_metrics(store, r.viewerId, w, options);
      add("activeDays", static_cast<double>(pv.activeDays));
      add("sessionsWatched", static_cast<double>(pv.sessionsWatched));
      add("streamersWatched", static_cast<double>(pv.streamersWatched));
    }
  }
  return rows;
}

void write_metric_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "viewerId,anchor,windowTag,metricName,value\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    out << r.viewerId.value << ',' << r.anchor << ',' << to_string(r.windowTag) << ',' << r.metricName << ','
        << buf << '\n';
  }
}

void write_series_csv(std::ostream& out, std::span<const DailySeriesPoint> points) {
  out << "dayOffset,meanLiveWatchRate,meanOnTimeRate,meanWatchTime,meanChatsPerLive,pctAnyGiftSC\n";
  char buf[256];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.dayOffset, p.meanLiveWatchRate,
                  p.meanOnTimeRate, p.meanWatchTime, p.meanChatsPerLive, p.pctAnyGiftSC);
    out << buf;
  }
}

}  // namespace fanranker
