#include <gtest/gtest.h>

#include <sstream>

#include "fanranker/cohort.hpp"
#include "fanranker/metrics.hpp"
#include "fixtures.hpp"

using namespace fanranker;
using namespace fanranker::testing;

namespace {

// Streamer 1: A at T-10d and B at T-5d, one hour each; C after T.
// Streamer 2: D at T-3d. Viewer 5 is on time in A only.
LogStore small_store() {
  LogStore s;
  const EpochSeconds a = kT0 - 10 * kDay, b = kT0 - 5 * kDay, d = kT0 - 3 * kDay;
  s.add_session(make_session(1, "A", a, a + 3600));
  s.add_session(make_session(1, "B", b, b + 3600));
  s.add_session(make_session(1, "C", kT0 + kDay, kT0 + kDay + 3600));
  s.add_session(make_session(2, "D", d, d + 3600));
  s.append_event(enter(5, a + 100, "A"));
  s.append_event(chat(5, a + 1000, "A"));
  s.append_event(chat(5, a + 1900, "A"));
  s.append_event(gift(5, a + 1500, "A", 500));
  s.append_event(chat(5, b + 1200, "B"));
  s.append_event(chat(5, d + 60, "D"));
  s.append_event(gift(5, d + 70, "D", 300));
  s.append_event(chat(5, kT0 + kDay + 5, "C"));
  s.append_event(chat(6, a + 5, "A"));
  s.finalize();
  return s;
}

}  // namespace

TEST(Metrics, HandComputedWindow) {
  const LogStore s = small_store();
  const Window w(kT0, spans::kPre15);
  const auto v = viewing_metrics(s, ViewerId(5), StreamerId(1), w);
  EXPECT_EQ(v.sessionsInWindow, 2u);
  EXPECT_EQ(v.sessionsWatched, 2u);
  EXPECT_EQ(v.sessionsOnTime, 1u);
  EXPECT_FALSE(v.zeroSessions);
  EXPECT_DOUBLE_EQ(v.liveWatchRate, 1.0);
  EXPECT_DOUBLE_EQ(v.onTimeRate, 0.5);
  EXPECT_DOUBLE_EQ(v.watchTimeProportion, 1800.0 / 7200.0);

  const auto c = chat_metrics(s, ViewerId(5), StreamerId(1), w);
  EXPECT_EQ(c.totalChats, 4);
  EXPECT_EQ(c.chatsToVtuber, 3);
  EXPECT_DOUBLE_EQ(c.chatsPerWatchedSession, 1.5);

  const auto g = gift_metrics(s, ViewerId(5), w);
  EXPECT_EQ(g.count, 2);
  EXPECT_EQ(g.valueMinor, 800);
  EXPECT_DOUBLE_EQ(g.value_cny(), 8.0);
  const auto gv = gift_metrics(s, ViewerId(5), w, StreamerId(1));
  EXPECT_EQ(gv.count, 1);
  EXPECT_EQ(gv.valueMinor, 500);

  const auto p = platform_viewing_metrics(s, ViewerId(5), w);
  EXPECT_EQ(p.activeDays, 3u);
  EXPECT_EQ(p.sessionsWatched, 3u);
  EXPECT_EQ(p.streamersWatched, 2u);
}

TEST(Metrics, ExcludeDropsSessionEverywhere) {
  const LogStore s = small_store();
  const Window w(kT0, spans::kPre15);
  const SessionIndex a = *s.find_session("A");
  const auto v = viewing_metrics(s, ViewerId(5), StreamerId(1), w, {}, a);
  EXPECT_EQ(v.sessionsInWindow, 1u);
  EXPECT_EQ(v.sessionsOnTime, 0u);
  EXPECT_EQ(chat_metrics(s, ViewerId(5), StreamerId(1), w, a).totalChats, 2);
  EXPECT_EQ(gift_metrics(s, ViewerId(5), w, std::nullopt, a).valueMinor, 300);
  EXPECT_EQ(platform_viewing_metrics(s, ViewerId(5), w, {}, a).sessionsWatched, 2u);
}

TEST(Metrics, ZeroSessionsAndUnknownViewer) {
  const LogStore s = small_store();
  const Window w(kT0, spans::kPre45);
  const auto v = viewing_metrics(s, ViewerId(5), StreamerId(1), w);
  EXPECT_TRUE(v.zeroSessions);
  EXPECT_EQ(v.liveWatchRate, 0.0);
  const auto none = viewing_metrics(s, ViewerId(999), StreamerId(1), Window(kT0, spans::kPre15));
  EXPECT_EQ(none.sessionsWatched, 0u);
  EXPECT_EQ(none.sessionsInWindow, 2u);
  EXPECT_EQ(chat_metrics(s, ViewerId(999), StreamerId(1), Window(kT0, spans::kPre15)).chatsPerWatchedSession, 0.0);
}

TEST(Metrics, OnTimeThresholdIsInclusive) {
  LogStore s;
  s.add_session(make_session(1, "A", kT0, kT0 + 3600));
  s.add_session(make_session(1, "B", kT0 + kDay, kT0 + kDay + 3600));
  s.append_event(enter(5, kT0 + 600, "A"));
  s.append_event(enter(5, kT0 + kDay + 601, "B"));
  s.finalize();
  const auto v = viewing_metrics(s, ViewerId(5), StreamerId(1), Window(kT0 + 10 * kDay, -15, 0));
  EXPECT_EQ(v.sessionsOnTime, 1u);
  MetricOptions strict;
  strict.onTimeSeconds = 599;
  EXPECT_EQ(viewing_metrics(s, ViewerId(5), StreamerId(1), Window(kT0 + 10 * kDay, -15, 0), strict).sessionsOnTime, 0u);
}

TEST(Metrics, TimezoneShiftsDayBuckets) {
  LogStore s;
  s.add_session(make_session(1, "A", kT0 - 7200, kT0 + 7200));
  // kT0 is 22:13 UTC; one event before and one after UTC midnight.
  s.append_event(chat(5, kT0 - 3600, "A"));
  s.append_event(chat(5, kT0 + 7000, "A"));
  s.finalize();
  const Window w(kT0, -1, 1);
  EXPECT_EQ(platform_viewing_metrics(s, ViewerId(5), w).activeDays, 2u);
  MetricOptions tz;
  tz.tzOffsetSeconds = -6 * 3600;
  EXPECT_EQ(platform_viewing_metrics(s, ViewerId(5), w, tz).activeDays, 1u);
}

TEST(DailySeries, OneMember) {
  LogStore s;
  const EpochSeconds t = kT0;
  s.add_session(make_session(1, "P", t, t + 3600));
  s.add_session(make_session(1, "Q", t - kDay, t - kDay + 3600));
  s.append_event(chat(5, t - kDay + 10, "Q"));
  s.append_event(gift(5, t - kDay + 20, "Q", 100));
  s.append_event(membership(5, t + 10, "P"));
  s.finalize();
  CohortRecord m{ViewerId(5), StreamerId(1), "P", t, CohortLabel::Member};
  const std::vector<CohortRecord> members{m};
  const auto pts = daily_member_series(s, members);
  ASSERT_EQ(pts.size(), 91u);
  EXPECT_EQ(pts.front().dayOffset, -45);
  const auto& d1 = pts[45 - 1];
  EXPECT_EQ(d1.dayOffset, -1);
  EXPECT_DOUBLE_EQ(d1.meanLiveWatchRate, 1.0);
  EXPECT_DOUBLE_EQ(d1.meanOnTimeRate, 1.0);
  EXPECT_DOUBLE_EQ(d1.meanChatsPerLive, 1.0);
  EXPECT_DOUBLE_EQ(d1.pctAnyGiftSC, 1.0);
  EXPECT_DOUBLE_EQ(pts[45 - 2].meanLiveWatchRate, 0.0);
  const auto only_gift = daily_member_series(s, members, series::kAnyGiftSC);
  EXPECT_DOUBLE_EQ(only_gift[44].meanLiveWatchRate, 0.0);
  EXPECT_DOUBLE_EQ(only_gift[44].pctAnyGiftSC, 1.0);
  EXPECT_THROW(daily_member_series(s, std::vector<CohortRecord>{}), Error);
}

TEST(MetricRows, CsvShape) {
  const LogStore s = small_store();
  const std::vector<CohortRecord> recs{{ViewerId(5), StreamerId(1), "C", kT0 + kDay, CohortLabel::NonMember}};
  const std::vector<WindowTag> tags{WindowTag::TMinus15, WindowTag::Pre45};
  const auto rows = collect_metric_rows(s, recs, tags);
  EXPECT_FALSE(rows.empty());
  std::ostringstream out;
  write_metric_csv(out, rows);
  const std::string csv = out.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "viewerId,anchor,windowTag,metricName,value");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), std::ptrdiff_t(rows.size() + 1));
}
