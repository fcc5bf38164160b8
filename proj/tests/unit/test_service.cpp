#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <nlohmann/json.hpp>

#include "fanranker/cli.hpp"
#include "fanranker/evaluation.hpp"
#include "fanranker/service.hpp"
#include "fixtures.hpp"

using namespace fanranker;
using namespace fanranker::testing;

namespace {

// Historical store: streamer 1 streamed at T-5d. Viewer 7 bought a
// membership there; viewer 3 chatted twice.
LogStore history_store() {
  LogStore s;
  const EpochSeconds h = kT0 - 5 * kDay;
  s.add_session(make_session(1, "h1", h, h + 3600));
  s.append_event(membership(7, h + 5, "h1"));
  s.append_event(chat(3, h + 10, "h1", "old words"));
  s.append_event(chat(3, h + 20, "h1", "old words"));
  s.finalize();
  return s;
}

// Score is 0.01 per W2 chat.
std::shared_ptr<const RankingModel> chat_model() {
  std::vector<double> w(kFeatureWidth, 0.0);
  w[column_w2(BaseFeature::ChatSent)] = 0.01;
  return std::make_shared<LinearRegressionModel>(LinearRegressionModel::from_coefficients(w, 0.0));
}

struct Harness {
  explicit Harness(LiveServiceOptions o = {}, std::filesystem::path journal = {}) : history(history_store()) {
    pipeline = make_pipeline(history, {});
    o.journalDir = journal;
    if (!o.nowMs) o.nowMs = [this] { return now.load(); };
    options = o;
    service = std::make_unique<LiveService>(history, chat_model(), feature_columns(), pipeline.extractor,
                                            CodeMap::defaults(), options);
  }

  LogStore history;
  Pipeline pipeline;
  LiveServiceOptions options;
  std::atomic<std::int64_t> now{1000};
  std::unique_ptr<LiveService> service;
};

const LiveSession kLive = make_session(1, "live", kT0, kT0);  // still open

std::vector<InteractionEvent> chats_by(std::uint64_t viewer, int n, EpochSeconds at = kT0 + 100) {
  std::vector<InteractionEvent> out;
  for (int i = 0; i < n; ++i) out.push_back(chat(viewer, at + i, "live", "msg " + std::to_string(i)));
  return out;
}

std::vector<std::uint64_t> ids(const RankingPush& p) {
  std::vector<std::uint64_t> out;
  for (const auto& r : p.rows) out.push_back(r.viewerId.value);
  return out;
}

}  // namespace

TEST(ServiceConfig, ParseEnvValidate) {
  const auto c = ServiceConfig::parse(
      "# comment\nport = 9000\nmodel=/m.frm\nstore = /s\n\ntop_n=10 # trailing\ntoken= abc\n");
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.modelPath, "/m.frm");
  EXPECT_EQ(c.topN, 10u);
  EXPECT_EQ(c.bearerToken, "abc");
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(ServiceConfig::parse("colour = blue\n"), Error);
  EXPECT_THROW(ServiceConfig::parse("port = many\n"), Error);
  EXPECT_THROW(ServiceConfig::parse("just words\n"), Error);
  EXPECT_THROW(ServiceConfig{}.validate(), Error);

  ServiceConfig e = c;
  e.apply_env([](const char* name) -> const char* {
    if (std::string(name) == "FANRANKER_PORT") return "7001";
    if (std::string(name) == "FANRANKER_TOKEN") return "env";
    return nullptr;
  });
  EXPECT_EQ(e.port, 7001);
  EXPECT_EQ(e.bearerToken, "env");
  EXPECT_EQ(e.modelPath, c.modelPath);
}

TEST(AdjustForLive, AddsCountsAndFoldsChatSim) {
  FeatureDetail h;
  h.w2.base[static_cast<std::size_t>(BaseFeature::ChatSent)] = 3;
  h.w2.chatsim.sum = 1.0;
  h.w2.chatsim.definedSessions = 2;
  h.w2.chatsim.average = 0.5;
  h.d0.base[static_cast<std::size_t>(BaseFeature::GiftScCountVtb)] = 1;
  h.values = assemble_vector(h.d0, h.w1, h.w2);
  LiveViewerStats live;
  live.observe(chat(1, 10, "s"));
  live.observe(gift(1, 11, "s", 250));
  live.observe(gift(1, 12, "s", 250));
  const auto d = adjust_for_live(h, live, 0.8);
  EXPECT_EQ(d.values[column_w2(BaseFeature::ChatSent)], 4);
  EXPECT_EQ(d.values[column_w2(BaseFeature::GiftScCount)], 2);
  EXPECT_DOUBLE_EQ(d.values[column_w2(BaseFeature::GiftScValueVtb)], 5.0);
  EXPECT_DOUBLE_EQ(d.values[column_delta(BaseFeature::GiftScCountVtb)], 1.0);
  EXPECT_DOUBLE_EQ(d.values[column_w2(BaseFeature::ChatSimAvg)], 1.8 / 3.0);
  EXPECT_EQ(d.values[kColumnChatSimPresentW2], 1.0);
  const auto same = adjust_for_live(h, LiveViewerStats{}, std::nullopt);
  EXPECT_EQ(same.values, h.values);
  EXPECT_EQ(live.firstTs, 10);
  EXPECT_EQ(live.lastTs, 12);
}

TEST(SortRanking, ScoreThenViewerId) {
  std::vector<RankingRow> rows(4);
  rows[0].viewerId = ViewerId(9), rows[0].score = 0.5;
  rows[1].viewerId = ViewerId(2), rows[1].score = 0.5;
  rows[2].viewerId = ViewerId(5), rows[2].score = 0.9;
  rows[3].viewerId = ViewerId(1), rows[3].score = 0.1;
  sort_ranking(rows);
  EXPECT_EQ(rows[0].viewerId, ViewerId(5));
  EXPECT_EQ(rows[1].viewerId, ViewerId(2));
  EXPECT_EQ(rows[2].viewerId, ViewerId(9));
}

TEST(LiveService, RanksAndExcludesMembers) {
  Harness h;
  h.service->register_session(kLive);
  EXPECT_NO_THROW(h.service->register_session(kLive));
  auto other = kLive;
  other.title = "changed";
  EXPECT_THROW(h.service->register_session(other), Error);
  EXPECT_THROW(h.service->register_session(make_session(1, "h1", kT0, kT0)), Error);

  std::vector<InteractionEvent> ev;
  for (auto [v, n] : std::vector<std::pair<std::uint64_t, int>>{{1, 3}, {2, 5}, {3, 1}, {7, 9}, {8, 7}}) {
    auto c = chats_by(v, n);
    ev.insert(ev.end(), c.begin(), c.end());
  }
  ev.push_back(membership(8, kT0 + 500, "live"));
  const auto ack = h.service->ingest_events("live", ev);
  EXPECT_EQ(ack.accepted, ev.size());
  const auto push = h.service->flush("live");
  // 7 bought before, 8 buys now. Viewer 3 has 2 historical W2 chats plus 1 live.
  EXPECT_EQ(ids(push), (std::vector<std::uint64_t>{2, 1, 3}));
  EXPECT_DOUBLE_EQ(push.rows[0].score, 0.05);
  EXPECT_TRUE(push.rows[0].isNew);
  for (std::size_t i = 0; i < push.rows.size(); ++i) EXPECT_EQ(push.rows[i].rank, i);
  // Viewers 1 and 3 tie at 0.03; lower id first.
  EXPECT_DOUBLE_EQ(push.rows[1].score, push.rows[2].score);
  EXPECT_EQ(h.service->full_ranking("live").size(), 3u);
}

TEST(LiveService, PinDismissAndDeltas) {
  LiveServiceOptions o;
  o.topN = 2;
  Harness h(o);
  h.service->register_session(kLive);
  for (std::uint64_t v = 11; v <= 14; ++v) h.service->ingest_events("live", chats_by(v, int(v - 10)));
  auto p = h.service->flush("live");
  EXPECT_EQ(ids(p), (std::vector<std::uint64_t>{14, 13}));

  h.service->pin("live", ViewerId(11));
  h.service->dismiss("live", ViewerId(14));
  h.now += 10;
  p = h.service->flush("live");
  EXPECT_EQ(ids(p), (std::vector<std::uint64_t>{13, 12, 11}));
  EXPECT_TRUE(p.rows[2].pinned);
  EXPECT_EQ(p.rows[2].rank, 2u);
  EXPECT_EQ(p.rows[0].deltaRank, 1);  // 1 -> 0
  EXPECT_FALSE(p.rows[0].isNew);

  h.service->dismiss("live", ViewerId(14), false);
  h.service->pin("live", ViewerId(11), false);
  p = h.service->flush("live");
  EXPECT_EQ(ids(p), (std::vector<std::uint64_t>{14, 13}));
  EXPECT_EQ(p.rows[0].deltaRank, 0);
  EXPECT_THROW(h.service->pin("nope", ViewerId(11)), Error);
}

TEST(LiveService, ThrottlingAndMonotonicTimestamps) {
  LiveServiceOptions o;
  o.rankingIntervalMs = 100;
  Harness h(o);
  h.service->register_session(kLive);
  h.service->ingest_events("live", chats_by(1, 1));
  const auto first = h.service->current_ranking("live");
  EXPECT_EQ(first.rows.size(), 1u);
  h.service->ingest_events("live", chats_by(2, 2));
  h.now += 50;
  EXPECT_EQ(h.service->current_ranking("live").generatedAt, first.generatedAt);
  h.now += 60;
  const auto second = h.service->current_ranking("live");
  EXPECT_EQ(second.rows.size(), 2u);
  EXPECT_GT(second.generatedAt, first.generatedAt);
  // A frozen clock still yields strictly increasing timestamps.
  const auto a = h.service->flush("live");
  const auto b = h.service->flush("live");
  EXPECT_GT(b.generatedAt, a.generatedAt);
  EXPECT_EQ(h.service->current_ranking("live", 1).rows.size(), 1u);
}

TEST(LiveService, SubscribersReceivePushes) {
  Harness h;
  h.service->register_session(kLive);
  std::vector<std::string> got;
  const auto token = h.service->subscribe("live", [&](const std::string& s) { got.push_back(s); });
  h.service->ingest_events("live", chats_by(1, 2));
  h.service->flush("live");
  ASSERT_EQ(got.size(), 1u);
  const auto j = nlohmann::json::parse(got[0]);
  EXPECT_EQ(j["sessionId"], "live");
  EXPECT_EQ(j["rows"][0]["viewerId"], 1);
  h.service->unsubscribe(token);
  h.service->flush("live");
  EXPECT_EQ(got.size(), 1u);
  EXPECT_THROW(h.service->subscribe("nope", [](const std::string&) {}), Error);
}

TEST(LiveService, RejectsBadEventsIndividually) {
  Harness h;
  h.service->register_session(make_session(1, "closed", kT0, kT0 + 3600));
  std::vector<InteractionEvent> ev{chat(1, kT0 + 10, "closed"),
                                   chat(1, kT0 + 3600 + 601, "closed"),  // past stop + grace
                                   chat(1, kT0 + 20, "elsewhere"),
                                   make_event(0, InteractionKind::Enter, kT0 + 30, "closed"),
                                   chat(2, kT0 + 40, "closed")};
  ev[4].message.clear();
  const auto ack = h.service->ingest_events("closed", ev);
  EXPECT_EQ(ack.accepted, 1u);
  EXPECT_EQ(ack.rejected, 4u);
  ASSERT_EQ(ack.errors.size(), 4u);
  EXPECT_EQ(ack.errors[0].index, 1u);
  EXPECT_EQ(ack.errors[0].code, ErrorCode::EventOutsideSession);
  EXPECT_EQ(ack.errors[3].code, ErrorCode::EmptyChatMessage);

  const std::string body = serialize_event_line(chat(3, kT0 + 50, "closed"), CodeMap::defaults()) + "\n{bad\n";
  const auto a2 = h.service->ingest_payload("closed", body);
  EXPECT_EQ(a2.accepted, 1u);
  EXPECT_EQ(a2.errors.at(0).index, 1u);
  EXPECT_EQ(a2.errors.at(0).code, ErrorCode::MalformedRecord);
  const std::string arr = "[" + serialize_event_line(chat(4, kT0 + 60, "closed"), CodeMap::defaults()) + "]";
  EXPECT_EQ(h.service->ingest_payload("closed", arr).accepted, 1u);
  EXPECT_NE(a2.to_json().find("MalformedRecord"), std::string::npos);
  EXPECT_THROW(h.service->ingest_events("nope", ev), Error);
}

TEST(LiveService, ViewerFeatures) {
  Harness h;
  h.service->register_session(kLive);
  h.service->ingest_events("live", chats_by(3, 2));
  const auto j = nlohmann::json::parse(h.service->viewer_features_json(ViewerId(3), "live"));
  EXPECT_EQ(j["sessionId"], "live");
  EXPECT_EQ(j["live"]["chats"], 2);
  EXPECT_DOUBLE_EQ(j["score"].get<double>(), 0.04);
  try {
    h.service->viewer_features_json(ViewerId(99), "live");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
  EXPECT_THROW(h.service->viewer_features_json(ViewerId(3), "nope"), Error);
}

TEST(LiveService, JournalReplayRestoresState) {
  TempDir dir("journal");
  RankingPush before;
  {
    Harness h({}, dir.path());
    h.service->register_session(kLive);
    for (std::uint64_t v = 1; v <= 5; ++v) h.service->ingest_events("live", chats_by(v, int(6 - v)));
    h.service->pin("live", ViewerId(5));
    h.service->dismiss("live", ViewerId(1));
    before = h.service->flush("live");
  }
  Harness again({}, dir.path());
  ASSERT_TRUE(again.service->has_session("live"));
  const auto after = again.service->flush("live");
  EXPECT_EQ(ids(after), ids(before));
  ASSERT_EQ(after.rows.size(), before.rows.size());
  for (std::size_t i = 0; i < after.rows.size(); ++i) {
    EXPECT_EQ(after.rows[i].score, before.rows[i].score);
    EXPECT_EQ(after.rows[i].pinned, before.rows[i].pinned);
  }
}

TEST(LiveService, RefusesNonCanonicalModel) {
  const LogStore history = history_store();
  const Pipeline p = make_pipeline(history, {});
  const auto cols = ablated_columns();
  auto m = std::make_shared<LinearRegressionModel>(
      LinearRegressionModel::from_coefficients(std::vector<double>(cols.size(), 0.0), 0.0));
  EXPECT_THROW(LiveService(history, m, cols, p.extractor, CodeMap::defaults(), {}), Error);
}

TEST(LiveService, SchedulerPushesWithoutFlush) {
  LiveServiceOptions o;
  o.rankingIntervalMs = 20;
  o.nowMs = [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
  Harness h(o);
  h.service->register_session(kLive);
  std::atomic<int> pushes{0};
  h.service->subscribe("live", [&](const std::string&) { ++pushes; });
  h.service->start_scheduler();
  h.service->ingest_events("live", chats_by(1, 1));
  for (int i = 0; i < 200 && pushes.load() == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  h.service->stop();
  EXPECT_GT(pushes.load(), 0);
}
