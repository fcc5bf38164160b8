#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fanranker/cli.hpp"
#include "fanranker/features.hpp"
#include "fanranker/synth.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fanranker;
using namespace fanranker::testing;

TEST(Columns, CanonicalLayout) {
  const auto& cols = feature_columns();
  ASSERT_EQ(cols.size(), kFeatureWidth);
  std::set<std::pair<std::string, std::string>> unique;
  for (const auto& c : cols) unique.insert({c.name, c.window});
  EXPECT_EQ(unique.size(), cols.size());
  EXPECT_EQ(cols[column_w1(BaseFeature::ChatSent)].window, "W1");
  EXPECT_EQ(cols[column_w2(BaseFeature::ChatSent)].window, "W2");
  EXPECT_EQ(cols[column_w1(BaseFeature::ChatSent)].name, "chat_sent_w1");
  EXPECT_TRUE(cols[column_delta(BaseFeature::ChatSimAvg)].delta);
  EXPECT_TRUE(cols[column_delta(BaseFeature::ChatSimAvg)].chatsim);
  EXPECT_TRUE(cols[kColumnChatSimPresentW2].chatsim);
  EXPECT_THROW(column_delta(BaseFeature::ChatSent), Error);
  std::size_t chatsim_cols = 0;
  for (const auto& c : cols) chatsim_cols += c.chatsim;
  EXPECT_EQ(chatsim_cols, 5u);
}

TEST(Columns, ManifestRoundTripAndHash) {
  const auto& cols = feature_columns();
  const std::string m = manifest_json(cols);
  EXPECT_EQ(parse_manifest_json(m), cols);
  auto changed = cols;
  changed[3].name = "x";
  EXPECT_NE(manifest_hash(changed), manifest_hash(cols));
  EXPECT_EQ(manifest_hash(cols), manifest_hash(parse_manifest_json(m)));
  EXPECT_THROW(parse_manifest_json("{}"), Error);
}

TEST(Assemble, DeltasImputationAndFlags) {
  WindowValues d0, w1, w2;
  w1.base[column_w1(BaseFeature::ChatSent)] = 4;
  w2.base[static_cast<std::size_t>(BaseFeature::LiveWatchRate)] = 0.75;
  d0.base[static_cast<std::size_t>(BaseFeature::LiveWatchRate)] = 0.25;
  w2.chatsim.average = 0.6;
  d0.chatsim.average = std::nullopt;
  const auto x = assemble_vector(d0, w1, w2);
  ASSERT_EQ(x.size(), kFeatureWidth);
  EXPECT_EQ(x[column_w1(BaseFeature::ChatSent)], 4);
  EXPECT_DOUBLE_EQ(x[column_delta(BaseFeature::LiveWatchRate)], 0.5);
  EXPECT_DOUBLE_EQ(x[column_delta(BaseFeature::ChatSimAvg)], 0.6);
  EXPECT_EQ(x[column_w1(BaseFeature::ChatSimAvg)], 0.0);
  EXPECT_EQ(x[kColumnChatSimPresentW1], 0.0);
  EXPECT_EQ(x[kColumnChatSimPresentW2], 1.0);
}

// Activity features against full-scan recomputation; toxicity flags
// against a direct lexicon pass over the raw chats.
TEST(Extractor, MatchesFullScanOracle) {
  ScenarioConfig c;
  c.seed = 17;
  c.nViewers = 400;
  c.sessionsPerVtuber = 110;
  c.toxicLexiconRates = {{"SEXUAL", 0.05}, {"HARASSMENT", 0.05}, {"VIOLENCE", 0.05}};
  const SynthStore syn = generate_store(c);
  const Pipeline p = make_pipeline(syn.store, {});
  const oracle::Corpus corpus(syn.store);
  const auto lexicon = LexiconModerationProvider::defaults();
  auto cohort = build_cohorts(syn.store, c.period_start(), c.period_end());
  std::vector<CohortRecord> sample = members_of(cohort);
  for (std::size_t i = 0; i < cohort.size() && sample.size() < 80; i += 7) sample.push_back(cohort[i]);

  std::size_t toxic_seen = 0;
  for (const auto& r : sample) {
    const auto x = p.extractor->extract(r);
    const std::pair<DaySpan, std::size_t> wins[] = {{kWindowW1, 0}, {kWindowW2, kBaseFeatureCount}};
    for (const auto& [span, off] : wins) {
      const Window w(r.anchorTs, span);
      const auto o = oracle::brute_metrics(corpus, r.viewerId, r.vtuberId, w, r.anchorSession);
      auto at = [&](BaseFeature f) { return x[off + static_cast<std::size_t>(f)]; };
      EXPECT_EQ(at(BaseFeature::ChatSent), double(o.totalChats));
      EXPECT_EQ(at(BaseFeature::GiftScCount), double(o.giftCount));
      EXPECT_NEAR(at(BaseFeature::GiftScValue), double(o.giftValue) / 100.0, 1e-9);
      EXPECT_NEAR(at(BaseFeature::LiveWatchRate), o.liveWatchRate, 1e-12);
      EXPECT_NEAR(at(BaseFeature::OnTimeRate), o.onTimeRate, 1e-12);
      EXPECT_NEAR(at(BaseFeature::LiveWatchTime), o.watchTimeProportion, 1e-12);
      EXPECT_NEAR(at(BaseFeature::ChatPerLive), o.chatsPerWatchedSession, 1e-12);
      EXPECT_EQ(at(BaseFeature::GiftScCountVtb), double(o.giftCountVtb));
      EXPECT_NEAR(at(BaseFeature::GiftScValueVtb), double(o.giftValueVtb) / 100.0, 1e-9);

      std::array<bool, 3> toxic{};
      for (const auto& e : syn.store.events()) {
        if (e.uId != r.viewerId || e.kind != InteractionKind::Chat || !w.contains(e.sendDate)) continue;
        if (e.sessionRef == r.anchorSession || corpus.session(e.sessionRef)->uId != r.vtuberId) continue;
        const auto label = label_from_scores(lexicon.score(e.message));
        for (std::size_t k = 0; k < 3; ++k) toxic[k] = toxic[k] || label.flags[k];
      }
      EXPECT_EQ(at(BaseFeature::Sexual), toxic[0] ? 1.0 : 0.0);
      EXPECT_EQ(at(BaseFeature::Harassment), toxic[1] ? 1.0 : 0.0);
      EXPECT_EQ(at(BaseFeature::Violence), toxic[2] ? 1.0 : 0.0);
      toxic_seen += toxic[0] + toxic[1] + toxic[2];
    }
  }
  EXPECT_GT(toxic_seen, 0u);
}

TEST(Matrix, BuildAndCsvRoundTrip) {
  ScenarioConfig c;
  c.nViewers = 200;
  c.sessionsPerVtuber = 106;
  const SynthStore syn = generate_store(c);
  const Pipeline p = make_pipeline(syn.store, {});
  const auto cohort = undersample(build_cohorts(syn.store, c.period_start(), c.period_end()), 1);
  const LabeledMatrix m = build_matrix(*p.extractor, cohort);
  EXPECT_EQ(m.rows(), cohort.size());
  EXPECT_EQ(m.cols(), kFeatureWidth);
  EXPECT_EQ(m.positives(), members_of(cohort).size());
  for (std::size_t i = 1; i < m.rows(); ++i) {
    const auto& a = m.records[i - 1];
    const auto& b = m.records[i];
    EXPECT_TRUE(a.anchorTs < b.anchorTs || (a.anchorTs == b.anchorTs && a.viewerId <= b.viewerId));
  }
  std::stringstream io;
  write_matrix_csv(io, m);
  const LabeledMatrix back = read_matrix_csv(io);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.labels, m.labels);
  EXPECT_EQ(back.records, m.records);
  EXPECT_EQ(back.columns, m.columns);

  const std::vector<std::size_t> idx{2, 0};
  const auto sub = m.subset(idx);
  ASSERT_EQ(sub.rows(), 2u);
  EXPECT_EQ(sub.at(0, 5), m.at(2, 5));
  EXPECT_THROW(build_matrix(*p.extractor, std::vector<CohortRecord>{}), Error);
  LabeledMatrix narrow;
  narrow.columns = feature_columns();
  EXPECT_THROW(narrow.append(cohort[0], std::vector<double>(3, 0.0)), Error);
  std::istringstream bad("not-a-header\n");
  EXPECT_THROW(read_matrix_csv(bad), Error);
}

TEST(Detail, JsonCarriesWindows) {
  FeatureDetail d;
  d.viewerId = ViewerId(3);
  d.vtuberId = StreamerId(4);
  d.anchorTs = 99;
  d.w2.chatsim.average = 0.25;
  d.w2.chatsim.definedSessions = 2;
  d.values = assemble_vector(d.d0, d.w1, d.w2);
  const std::string j = feature_detail_json(d, feature_columns());
  EXPECT_NE(j.find("\"viewerId\":3"), std::string::npos);
  EXPECT_NE(j.find("\"W2\""), std::string::npos);
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(3.0), "3");
}
