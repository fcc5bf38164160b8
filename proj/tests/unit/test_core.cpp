#include <gtest/gtest.h>

#include <set>

#include "fanranker/core.hpp"
#include "fanranker/digest.hpp"

using namespace fanranker;

TEST(Window, HalfOpenBounds) {
  const Window w(1000, -1, 2);
  EXPECT_EQ(w.begin(), 1000 - kSecondsPerDay);
  EXPECT_EQ(w.end(), 1000 + 2 * kSecondsPerDay);
  EXPECT_TRUE(w.contains(w.begin()));
  EXPECT_FALSE(w.contains(w.end()));
  EXPECT_TRUE(w.contains(w.end() - 1));
  EXPECT_FALSE(w.contains(w.begin() - 1));
}

TEST(Window, RejectsEmptySpan) {
  EXPECT_THROW(Window(0, 3, 3), Error);
  EXPECT_THROW(Window(0, 4, 1), Error);
}

TEST(Window, SpanConstants) {
  EXPECT_EQ(span_of(WindowTag::TMinus45), spans::kPre45);
  EXPECT_EQ(span_of(WindowTag::TPlus30), spans::kPost30);
  EXPECT_EQ(span_of(WindowTag::Pre45), spans::kPreAll);
  for (auto tag : {WindowTag::Pre45, WindowTag::Post45, WindowTag::TMinus45, WindowTag::TMinus30,
                   WindowTag::TMinus15, WindowTag::TPlus0, WindowTag::TPlus15, WindowTag::TPlus30}) {
    EXPECT_EQ(parse_window_tag(to_string(tag)), tag);
  }
  EXPECT_FALSE(parse_window_tag("T+99").has_value());
}

TEST(FloorDiv, NegativeTimestamps) {
  EXPECT_EQ(floor_div(-1, 86400), -1);
  EXPECT_EQ(floor_div(-86400, 86400), -1);
  EXPECT_EQ(floor_div(-86401, 86400), -2);
  EXPECT_EQ(floor_div(86399, 86400), 0);
  for (std::int64_t a = -1000; a <= 1000; ++a) {
    const auto q = floor_div(a, 7);
    EXPECT_LE(q * 7, a);
    EXPECT_GT((q + 1) * 7, a);
  }
}

TEST(InteractionKind, NamesRoundTrip) {
  for (auto k : {InteractionKind::Enter, InteractionKind::Chat, InteractionKind::Gift, InteractionKind::SuperChat,
                 InteractionKind::Membership}) {
    EXPECT_EQ(parse_interaction_kind(to_string(k)), k);
  }
  EXPECT_EQ(to_string(InteractionKind::SuperChat), "SUPERCHAT");
  EXPECT_FALSE(parse_interaction_kind("LIKE").has_value());
}

TEST(Error, CarriesCode) {
  try {
    throw Error(ErrorCode::EmptyPool, "x");
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPool);
    EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
  }
}

TEST(Rng, SeededStreamsRepeat) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
  EXPECT_NE(Rng::derive(1, 0), Rng::derive(1, 1));
  EXPECT_EQ(Rng::derive(9, 3), Rng::derive(9, 3));
}

TEST(Rng, DistributionsStayInRange) {
  Rng r(7);
  double sum = 0.0;
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    const auto k = r.uniform_index(10);
    ASSERT_LT(k, 10u);
    seen.insert(k);
  }
  EXPECT_NEAR(sum / 20000, 0.5, 0.02);
  EXPECT_EQ(seen.size(), 10u);

  double psum = 0.0, esum = 0.0, nsum = 0.0, nsq = 0.0;
  for (int i = 0; i < 20000; ++i) {
    psum += double(r.poisson(3.5));
    esum += r.exponential(2.0);
    const double z = r.normal();
    nsum += z;
    nsq += z * z;
  }
  EXPECT_NEAR(psum / 20000, 3.5, 0.1);
  EXPECT_NEAR(esum / 20000, 0.5, 0.02);
  EXPECT_NEAR(nsum / 20000, 0.0, 0.03);
  EXPECT_NEAR(nsq / 20000, 1.0, 0.05);
}

TEST(Digest, KnownVectors) {
  EXPECT_EQ(to_hex(sha256("")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(to_hex(sha256("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}
