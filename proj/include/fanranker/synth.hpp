#pragma once

// Seeded synthetic livestream logs with planted member behavior: an activity
// ramp before the purchase, streamer-specific chat vocabulary adopted by
// members, toxic chats and membership renewals.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fanranker/core.hpp"
#include "fanranker/ingestion.hpp"

namespace fanranker {

inline constexpr std::size_t kRampDays = 91;  // dayOffset -45..45

struct ScenarioConfig {
  std::uint64_t seed = 1;
  int nVtubers = 2;
  int sessionsPerVtuber = 130;  // one session per day
  int nViewers = 2000;
  double memberFraction = 0.05;  // of viewers, for their home streamer
  EpochSeconds startEpoch = 1640995200;  // 2022-01-01T00:00:00Z

  // Activity multiplier per dayOffset, consumed by members for their home
  // streamer. Empty means the default shape scaled to rampPeak.
  std::vector<double> rampProfile;
  double rampPeak = 3.0;

  // Chat vocabulary.
  int vtuberWords = 12;
  int genericWords = 400;
  double baseFluencyMin = 0.05;  // share of words from the streamer's vocabulary
  double baseFluencyMax = 0.35;
  // Extra fluency a member reaches at the ramp peak (shape-driven, independent of rampPeak).
  double memberFluencyGain = 0.4;

  // Per viewer, per session of the home streamer.
  double attendanceMin = 0.3;
  double attendanceMax = 0.6;
  double chatMean = 1.5;         // mean of the per-viewer chat rate
  double giftMean = 0.08;        // mean of the per-viewer gift rate
  double superchatShare = 0.15;  // of paid events
  double onTimeMin = 0.2;
  double onTimeMax = 0.6;
  double secondaryFollowRate = 0.3;   // chance of following one more streamer
  double secondaryAttendance = 0.25;  // attendance scale for that streamer

  // Category -> chance that a chat carries a keyword of that category.
  std::map<std::string, double> toxicLexiconRates = {{"SEXUAL", 0.004}, {"HARASSMENT", 0.006}, {"VIOLENCE", 0.003}};
  double renewalRate = 0.10;

  std::int64_t membershipPrice = 19800;  // minor units

  static ScenarioConfig from_json(std::string_view text);
  static ScenarioConfig load(const std::filesystem::path& path);
  std::string to_json() const;
  // Throws InvalidConfig.
  void validate() const;

  // The multiplier at a day offset (clamped to [-45, 45]).
  double ramp_at(int day_offset) const;
  // Rises linearly 0 -> 1 from T-45 to T+0, then decays to 2/3 at T+45.
  static double default_shape(int day_offset);

  // Purchase period [periodStart, periodEnd) leaving 46 days before and
  // 59 days after for cohort margins and the renewal month.
  EpochSeconds period_start() const;
  EpochSeconds period_end() const;
};

struct PlantedMember {
  ViewerId viewerId;
  StreamerId vtuberId;
  SessionId liveId;
  EpochSeconds anchorTs = 0;
  bool renewed = false;
  std::optional<SessionId> renewalLiveId;
};

struct GroundTruth {
  std::uint64_t seed = 0;
  EpochSeconds periodStart = 0;
  EpochSeconds periodEnd = 0;
  std::vector<PlantedMember> members;
  std::size_t sessions = 0;
  std::size_t events = 0;
  std::vector<double> rampProfile;  // kRampDays values

  std::string to_json() const;
};

class SynthSink {
 public:
  virtual ~SynthSink() = default;
  virtual void session(const LiveSession& s) = 0;
  virtual void event(const InteractionEvent& e) = 0;
};

// JSONL writer in the ingestion format.
class JsonlSynthSink final : public SynthSink {
 public:
  JsonlSynthSink(std::ostream& sessions, std::ostream& events, CodeMap codes = CodeMap::defaults());
  void session(const LiveSession& s) override;
  void event(const InteractionEvent& e) override;

 private:
  std::ostream& sessions_;
  std::ostream& events_;
  CodeMap codes_;
};

// Appends straight into a store; the caller finalizes.
class StoreSynthSink final : public SynthSink {
 public:
  explicit StoreSynthSink(LogStore& store) : store_(store) {}
  void session(const LiveSession& s) override { store_.add_session(s); }
  void event(const InteractionEvent& e) override { store_.append_event(e); }

 private:
  LogStore& store_;
};

// All sessions are emitted before any event; events follow in session order.
GroundTruth generate(const ScenarioConfig& config, SynthSink& sink);
// Writes sessions.jsonl, events.jsonl, groundTruth.json and codemap.json.
GroundTruth generate_to_dir(const ScenarioConfig& config, const std::filesystem::path& dir);

struct SynthStore {
  LogStore store;
  GroundTruth truth;
};

SynthStore generate_store(const ScenarioConfig& config);

// Streamer-specific words for a streamer, as the generator plants them.
std::vector<std::string> vtuber_vocabulary(const ScenarioConfig& config, int vtuber_index);

inline constexpr std::uint64_t kSynthStreamerIdBase = 10000;
inline constexpr std::uint64_t kSynthViewerIdBase = 1000000;

}  // namespace fanranker
