#include "fanranker/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fanranker/toxicity.hpp"

namespace fanranker {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kPeriodLeadDays = 46;
constexpr int kPeriodTailDays = 59;
constexpr int kMaxVtubers = 16;
constexpr int kCjkBase = 0x4E00;
constexpr int kCjkPerVtuber = 0x100;
constexpr int kCjkAlphabet = 40;

std::string utf8(int cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return s;
}

// Consonant-vowel syllables. No 'r', 'x', 'y' and no vowel or consonant
// clusters, so generic words can never contain a default lexicon keyword.
std::vector<std::string> generic_vocabulary(const ScenarioConfig& c) {
  static constexpr std::string_view kConsonants = "bdfghjklmnpstvwz";
  static constexpr std::string_view kVowels = "aeiou";
  Rng rng(Rng::derive(c.seed, 3));
  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < static_cast<std::size_t>(c.genericWords)) {
    const std::size_t syllables = 2 + rng.uniform_index(2);
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
      w.push_back(kConsonants[rng.uniform_index(kConsonants.size())]);
      w.push_back(kVowels[rng.uniform_index(kVowels.size())]);
    }
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::vector<std::string> vtuber_vocabulary(const ScenarioConfig& c, int vtuber_index) {
  Rng rng(Rng::derive(c.seed, 100 + static_cast<std::uint64_t>(vtuber_index)));
  std::set<std::string> seen;
  std::vector<std::string> words;
  const int base = kCjkBase + kCjkPerVtuber * vtuber_index;
  while (words.size() < static_cast<std::size_t>(c.vtuberWords)) {
    std::string w = utf8(base + static_cast<int>(rng.uniform_index(kCjkAlphabet))) +
                    utf8(base + static_cast<int>(rng.uniform_index(kCjkAlphabet)));
    if (seen.insert(w).second) words.push_back(w);
  }
  return words;
}

// ---------------------------------------------------------------- config

ScenarioConfig ScenarioConfig::from_json(std::string_view text) {
  json j = json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidConfig, "scenario must be a JSON object");
  static const std::set<std::string> kKeys = {
      "seed", "nVtubers", "sessionsPerVtuber", "nViewers", "memberFraction", "startEpoch", "rampProfile", "rampPeak",
      "vtuberWords", "genericWords", "baseFluencyMin", "baseFluencyMax", "memberFluencyGain", "attendanceMin",
      "attendanceMax", "chatMean", "giftMean", "superchatShare", "onTimeMin", "onTimeMax", "secondaryFollowRate",
      "secondaryAttendance", "toxicLexiconRates", "renewalRate", "membershipPrice"};
  for (auto& [key, value] : j.items()) {
    if (!kKeys.count(key)) throw Error(ErrorCode::InvalidConfig, "unknown scenario key " + key);
  }
  ScenarioConfig c;
  try {
    read_field(j, "seed", c.seed);
    read_field(j, "nVtubers", c.nVtubers);
    read_field(j, "sessionsPerVtuber", c.sessionsPerVtuber);
    read_field(j, "nViewers", c.nViewers);
    read_field(j, "memberFraction", c.memberFraction);
    read_field(j, "startEpoch", c.startEpoch);
    read_field(j, "rampProfile", c.rampProfile);
    read_field(j, "rampPeak", c.rampPeak);
    read_field(j, "vtuberWords", c.vtuberWords);
    read_field(j, "genericWords", c.genericWords);
    read_field(j, "baseFluencyMin", c.baseFluencyMin);
    read_field(j, "baseFluencyMax", c.baseFluencyMax);
    read_field(j, "memberFluencyGain", c.memberFluencyGain);
    read_field(j, "attendanceMin", c.attendanceMin);
    read_field(j, "attendanceMax", c.attendanceMax);
    read_field(j, "chatMean", c.chatMean);
    read_field(j, "giftMean", c.giftMean);
    read_field(j, "superchatShare", c.superchatShare);
    read_field(j, "onTimeMin", c.onTimeMin);
    read_field(j, "onTimeMax", c.onTimeMax);
    read_field(j, "secondaryFollowRate", c.secondaryFollowRate);
    read_field(j, "secondaryAttendance", c.secondaryAttendance);
    read_field(j, "toxicLexiconRates", c.toxicLexiconRates);
    read_field(j, "renewalRate", c.renewalRate);
    read_field(j, "membershipPrice", c.membershipPrice);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad scenario value: ") + e.what());
  }
  c.validate();
  return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open scenario " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string ScenarioConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["nVtubers"] = nVtubers;
  j["sessionsPerVtuber"] = sessionsPerVtuber;
  j["nViewers"] = nViewers;
  j["memberFraction"] = memberFraction;
  j["startEpoch"] = startEpoch;
  j["rampProfile"] = rampProfile;
  j["rampPeak"] = rampPeak;
  j["vtuberWords"] = vtuberWords;
  j["genericWords"] = genericWords;
  j["baseFluencyMin"] = baseFluencyMin;
  j["baseFluencyMax"] = baseFluencyMax;
  j["memberFluencyGain"] = memberFluencyGain;
  j["attendanceMin"] = attendanceMin;
  j["attendanceMax"] = attendanceMax;
  j["chatMean"] = chatMean;
  j["giftMean"] = giftMean;
  j["superchatShare"] = superchatShare;
  j["onTimeMin"] = onTimeMin;
  j["onTimeMax"] = onTimeMax;
  j["secondaryFollowRate"] = secondaryFollowRate;
  j["secondaryAttendance"] = secondaryAttendance;
  j["toxicLexiconRates"] = toxicLexiconRates;
  j["renewalRate"] = renewalRate;
  j["membershipPrice"] = membershipPrice;
  return j.dump(2);
}

void ScenarioConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::InvalidConfig, what);
  };
  auto rate = [&](double v, const char* name) { require(v >= 0.0 && v <= 1.0, std::string(name) + " must be in [0, 1]"); };
  require(nVtubers >= 1 && nVtubers <= kMaxVtubers, "nVtubers must be in [1, 16]");
  require(sessionsPerVtuber >= kPeriodLeadDays + kPeriodTailDays + 1,
          "sessionsPerVtuber must be at least " + std::to_string(kPeriodLeadDays + kPeriodTailDays + 1));
  require(nViewers >= 1, "nViewers must be positive");
  rate(memberFraction, "memberFraction");
  require(rampProfile.empty() || rampProfile.size() == kRampDays, "rampProfile needs 91 values (T-45..T+45)");
  for (double r : rampProfile) require(r > 0 && std::isfinite(r), "rampProfile values must be positive");
  require(rampPeak > 0 && std::isfinite(rampPeak), "rampPeak must be positive");
  require(vtuberWords >= 1 && vtuberWords <= 400, "vtuberWords must be in [1, 400]");
  require(genericWords >= 1 && genericWords <= 20000, "genericWords must be in [1, 20000]");
  rate(baseFluencyMin, "baseFluencyMin");
  rate(baseFluencyMax, "baseFluencyMax");
  require(baseFluencyMin <= baseFluencyMax, "baseFluencyMin exceeds baseFluencyMax");
  rate(memberFluencyGain, "memberFluencyGain");
  rate(attendanceMin, "attendanceMin");
  rate(attendanceMax, "attendanceMax");
  require(attendanceMin <= attendanceMax, "attendanceMin exceeds attendanceMax");
  require(chatMean >= 0 && giftMean >= 0, "event means must be >= 0");
  rate(superchatShare, "superchatShare");
  rate(onTimeMin, "onTimeMin");
  rate(onTimeMax, "onTimeMax");
  require(onTimeMin <= onTimeMax, "onTimeMin exceeds onTimeMax");
  rate(secondaryFollowRate, "secondaryFollowRate");
  rate(secondaryAttendance, "secondaryAttendance");
  const auto lexicon = default_lexicon();
  for (const auto& [category, r] : toxicLexiconRates) {
    require(lexicon.count(category) == 1, "unknown toxicity category " + category);
    rate(r, "toxicLexiconRates");
  }
  rate(renewalRate, "renewalRate");
  require(membershipPrice > 0, "membershipPrice must be positive");
}

double ScenarioConfig::default_shape(int day_offset) {
  const int d = std::clamp(day_offset, -45, 45);
  if (d <= 0) return static_cast<double>(d + 45) / 45.0;
  return 1.0 - static_cast<double>(d) / 135.0;
}

double ScenarioConfig::ramp_at(int day_offset) const {
  const int d = std::clamp(day_offset, -45, 45);
  if (!rampProfile.empty()) return rampProfile[static_cast<std::size_t>(d + 45)];
  return 1.0 + (rampPeak - 1.0) * default_shape(d);
}

EpochSeconds ScenarioConfig::period_start() const { return startEpoch + kPeriodLeadDays * kSecondsPerDay; }

EpochSeconds ScenarioConfig::period_end() const {
  return startEpoch + static_cast<EpochSeconds>(sessionsPerVtuber - kPeriodTailDays) * kSecondsPerDay;
}

std::string GroundTruth::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["periodStart"] = periodStart;
  j["periodEnd"] = periodEnd;
  j["sessions"] = sessions;
  j["events"] = events;
  j["rampProfile"] = rampProfile;
  j["members"] = ordered_json::array();
  for (const auto& m : members) {
    ordered_json r;
    r["viewerId"] = m.viewerId.value;
    r["vtuberId"] = m.vtuberId.value;
    r["liveId"] = m.liveId;
    r["anchorTs"] = m.anchorTs;
    r["renewed"] = m.renewed;
    r["renewalLiveId"] = m.renewalLiveId ? ordered_json(*m.renewalLiveId) : ordered_json(nullptr);
    j["members"].push_back(std::move(r));
  }
  return j.dump(2);
}

// ---------------------------------------------------------------- sinks

JsonlSynthSink::JsonlSynthSink(std::ostream& sessions, std::ostream& events, CodeMap codes)
    : sessions_(sessions), events_(events), codes_(std::move(codes)) {}

void JsonlSynthSink::session(const LiveSession& s) { sessions_ << serialize_session_line(s) << '\n'; }

void JsonlSynthSink::event(const InteractionEvent& e) { events_ << serialize_event_line(e, codes_) << '\n'; }

// ---------------------------------------------------------------- generate

namespace {

struct ViewerProfile {
  int home = 0;
  int secondary = -1;
  double attendance = 0;
  double chatRate = 0;
  double giftRate = 0;
  double onTime = 0;
  double fluency = 0;
  // Planted membership, if any.
  int anchorSession = -1;
  int renewalSession = -1;
  EpochSeconds anchorTs = 0;
};

struct PendingEvent {
  InteractionEvent event;
  std::uint64_t order;
};

class Generator {
 public:
  explicit Generator(const ScenarioConfig& c)
      : c_(c), generic_(generic_vocabulary(c)), lexicon_(default_lexicon()) {
    for (int k = 0; k < c.nVtubers; ++k) vtuber_words_.push_back(vtuber_vocabulary(c, k));
    zipf_.resize(static_cast<std::size_t>(c.vtuberWords));
    double total = 0;
    for (std::size_t i = 0; i < zipf_.size(); ++i) total += 1.0 / static_cast<double>(i + 1);
    double acc = 0;
    for (std::size_t i = 0; i < zipf_.size(); ++i) {
      acc += 1.0 / static_cast<double>(i + 1) / total;
      zipf_[i] = acc;
    }
  }

  GroundTruth run(SynthSink& sink) {
    layout_sessions();
    draw_viewers();
    plant_members();
    GroundTruth truth;
    truth.seed = c_.seed;
    truth.periodStart = c_.period_start();
    truth.periodEnd = c_.period_end();
    truth.sessions = sessions_.size();
    for (int d = -45; d <= 45; ++d) truth.rampProfile.push_back(c_.ramp_at(d));
    for (const auto& s : sessions_) sink.session(s);
    for (std::size_t s = 0; s < sessions_.size(); ++s) truth.events += emit_session(s, sink);
    for (std::size_t v = 0; v < viewers_.size(); ++v) {
      const auto& p = viewers_[v];
      if (p.anchorSession < 0) continue;
      PlantedMember m;
      m.viewerId = viewer_id(v);
      m.vtuberId = streamer_id(p.home);
      m.liveId = sessions_[static_cast<std::size_t>(p.anchorSession)].liveId;
      m.anchorTs = p.anchorTs;
      m.renewed = p.renewalSession >= 0;
      if (m.renewed) m.renewalLiveId = sessions_[static_cast<std::size_t>(p.renewalSession)].liveId;
      truth.members.push_back(std::move(m));
    }
    return truth;
  }

 private:
  static StreamerId streamer_id(int k) { return StreamerId(kSynthStreamerIdBase + static_cast<std::uint64_t>(k)); }
  static ViewerId viewer_id(std::size_t v) { return ViewerId(kSynthViewerIdBase + v); }
  std::size_t session_index(int k, int day) const {
    return static_cast<std::size_t>(k) * static_cast<std::size_t>(c_.sessionsPerVtuber) + static_cast<std::size_t>(day);
  }

  void layout_sessions() {
    Rng rng(Rng::derive(c_.seed, 1));
    for (int k = 0; k < c_.nVtubers; ++k) {
      for (int day = 0; day < c_.sessionsPerVtuber; ++day) {
        LiveSession s;
        s.uId = streamer_id(k);
        s.uName = "vtuber" + std::to_string(k);
        s.liveId = std::to_string(500000000 + k * 100000 + day);
        s.parentArea = "virtual";
        s.area = "chat";
        s.coverUrl = "https://example.invalid/cover/" + s.liveId + ".jpg";
        s.startDate = c_.startEpoch + static_cast<EpochSeconds>(day) * kSecondsPerDay +
                      static_cast<EpochSeconds>(12 + (2 * k) % 10) * 3600 +
                      static_cast<EpochSeconds>(rng.uniform_index(1800));
        s.stopDate = s.startDate + 7200 + static_cast<EpochSeconds>(rng.uniform_index(3601));
        s.title = "stream " + std::to_string(day);
        sessions_.push_back(std::move(s));
      }
    }
  }

  double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform01(); }

  void draw_viewers() {
    Rng rng(Rng::derive(c_.seed, 2));
    viewers_.resize(static_cast<std::size_t>(c_.nViewers));
    followers_.assign(static_cast<std::size_t>(c_.nVtubers), {});
    for (std::size_t v = 0; v < viewers_.size(); ++v) {
      ViewerProfile& p = viewers_[v];
      p.home = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(c_.nVtubers)));
      p.attendance = uniform(rng, c_.attendanceMin, c_.attendanceMax);
      p.chatRate = c_.chatMean > 0 ? rng.exponential(1.0 / c_.chatMean) : 0.0;
      p.giftRate = c_.giftMean > 0 ? rng.exponential(1.0 / c_.giftMean) : 0.0;
      p.onTime = uniform(rng, c_.onTimeMin, c_.onTimeMax);
      p.fluency = uniform(rng, c_.baseFluencyMin, c_.baseFluencyMax);
      if (c_.nVtubers > 1 && rng.bernoulli(c_.secondaryFollowRate)) {
        p.secondary = static_cast<int>((static_cast<std::uint64_t>(p.home) + 1 +
                                        rng.uniform_index(static_cast<std::uint64_t>(c_.nVtubers - 1))) %
                                       static_cast<std::uint64_t>(c_.nVtubers));
      }
      followers_[static_cast<std::size_t>(p.home)].push_back(v);
      if (p.secondary >= 0) followers_[static_cast<std::size_t>(p.secondary)].push_back(v);
    }
    for (auto& f : followers_) std::sort(f.begin(), f.end());
  }

  void plant_members() {
    Rng rng(Rng::derive(c_.seed, 4));
    const auto count = static_cast<std::size_t>(std::llround(c_.memberFraction * c_.nViewers));
    std::vector<std::size_t> order(viewers_.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < count; ++i) std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t v : chosen) {
      ViewerProfile& p = viewers_[v];
      std::vector<int> candidates;
      for (int day = 0; day < c_.sessionsPerVtuber; ++day) {
        const auto& s = sessions_[session_index(p.home, day)];
        if (s.startDate >= c_.period_start() && s.startDate < c_.period_end()) candidates.push_back(day);
      }
      if (candidates.empty()) throw Error(ErrorCode::InvalidConfig, "no session inside the purchase period");
      const int day = candidates[rng.uniform_index(candidates.size())];
      p.anchorSession = static_cast<int>(session_index(p.home, day));
      p.anchorTs = sessions_[static_cast<std::size_t>(p.anchorSession)].startDate;
      if (rng.bernoulli(c_.renewalRate)) {
        const EpochSeconds from = p.anchorTs + 30 * kSecondsPerDay;
        const EpochSeconds to = p.anchorTs + 58 * kSecondsPerDay;
        for (int d = day + 1; d < c_.sessionsPerVtuber; ++d) {
          const auto& s = sessions_[session_index(p.home, d)];
          if (s.startDate >= from && s.startDate <= to) {
            p.renewalSession = static_cast<int>(session_index(p.home, d));
            break;
          }
        }
      }
    }
  }

  std::string chat_text(Rng& rng, int vtuber, double fluency) {
    std::string text;
    const std::size_t words = 1 + rng.uniform_index(3);
    const auto& own = vtuber_words_[static_cast<std::size_t>(vtuber)];
    for (std::size_t w = 0; w < words; ++w) {
      if (w) text.push_back(' ');
      if (rng.bernoulli(fluency)) {
        const double u = rng.uniform01();
        const auto at = std::upper_bound(zipf_.begin(), zipf_.end(), u) - zipf_.begin();
        text += own[std::min<std::size_t>(static_cast<std::size_t>(at), own.size() - 1)];
      } else {
        text += generic_[rng.uniform_index(generic_.size())];
      }
    }
    for (const auto& [category, r] : c_.toxicLexiconRates) {
      if (r > 0 && rng.bernoulli(r)) {
        const auto& words_of = lexicon_.at(category);
        text += ' ';
        text += words_of[rng.uniform_index(words_of.size())];
      }
    }
    return text;
  }

  std::size_t emit_session(std::size_t si, SynthSink& sink) {
    const LiveSession& s = sessions_[si];
    const int k = static_cast<int>(si / static_cast<std::size_t>(c_.sessionsPerVtuber));
    const EpochSeconds duration = s.stopDate - s.startDate;
    Rng rng(Rng::derive(c_.seed, 1000 + si));
    std::vector<PendingEvent> out;
    std::uint64_t order = 0;
    auto push = [&](std::size_t v, InteractionKind kind, EpochSeconds t, std::string message, std::int64_t price,
                    std::int64_t count) {
      InteractionEvent e;
      e.uId = viewer_id(v);
      e.uName = "viewer" + std::to_string(v);
      e.kind = kind;
      e.sendDate = t;
      e.message = std::move(message);
      e.price = price;
      e.count = count;
      e.sessionRef = s.liveId;
      out.push_back({std::move(e), order++});
    };
    for (std::size_t v : followers_[static_cast<std::size_t>(k)]) {
      const ViewerProfile& p = viewers_[v];
      const bool home = p.home == k;
      double m = 1.0, fluency = p.fluency;
      const bool anchor = home && p.anchorSession == static_cast<int>(si);
      const bool renewal = home && p.renewalSession == static_cast<int>(si);
      if (home && p.anchorSession >= 0) {
        const auto d = static_cast<int>(floor_div(s.startDate - p.anchorTs, kSecondsPerDay));
        if (d >= -45) {
          m = c_.ramp_at(d);
          fluency = std::min(1.0, fluency + c_.memberFluencyGain * ScenarioConfig::default_shape(d));
        }
      }
      const double attend = std::min(0.98, (home ? p.attendance : p.attendance * c_.secondaryAttendance) * m);
      const bool present = rng.bernoulli(attend) || anchor || renewal;
      if (!present) continue;
      const bool on_time = rng.bernoulli(std::min(0.98, p.onTime * m));
      const EpochSeconds arrival =
          on_time ? s.startDate + static_cast<EpochSeconds>(rng.uniform_index(601))
                  : s.startDate + 601 + static_cast<EpochSeconds>(rng.uniform_index(static_cast<std::uint64_t>(duration - 600)));
      push(v, InteractionKind::Enter, arrival, "", 0, 1);
      const auto span = static_cast<std::uint64_t>(s.stopDate - arrival + 1);
      const std::uint64_t chats = rng.poisson(p.chatRate * m);
      for (std::uint64_t i = 0; i < chats; ++i) {
        const EpochSeconds t = arrival + static_cast<EpochSeconds>(rng.uniform_index(span));
        push(v, InteractionKind::Chat, t, chat_text(rng, k, fluency), 0, 1);
      }
      const std::uint64_t gifts = rng.poisson(p.giftRate * m);
      for (std::uint64_t i = 0; i < gifts; ++i) {
        const EpochSeconds t = arrival + static_cast<EpochSeconds>(rng.uniform_index(span));
        if (rng.bernoulli(c_.superchatShare)) {
          static constexpr std::int64_t kScPrices[] = {3000, 5000, 10000};
          push(v, InteractionKind::SuperChat, t, chat_text(rng, k, fluency), kScPrices[rng.uniform_index(3)], 1);
        } else {
          static constexpr std::int64_t kGiftPrices[] = {100, 1000, 5200, 10000};
          push(v, InteractionKind::Gift, t, "", kGiftPrices[rng.uniform_index(4)], 1);
        }
      }
      if (anchor || renewal) {
        const EpochSeconds t = arrival + static_cast<EpochSeconds>(rng.uniform_index(span));
        push(v, InteractionKind::Membership, t, "", c_.membershipPrice, 1);
      }
    }
    std::sort(out.begin(), out.end(), [](const PendingEvent& a, const PendingEvent& b) {
      if (a.event.sendDate != b.event.sendDate) return a.event.sendDate < b.event.sendDate;
      return a.order < b.order;
    });
    for (const auto& e : out) sink.event(e.event);
    return out.size();
  }

  const ScenarioConfig& c_;
  std::vector<std::string> generic_;
  std::map<std::string, std::vector<std::string>> lexicon_;
  std::vector<std::vector<std::string>> vtuber_words_;
  std::vector<double> zipf_;
  std::vector<LiveSession> sessions_;
  std::vector<ViewerProfile> viewers_;
  std::vector<std::vector<std::size_t>> followers_;
};

}  // namespace

GroundTruth generate(const ScenarioConfig& config, SynthSink& sink) {
  config.validate();
  return Generator(config).run(sink);
}

GroundTruth generate_to_dir(const ScenarioConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream sessions(dir / "sessions.jsonl", std::ios::trunc);
  std::ofstream events(dir / "events.jsonl", std::ios::trunc);
  if (!sessions || !events) throw Error(ErrorCode::IoError, "cannot write into " + dir.string());
  JsonlSynthSink sink(sessions, events);
  GroundTruth truth = generate(config, sink);
  std::ofstream gt(dir / "groundTruth.json", std::ios::trunc);
  gt << truth.to_json() << '\n';
  std::ofstream codes(dir / "codemap.json", std::ios::trunc);
  codes << CodeMap::defaults().to_json() << '\n';
  if (!sessions || !events || !gt || !codes) throw Error(ErrorCode::IoError, "write failed in " + dir.string());
  return truth;
}

SynthStore generate_store(const ScenarioConfig& config) {
  SynthStore out;
  StoreSynthSink sink(out.store);
  out.truth = generate(config, sink);
  out.store.finalize();
  return out;
}

}  // namespace fanranker
