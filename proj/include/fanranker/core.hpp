#pragma once

// Domain types shared by every fanranker module: identifiers, sessions,
// interaction events, relative day windows and the library error type.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fanranker {

using EpochSeconds = std::int64_t;

inline constexpr EpochSeconds kSecondsPerDay = 86400;

// Strongly typed 64-bit identifier. Zero is reserved as "invalid".
template <typename Tag>
struct Id {
  std::uint64_t value = 0;

  constexpr Id() = default;
  constexpr explicit Id(std::uint64_t v) : value(v) {}

  constexpr bool valid() const { return value != 0; }
  friend constexpr auto operator<=>(const Id&, const Id&) = default;
};

struct StreamerTag {};
struct ViewerTag {};

// Streamers and viewers share the platform's user id space (`uId`), but a
// streamer id and a viewer id are never interchangeable in an API.
using StreamerId = Id<StreamerTag>;
using ViewerId = Id<ViewerTag>;
using SessionId = std::string;

enum class ErrorCode {
  MalformedRecord,
  InvalidTimespan,
  UnknownTypeCode,
  NegativePrice,
  OrphanEvent,
  EventOutsideSession,
  EmptyChatMessage,
  NonPositiveMembershipPrice,
  DuplicateSession,
  InvalidArgument,
  EmptySession,
  EmptyCohort,
  InsufficientMargin,
  NotEnoughNonMembers,
  DegenerateLabels,
  DimensionMismatch,
  NotFitted,
  TooFewRows,
  EmptyPool,
  ManifestMismatch,
  DegenerateTable,
  ProviderFailure,
  UnknownSession,
  PortInUse,
  InvalidConfig,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class InteractionKind : std::uint8_t { Enter, Chat, Gift, SuperChat, Membership };

std::string_view to_string(InteractionKind kind);
std::optional<InteractionKind> parse_interaction_kind(std::string_view name);

inline constexpr bool is_gift_or_superchat(InteractionKind k) {
  return k == InteractionKind::Gift || k == InteractionKind::SuperChat;
}

struct LiveSession {
  StreamerId uId;
  std::string uName;
  SessionId liveId;
  std::string parentArea;
  std::string area;
  std::string coverUrl;
  EpochSeconds startDate = 0;
  EpochSeconds stopDate = 0;
  std::string title;

  friend bool operator==(const LiveSession&, const LiveSession&) = default;
};

// Seconds between start and stop. Sessions with stop < start are rejected at
// ingestion, so the result is never negative for a stored session.
constexpr EpochSeconds session_duration(const LiveSession& s) { return s.stopDate - s.startDate; }

struct InteractionEvent {
  ViewerId uId;
  std::string uName;
  InteractionKind kind = InteractionKind::Enter;
  EpochSeconds sendDate = 0;
  std::string message;
  std::int64_t price = 0;  // CNY minor units (fen)
  std::int64_t count = 0;
  SessionId sessionRef;

  friend bool operator==(const InteractionEvent&, const InteractionEvent&) = default;
};

// Half-open span of days relative to an anchor: [start, end).
struct DaySpan {
  int startDays = 0;
  int endDays = 0;

  friend constexpr bool operator==(const DaySpan&, const DaySpan&) = default;
};

// A DaySpan pinned to an anchor timestamp (T+0, the purchase session start).
struct Window {
  EpochSeconds anchor = 0;
  int offsetStartDays = 0;
  int offsetEndDays = 0;

  Window() = default;
  Window(EpochSeconds anchor_ts, int start_days, int end_days);
  Window(EpochSeconds anchor_ts, DaySpan span) : Window(anchor_ts, span.startDays, span.endDays) {}

  constexpr EpochSeconds begin() const { return anchor + offsetStartDays * kSecondsPerDay; }
  constexpr EpochSeconds end() const { return anchor + offsetEndDays * kSecondsPerDay; }
  constexpr bool contains(EpochSeconds t) const { return begin() <= t && t < end(); }
};

inline bool window_contains(const Window& w, EpochSeconds t) { return w.contains(t); }

// The fixed 15-day windows around T+0.
namespace spans {
inline constexpr DaySpan kPre45{-45, -30};
inline constexpr DaySpan kPre30{-30, -15};
inline constexpr DaySpan kPre15{-15, 0};
inline constexpr DaySpan kPost0{0, 15};
inline constexpr DaySpan kPost15{15, 30};
inline constexpr DaySpan kPost30{30, 45};
inline constexpr DaySpan kPreAll{-45, 0};
inline constexpr DaySpan kPostAll{0, 45};
}  // namespace spans

enum class WindowTag { Pre45, Post45, TMinus45, TMinus30, TMinus15, TPlus0, TPlus15, TPlus30 };

DaySpan span_of(WindowTag tag);
std::string_view to_string(WindowTag tag);
std::optional<WindowTag> parse_window_tag(std::string_view name);

// Deterministic random source with platform-independent distributions.
// std::uniform_int_distribution et al. are implementation-defined, which would
// make seeded outputs differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, n); n > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01();
  bool bernoulli(double p) { return uniform01() < p; }
  double exponential(double rate);
  std::uint64_t poisson(double mean);
  double normal();

  // Derives an independent stream for a sub-task (e.g. one tree, one fold).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

// Zero-based floor division for day bucketing of possibly negative timestamps.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace fanranker

template <typename Tag>
struct std::hash<fanranker::Id<Tag>> {
  std::size_t operator()(const fanranker::Id<Tag>& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
