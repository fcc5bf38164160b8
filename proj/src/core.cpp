#include "fanranker/core.hpp"

#include <cmath>

namespace fanranker {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::InvalidTimespan: return "InvalidTimespan";
    case ErrorCode::UnknownTypeCode: return "UnknownTypeCode";
    case ErrorCode::NegativePrice: return "NegativePrice";
    case ErrorCode::OrphanEvent: return "OrphanEvent";
    case ErrorCode::EventOutsideSession: return "EventOutsideSession";
    case ErrorCode::EmptyChatMessage: return "EmptyChatMessage";
    case ErrorCode::NonPositiveMembershipPrice: return "NonPositiveMembershipPrice";
    case ErrorCode::DuplicateSession: return "DuplicateSession";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptySession: return "EmptySession";
    case ErrorCode::EmptyCohort: return "EmptyCohort";
    case ErrorCode::InsufficientMargin: return "InsufficientMargin";
    case ErrorCode::NotEnoughNonMembers: return "NotEnoughNonMembers";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotFitted: return "NotFitted";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::EmptyPool: return "EmptyPool";
    case ErrorCode::ManifestMismatch: return "ManifestMismatch";
    case ErrorCode::DegenerateTable: return "DegenerateTable";
    case ErrorCode::ProviderFailure: return "ProviderFailure";
    case ErrorCode::UnknownSession: return "UnknownSession";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

std::string_view to_string(InteractionKind kind) {
  switch (kind) {
    case InteractionKind::Enter: return "ENTER";
    case InteractionKind::Chat: return "CHAT";
    case InteractionKind::Gift: return "GIFT";
    case InteractionKind::SuperChat: return "SUPERCHAT";
    case InteractionKind::Membership: return "MEMBERSHIP";
  }
  return "ENTER";
}

std::optional<InteractionKind> parse_interaction_kind(std::string_view name) {
  if (name == "ENTER") return InteractionKind::Enter;
  if (name == "CHAT") return InteractionKind::Chat;
  if (name == "GIFT") return InteractionKind::Gift;
  if (name == "SUPERCHAT") return InteractionKind::SuperChat;
  if (name == "MEMBERSHIP") return InteractionKind::Membership;
  return std::nullopt;
}

Window::Window(EpochSeconds anchor_ts, int start_days, int end_days)
    : anchor(anchor_ts), offsetStartDays(start_days), offsetEndDays(end_days) {
  if (start_days >= end_days) {
    throw Error(ErrorCode::InvalidArgument, "window start offset must precede end offset");
  }
}

DaySpan span_of(WindowTag tag) {
  switch (tag) {
    case WindowTag::Pre45: return spans::kPreAll;
    case WindowTag::Post45: return spans::kPostAll;
    case WindowTag::TMinus45: return spans::kPre45;
    case WindowTag::TMinus30: return spans::kPre30;
    case WindowTag::TMinus15: return spans::kPre15;
    case WindowTag::TPlus0: return spans::kPost0;
    case WindowTag::TPlus15: return spans::kPost15;
    case WindowTag::TPlus30: return spans::kPost30;
  }
  return spans::kPreAll;
}

std::string_view to_string(WindowTag tag) {
  switch (tag) {
    case WindowTag::Pre45: return "PRE45";
    case WindowTag::Post45: return "POST45";
    case WindowTag::TMinus45: return "T-45";
    case WindowTag::TMinus30: return "T-30";
    case WindowTag::TMinus15: return "T-15";
    case WindowTag::TPlus0: return "T+0";
    case WindowTag::TPlus15: return "T+15";
    case WindowTag::TPlus30: return "T+30";
  }
  return "PRE45";
}

std::optional<WindowTag> parse_window_tag(std::string_view name) {
  for (auto tag : {WindowTag::Pre45, WindowTag::Post45, WindowTag::TMinus45, WindowTag::TMinus30,
                   WindowTag::TMinus15, WindowTag::TPlus0, WindowTag::TPlus15, WindowTag::TPlus30}) {
    if (to_string(tag) == name) return tag;
  }
  return std::nullopt;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "uniform_index over empty range");
  // Rejection sampling keeps the result exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::exponential(double rate) { return -std::log1p(-uniform01()) / rate; }

std::uint64_t Rng::poisson(double mean) {
  if (mean <= 0.0) return 0;
  if (mean < 30.0) {
    const double limit = std::exp(-mean);
    double product = uniform01();
    std::uint64_t k = 0;
    while (product > limit) {
      ++k;
      product *= uniform01();
    }
    return k;
  }
  // Normal approximation is adequate for the large rates used in synthesis.
  const double x = std::round(mean + std::sqrt(mean) * normal());
  return x < 0.0 ? 0 : static_cast<std::uint64_t>(x);
}

double Rng::normal() {
  // Box-Muller; one draw discarded for simplicity.
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fanranker
