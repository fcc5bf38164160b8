#pragma once

// Member / non-member list construction, renewal detection and
// undersampling for training.

#include <iosfwd>
#include <span>
#include <vector>

#include "fanranker/core.hpp"
#include "fanranker/ingestion.hpp"

namespace fanranker {

enum class CohortLabel : std::uint8_t { Member, NonMember };

std::string_view to_string(CohortLabel label);

// One (viewer, membership-purchase session) pair. anchorTs is the start of
// the anchor session (T+0).
struct CohortRecord {
  ViewerId viewerId;
  StreamerId vtuberId;
  SessionId anchorSession;
  EpochSeconds anchorTs = 0;
  CohortLabel label = CohortLabel::NonMember;

  bool is_member() const { return label == CohortLabel::Member; }
  friend bool operator==(const CohortRecord&, const CohortRecord&) = default;
};

// Orders by (anchorTs, viewerId, vtuberId, anchorSession, label).
bool canonical_less(const CohortRecord& a, const CohortRecord& b);

inline constexpr int kCohortMarginDays = 45;

// First-time purchases made in sessions starting in [periodStart, periodEnd)
// become MEMBER records; every other viewer present in such a session who
// never bought a membership for that streamer becomes a NON_MEMBER record.
// Throws InsufficientMargin when the data does not cover 45 days beyond both
// period ends.
std::vector<CohortRecord> build_cohorts(const LogStore& store, EpochSeconds period_start,
                                        EpochSeconds period_end);

struct RenewalObservation {
  CohortRecord member;
  bool observable = false;
  bool renewed = false;  // meaningful only when observable
};

inline constexpr int kRenewalFromDays = 28;
inline constexpr int kRenewalToDays = 58;

// Renewal month is [anchor + 28d, anchor + 58d], both ends inclusive.
RenewalObservation detect_renewal(const LogStore& store, const CohortRecord& member);

struct RenewalSummary {
  std::size_t members = 0;
  std::size_t observable = 0;
  std::size_t renewed = 0;
  double observable_rate() const { return members ? double(observable) / double(members) : 0.0; }
  double renewal_rate() const { return observable ? double(renewed) / double(observable) : 0.0; }
};

RenewalSummary summarize_renewals(std::span<const RenewalObservation> observations);

// Keeps every member and samples non-members uniformly without replacement
// down to the member count. Output is in canonical order.
std::vector<CohortRecord> undersample(std::span<const CohortRecord> records, std::uint64_t seed);

std::vector<CohortRecord> members_of(std::span<const CohortRecord> records);

// CSV columns: viewerId,vtuberId,liveId,anchorTs,label
void write_cohort_csv(std::ostream& out, std::span<const CohortRecord> records);
std::vector<CohortRecord> read_cohort_csv(std::istream& in);

}  // namespace fanranker
