#include "fanranker/cohort.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace fanranker {

std::string_view to_string(CohortLabel label) {
  return label == CohortLabel::Member ? "MEMBER" : "NON_MEMBER";
}

bool canonical_less(const CohortRecord& a, const CohortRecord& b) {
  return std::tie(a.anchorTs, a.viewerId, a.vtuberId, a.anchorSession, a.label) <
         std::tie(b.anchorTs, b.viewerId, b.vtuberId, b.anchorSession, b.label);
}

namespace {

using PairKey = std::pair<ViewerId, StreamerId>;

}  // namespace

std::vector<CohortRecord> build_cohorts(const LogStore& store, EpochSeconds period_start,
                                        EpochSeconds period_end) {
  if (period_start >= period_end) {
    throw Error(ErrorCode::InvalidArgument, "period start must precede period end");
  }
  const auto range = store.time_range();
  const EpochSeconds margin = kCohortMarginDays * kSecondsPerDay;
  if (!range || range->first > period_start - margin || range->second < period_end + margin) {
    throw Error(ErrorCode::InsufficientMargin,
                "data must extend 45 days before the period start and after the period end");
  }

  // First purchase per (viewer, streamer) over the whole dataset. Events are
  // compared by (sendDate, event index), which is the store's canonical order.
  std::map<PairKey, EventIndex> first_purchase;
  const auto events = store.events();
  for (EventIndex i = 0; i < events.size(); ++i) {
    if (events[i].kind != InteractionKind::Membership) continue;
    const PairKey key{events[i].uId, store.session(store.session_of(i)).uId};
    auto [it, inserted] = first_purchase.emplace(key, i);
    if (!inserted) {
      const auto& cur = events[it->second];
      if (events[i].sendDate < cur.sendDate) it->second = i;
    }
  }

  std::vector<CohortRecord> out;
  std::set<SessionIndex> anchor_sessions;
  for (const auto& [key, idx] : first_purchase) {
    const SessionIndex s = store.session_of(idx);
    const LiveSession& session = store.session(s);
    if (session.startDate < period_start || session.startDate >= period_end) continue;
    out.push_back({key.first, key.second, session.liveId, session.startDate, CohortLabel::Member});
    anchor_sessions.insert(s);
  }

  for (SessionIndex s : anchor_sessions) {
    const LiveSession& session = store.session(s);
    std::set<ViewerId> present;
    for (const auto& e : store.session_events(s)) present.insert(e.uId);
    for (ViewerId v : present) {
      if (first_purchase.count({v, session.uId}) != 0) continue;
      out.push_back({v, session.uId, session.liveId, session.startDate, CohortLabel::NonMember});
    }
  }
  std::sort(out.begin(), out.end(), canonical_less);
  return out;
}

RenewalObservation detect_renewal(const LogStore& store, const CohortRecord& member) {
  RenewalObservation obs{member, false, false};
  const EpochSeconds from = member.anchorTs + kRenewalFromDays * kSecondsPerDay;
  const EpochSeconds to_inclusive = member.anchorTs + kRenewalToDays * kSecondsPerDay;
  obs.observable = !store.streamer_sessions_between(member.vtuberId, from, to_inclusive + 1).empty();
  if (!obs.observable) return obs;
  for (EventIndex i : store.viewer_events_between(member.viewerId, from, to_inclusive + 1)) {
    const auto& e = store.event(i);
    if (e.kind == InteractionKind::Membership && store.session(store.session_of(i)).uId == member.vtuberId) {
      obs.renewed = true;
      break;
    }
  }
  return obs;
}

RenewalSummary summarize_renewals(std::span<const RenewalObservation> observations) {
  RenewalSummary summary;
  for (const auto& o : observations) {
    ++summary.members;
    if (!o.observable) continue;
    ++summary.observable;
    if (o.renewed) ++summary.renewed;
  }
  return summary;
}

std::vector<CohortRecord> members_of(std::span<const CohortRecord> records) {
  std::vector<CohortRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [](const CohortRecord& r) { return r.is_member(); });
  return out;
}

std::vector<CohortRecord> undersample(std::span<const CohortRecord> records, std::uint64_t seed) {
  std::vector<CohortRecord> members;
  std::vector<CohortRecord> non_members;
  for (const auto& r : records) (r.is_member() ? members : non_members).push_back(r);
  if (non_members.size() < members.size()) {
    throw Error(ErrorCode::NotEnoughNonMembers, std::to_string(non_members.size()) + " non-members for " +
                                                    std::to_string(members.size()) + " members");
  }
  // Sampling is defined over canonical order so input order does not matter.
  std::sort(non_members.begin(), non_members.end(), canonical_less);
  Rng rng(seed);
  const std::size_t keep = members.size();
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + rng.uniform_index(non_members.size() - i);
    std::swap(non_members[i], non_members[j]);
  }
  non_members.resize(keep);
  members.insert(members.end(), non_members.begin(), non_members.end());
  std::sort(members.begin(), members.end(), canonical_less);
  return members;
}

void write_cohort_csv(std::ostream& out, std::span<const CohortRecord> records) {
  out << "viewerId,vtuberId,liveId,anchorTs,label\n";
  for (const auto& r : records) {
    out << r.viewerId.value << ',' << r.vtuberId.value << ',' << r.anchorSession << ',' << r.anchorTs << ','
        << to_string(r.label) << '\n';
  }
}

std::vector<CohortRecord> read_cohort_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("viewerId,vtuberId,liveId,anchorTs,label", 0) != 0) {
    throw Error(ErrorCode::MalformedRecord, "cohort CSV header missing");
  }
  std::vector<CohortRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw Error(ErrorCode::MalformedRecord, "cohort CSV line " + std::to_string(line_no));
    }
    CohortRecord r;
    try {
      r.viewerId = ViewerId(std::stoull(cells[0]));
      r.vtuberId = StreamerId(std::stoull(cells[1]));
      r.anchorSession = cells[2];
      r.anchorTs = std::stoll(cells[3]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedRecord, "cohort CSV line " + std::to_string(line_no));
    }
    if (cells[4] == "MEMBER") {
      r.label = CohortLabel::Member;
    } else if (cells[4] == "NON_MEMBER") {
      r.label = CohortLabel::NonMember;
    } else {
      throw Error(ErrorCode::MalformedRecord, "unknown label '" + cells[4] + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fanranker
