#pragma once

// Rank-position evaluation of a member among the non-member viewers of the
// purchase session, count baselines, permutation importance, the ChatSim
// ablation and the chi-square renewal test.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fanranker/cohort.hpp"
#include "fanranker/core.hpp"
#include "fanranker/features.hpp"
#include "fanranker/ingestion.hpp"
#include "fanranker/metrics.hpp"
#include "fanranker/models.hpp"

namespace fanranker {

inline constexpr std::size_t kTopN = 50;

struct RankResult {
  CohortRecord member;
  std::size_t rank = 0;  // 0 is best
  double percentile = 0.0;
  std::size_t poolSize = 0;
  double memberScore = 0.0;
};

// |{o > member}| + |{o == member}|: ties count against the member.
std::size_t rank_position(double member, std::span<const double> others);
// Throws EmptyPool.
RankResult rank_from_scores(const CohortRecord& member, double member_score, std::span<const double> others);

// NON_MEMBER records grouped by (anchor session, streamer).
class SessionPools {
 public:
  explicit SessionPools(std::span<const CohortRecord> cohort);

  std::span<const CohortRecord> pool(const CohortRecord& member) const;
  std::size_t size() const { return pools_.size(); }

 private:
  std::map<std::pair<SessionId, StreamerId>, std::vector<CohortRecord>> pools_;
};

// Maps a model's column manifest into the canonical 35-wide vector.
// Throws ManifestMismatch if a column is not canonical.
std::vector<std::size_t> column_projection(std::span<const FeatureColumn> columns);

// Scores cohort records with a model, extracting canonical features and
// projecting them onto the model's columns.
class RecordScorer {
 public:
  RecordScorer(const RankingModel& model, const FeatureExtractor& extractor, std::span<const FeatureColumn> columns);

  double operator()(const CohortRecord& record) const;
  double score_vector(std::span<const double> canonical) const;

 private:
  const RankingModel& model_;
  const FeatureExtractor& extractor_;
  std::vector<std::size_t> projection_;
};

RankResult rank_member(const RecordScorer& scorer, const CohortRecord& member,
                       std::span<const CohortRecord> others);

struct Quantiles {
  double mean = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
};

// Linear interpolation between order statistics. Throws InvalidArgument when empty.
double quantile(std::vector<double> values, double q);
Quantiles summarize(std::span<const double> values);

struct EvaluationReport {
  std::vector<RankResult> results;
  std::size_t skippedEmptyPool = 0;
  Quantiles rank;
  Quantiles percentile;
  double fractionRank0 = 0.0;
  double fractionTopN = 0.0;  // rank < kTopN

  // (rank, cumulative fraction of members with rank <= it)
  std::vector<std::pair<std::size_t, double>> rank_cdf() const;
  std::string to_json() const;
};

EvaluationReport summarize(std::vector<RankResult> results, std::size_t skipped_empty_pool = 0);

// Members of `test` ranked against their session pools from `cohort`;
// members with an empty pool are skipped and counted.
EvaluationReport evaluate_suite(const RecordScorer& scorer, std::span<const CohortRecord> test,
                                const SessionPools& pools);

enum class BaselineCriterion { ChatCount, GiftCount };

std::string_view to_string(BaselineCriterion c);
std::optional<BaselineCriterion> parse_baseline_criterion(std::string_view name);

inline constexpr DaySpan kBaselineSpan{-30, -1};

// CHAT events, or GIFT + SUPERCHAT events, sent to the record's streamer with
// sendDate in [T-30, T-1).
std::int64_t baseline_count(const LogStore& store, const CohortRecord& record, BaselineCriterion criterion);
RankResult baseline_rank(const LogStore& store, const CohortRecord& member, std::span<const CohortRecord> others,
                         BaselineCriterion criterion);
EvaluationReport evaluate_baseline(const LogStore& store, std::span<const CohortRecord> test,
                                   const SessionPools& pools, BaselineCriterion criterion);

// Produces the permutation applied to a column; the default draws a uniform
// shuffle. A hook may overwrite `perm` (initially the identity).
using PermutationHook = std::function<void(std::vector<std::size_t>& perm, std::size_t column, std::size_t repeat)>;

inline constexpr std::size_t kImportanceRepeats = 5;

struct ImportanceReport {
  std::vector<std::string> names;
  double baselineLogLoss = 0.0;
  std::vector<double> meanDrop;  // mean log-loss increase
  std::vector<double> scaled;    // min-max scaled to [0, 1]; all 0 when constant

  std::string to_csv() const;
};

ImportanceReport permutation_importance(const RankingModel& model, const LabeledMatrix& heldout,
                                        std::size_t repeats, std::uint64_t seed,
                                        const PermutationHook& hook = {});

// Drops the 3 ChatSim values and the 2 presence flags. Throws
// ManifestMismatch unless the matrix has the canonical columns.
LabeledMatrix ablate_chatsim(const LabeledMatrix& matrix);
std::vector<FeatureColumn> ablated_columns();

struct ChiSquareResult {
  double statistic = 0.0;
  int degreesOfFreedom = 0;
  double pValue = 1.0;
};

// Pearson's test on an r x c table of counts (r, c >= 2, rectangular).
// Throws DegenerateTable when a row or column sums to 0, InvalidArgument on a
// malformed table.
ChiSquareResult chi_square_independence(const std::vector<std::vector<double>>& table);
// Upper tail of the chi-square distribution.
double chi_square_survival(double statistic, int dof);

// sign(at_t30 - at_t0) with exact-equality zero.
int decline_category(double at_t0, double at_t30);

inline constexpr DaySpan kDeclineEarly = spans::kPost0;
inline constexpr DaySpan kDeclineLate = spans::kPost30;

struct RenewalChiSquareRow {
  std::string metric;
  // rows: decline -1, 0, +1; columns: not renewed, renewed
  std::vector<std::vector<double>> table;
  std::vector<int> droppedCategories;  // empty rows left out of the test
  std::optional<ChiSquareResult> result;  // nullopt when still degenerate
};

// One row per activity metric for the observable members.
std::vector<RenewalChiSquareRow> renewal_chi_square(const LogStore& store,
                                                    std::span<const RenewalObservation> observations,
                                                    const MetricOptions& options = {});
std::string renewal_chi_square_json(std::span<const RenewalChiSquareRow> rows);

}  // namespace fanranker
