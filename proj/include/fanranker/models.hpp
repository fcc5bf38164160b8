#pragma once

// Five ranking learners behind one scoring interface, stratified k-fold
// cross-validation with grid search, and the .frm model file.
//
// .frm layout (little-endian):
//   bytes 0..7  magic "FRKMODEL"
//   u32         format version (1)
//   u8          model kind
//   u64         manifest hash
//   u32 + bytes column manifest JSON
//   u32 + bytes hyperparameter JSON
//   ...         kind-specific payload

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fanranker/core.hpp"
#include "fanranker/features.hpp"

namespace fanranker {

enum class ModelKind : std::uint8_t { LIR, LOR, RF, HGB, KNN };

std::string_view to_string(ModelKind kind);           // "LIR", ...
std::optional<ModelKind> parse_model_kind(std::string_view name);  // case-insensitive

// One flat set; each kind reads only its own fields.
struct Hyperparameters {
  // LOR: inverse L2 strength. The intercept is not penalized.
  double C = 1.0;
  int maxNewtonIter = 100;
  // RF
  int nTrees = 200;
  int maxDepth = 16;  // 0 = unlimited (RF only)
  // HGB
  double learningRate = 0.1;
  int maxIter = 100;
  int maxLeafNodes = 31;
  int minSamplesLeaf = 20;
  int maxBins = 255;
  double l2Regularization = 0.0;
  // KNN: Euclidean distance, self-inclusive search.
  int k = 50;

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

// Only the fields the kind uses.
std::string hyperparameters_json(ModelKind kind, const Hyperparameters& p);
Hyperparameters parse_hyperparameters_json(std::string_view text);
// Throws InvalidArgument for non-positive values the kind depends on.
void validate(ModelKind kind, const Hyperparameters& p);

class RankingModel {
 public:
  virtual ~RankingModel() = default;

  virtual ModelKind kind() const = 0;
  const Hyperparameters& hyperparameters() const { return params_; }
  bool fitted() const { return width_ > 0; }
  std::size_t width() const { return width_; }

  // Throws DegenerateLabels (a class is absent), TooFewRows (a class has < 2
  // rows) or DimensionMismatch (no columns).
  void fit(const LabeledMatrix& matrix, std::uint64_t seed);
  // Score in [0, 1]. Throws NotFitted or DimensionMismatch.
  double predict_score(std::span<const double> x) const;
  std::vector<double> predict(const LabeledMatrix& matrix) const;

  virtual void save_payload(std::ostream& out) const = 0;
  virtual void load_payload(std::istream& in, std::size_t width) = 0;

 protected:
  explicit RankingModel(Hyperparameters params) : params_(params) {}

  virtual void fit_impl(const LabeledMatrix& matrix, std::uint64_t seed) = 0;
  virtual double score_impl(std::span<const double> x) const = 0;

  Hyperparameters params_;
  std::size_t width_ = 0;
};

std::unique_ptr<RankingModel> make_model(ModelKind kind, const Hyperparameters& params = {});

// Least squares on 0/1 targets, output clamped to [0, 1].
class LinearRegressionModel final : public RankingModel {
 public:
  explicit LinearRegressionModel(Hyperparameters params = {}) : RankingModel(params) {}
  static LinearRegressionModel from_coefficients(std::vector<double> weights, double intercept);

  ModelKind kind() const override { return ModelKind::LIR; }
  std::span<const double> weights() const { return weights_; }
  double intercept() const { return intercept_; }
  double raw(std::span<const double> x) const;

  void save_payload(std::ostream& out) const override;
  void load_payload(std::istream& in, std::size_t width) override;

 private:
  void fit_impl(const LabeledMatrix& matrix, std::uint64_t seed) override;
  double score_impl(std::span<const double> x) const override;

  std::vector<double> weights_;
  double intercept_ = 0.0;
};

// L2-penalized logistic regression solved by Newton's method.
class LogisticRegressionModel final : public RankingModel {
 public:
  explicit LogisticRegressionModel(Hyperparameters params = {}) : RankingModel(params) {}
  static LogisticRegressionModel from_coefficients(std::vector<double> weights, double intercept);

  ModelKind kind() const override { return ModelKind::LOR; }
  std::span<const double> weights() const { return weights_; }
  double intercept() const { return intercept_; }

  void save_payload(std::ostream& out) const override;
  void load_payload(std::istream& in, std::size_t width) override;

 private:
  void fit_impl(const LabeledMatrix& matrix, std::uint64_t seed) override;
  double score_impl(std::span<const double> x) const override;

  std::vector<double> weights_;
  double intercept_ = 0.0;
};

// Binary decision tree node shared by RF and HGB. Leaves have feature < 0.
struct TreeNode {
  std::int32_t feature = -1;
  double threshold = 0.0;  // x <= threshold goes left
  bool missingLeft = true;  // NaN routing
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at 0

  double evaluate(std::span<const double> x) const;
  std::size_t leaves() const;
  std::size_t depth() const;
};

// Bootstrap CART forest, gini splits, sqrt(width) candidate features per
// node; score = mean of leaf positive fractions.
class RandomForestModel final : public RankingModel {
 public:
  explicit RandomForestModel(Hyperparameters params = {}) : RankingModel(params) {}

  ModelKind kind() const override { return ModelKind::RF; }
  std::span<const Tree> trees() const { return trees_; }

  void save_payload(std::ostream& out) const override;
  void load_payload(std::istream& in, std::size_t width) override;

 private:
  void fit_impl(const LabeledMatrix& matrix, std::uint64_t seed) override;
  double score_impl(std::span<const double> x) const override;

  std::vector<Tree> trees_;
};

// Histogram gradient boosting on log-loss with leaf-wise growth and no depth
// limit. NaN inputs get their own bin and follow the better side.
class HistGradientBoostingModel final : public RankingModel {
 public:
  explicit HistGradientBoostingModel(Hyperparameters params = {}) : RankingModel(params) {}

  ModelKind kind() const override { return ModelKind::HGB; }
  std::span<const Tree> trees() const { return trees_; }
  double baseline() const { return baseline_; }

  void save_payload(std::ostream& out) const override;
  void load_payload(std::istream& in, std::size_t width) override;

 private:
  void fit_impl(const LabeledMatrix& matrix, std::uint64_t seed) override;
  double score_impl(std::span<const double> x) const override;

  double baseline_ = 0.0;
  std::vector<Tree> trees_;
};

// Fraction of positive rows among the k nearest training rows (Euclidean,
// ties broken by training row order). No feature scaling.
class KnnModel final : public RankingModel {
 public:
  explicit KnnModel(Hyperparameters params = {}) : RankingModel(params) {}

  ModelKind kind() const override { return ModelKind::KNN; }

  void save_payload(std::ostream& out) const override;
  void load_payload(std::istream& in, std::size_t width) override;

 private:
  void fit_impl(const LabeledMatrix& matrix, std::uint64_t seed) override;
  double score_impl(std::span<const double> x) const override;

  std::vector<double> x_;
  std::vector<std::uint8_t> y_;
};

// Bin edges for one feature column: up to max_bins - 1 thresholds over the
// finite values. Midpoints between distinct values when they fit, else
// quantile midpoints.
std::vector<double> bin_thresholds(std::span<const double> column, int max_bins);

inline constexpr double kLogLossEpsilon = 1e-15;

double log_loss(std::span<const std::uint8_t> labels, std::span<const double> scores);
double accuracy(std::span<const std::uint8_t> labels, std::span<const double> scores);

// k validation folds partitioning the rows, stratified by label.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::uint8_t> labels, std::size_t k,
                                                       std::uint64_t seed);

struct FoldMetrics {
  double logLoss = 0.0;
  double accuracy = 0.0;
};

struct GridPointResult {
  Hyperparameters params;
  std::vector<FoldMetrics> folds;
  double meanLogLoss = 0.0;
  double meanAccuracy = 0.0;
};

struct CvReport {
  ModelKind kind = ModelKind::LIR;
  std::vector<std::vector<std::size_t>> folds;
  std::vector<GridPointResult> grid;
  std::size_t chosen = 0;

  const Hyperparameters& chosen_params() const { return grid.at(chosen).params; }
  std::string to_json() const;
};

inline constexpr std::size_t kDefaultFolds = 5;

// Grid search on mean validation log-loss; ties go to the earlier point.
// Throws TooFewRows (< 10 rows) and InvalidArgument (empty grid).
CvReport cross_validate(ModelKind kind, const LabeledMatrix& matrix, std::span<const Hyperparameters> grid,
                        std::uint64_t seed, std::size_t folds = kDefaultFolds);

// The search grids; the kind's defaults are always a member.
std::vector<Hyperparameters> default_grid(ModelKind kind);

struct ModelArtifact {
  std::unique_ptr<RankingModel> model;
  std::vector<FeatureColumn> columns;
  std::uint64_t manifestHash = 0;
};

void save_model(std::ostream& out, const RankingModel& model, std::span<const FeatureColumn> columns);
void save_model(const std::filesystem::path& path, const RankingModel& model,
                std::span<const FeatureColumn> columns);
// With `expected`, throws ManifestMismatch unless the stored manifest equals it.
ModelArtifact load_model(std::istream& in, std::optional<std::span<const FeatureColumn>> expected = {});
ModelArtifact load_model(const std::filesystem::path& path,
                         std::optional<std::span<const FeatureColumn>> expected = {});

}  // namespace fanranker
