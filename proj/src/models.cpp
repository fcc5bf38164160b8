#include "fanranker/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"

namespace fanranker {

using nlohmann::ordered_json;

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::LIR: return "LIR";
    case ModelKind::LOR: return "LOR";
    case ModelKind::RF: return "RF";
    case ModelKind::HGB: return "HGB";
    case ModelKind::KNN: return "KNN";
  }
  return "LIR";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  for (auto k : {ModelKind::LIR, ModelKind::LOR, ModelKind::RF, ModelKind::HGB, ModelKind::KNN}) {
    if (upper == to_string(k)) return k;
  }
  return std::nullopt;
}

namespace {

ordered_json params_to_json(ModelKind kind, const Hyperparameters& p) {
  ordered_json j = ordered_json::object();
  switch (kind) {
    case ModelKind::LIR: break;
    case ModelKind::LOR:
      j["C"] = p.C;
      j["maxNewtonIter"] = p.maxNewtonIter;
      break;
    case ModelKind::RF:
      j["nTrees"] = p.nTrees;
      j["maxDepth"] = p.maxDepth;
      break;
    case ModelKind::HGB:
      j["learningRate"] = p.learningRate;
      j["maxIter"] = p.maxIter;
      j["maxLeafNodes"] = p.maxLeafNodes;
      j["minSamplesLeaf"] = p.minSamplesLeaf;
      j["maxBins"] = p.maxBins;
      j["l2Regularization"] = p.l2Regularization;
      break;
    case ModelKind::KNN: j["k"] = p.k; break;
  }
  return j;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

std::string hyperparameters_json(ModelKind kind, const Hyperparameters& p) { return params_to_json(kind, p).dump(); }

Hyperparameters parse_hyperparameters_json(std::string_view text) {
  auto j = ordered_json::parse(text.begin(), text.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidConfig, "hyperparameters must be an object");
  Hyperparameters p;
  try {
    p.C = j.value("C", p.C);
    p.maxNewtonIter = j.value("maxNewtonIter", p.maxNewtonIter);
    p.nTrees = j.value("nTrees", p.nTrees);
    p.maxDepth = j.value("maxDepth", p.maxDepth);
    p.learningRate = j.value("learningRate", p.learningRate);
    p.maxIter = j.value("maxIter", p.maxIter);
    p.maxLeafNodes = j.value("maxLeafNodes", p.maxLeafNodes);
    p.minSamplesLeaf = j.value("minSamplesLeaf", p.minSamplesLeaf);
    p.maxBins = j.value("maxBins", p.maxBins);
    p.l2Regularization = j.value("l2Regularization", p.l2Regularization);
    p.k = j.value("k", p.k);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("bad hyperparameter: ") + e.what());
  }
  return p;
}

void validate(ModelKind kind, const Hyperparameters& p) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, what);
  };
  switch (kind) {
    case ModelKind::LIR: break;
    case ModelKind::LOR:
      require(p.C > 0, "C must be positive");
      require(p.maxNewtonIter > 0, "maxNewtonIter must be positive");
      break;
    case ModelKind::RF:
      require(p.nTrees > 0, "nTrees must be positive");
      require(p.maxDepth >= 0, "maxDepth must be >= 0");
      break;
    case ModelKind::HGB:
      require(p.learningRate > 0, "learningRate must be positive");
      require(p.maxIter > 0, "maxIter must be positive");
      require(p.maxLeafNodes >= 2, "maxLeafNodes must be >= 2");
      require(p.minSamplesLeaf > 0, "minSamplesLeaf must be positive");
      require(p.maxBins >= 2 && p.maxBins <= 255, "maxBins must be in [2, 255]");
      require(p.l2Regularization >= 0, "l2Regularization must be >= 0");
      break;
    case ModelKind::KNN: require(p.k > 0, "k must be positive"); break;
  }
}

// ---------------------------------------------------------------- base

void RankingModel::fit(const LabeledMatrix& matrix, std::uint64_t seed) {
  if (matrix.cols() == 0) throw Error(ErrorCode::DimensionMismatch, "matrix has no columns");
  if (matrix.values.size() != matrix.rows() * matrix.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "matrix values do not match its shape");
  }
  const std::size_t pos = matrix.positives();
  const std::size_t neg = matrix.rows() - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorCode::DegenerateLabels, "training labels contain a single class");
  if (pos < 2 || neg < 2) throw Error(ErrorCode::TooFewRows, "need at least 2 rows per class");
  for (double v : matrix.values) {
    if (std::isinf(v) || (std::isnan(v) && kind() != ModelKind::HGB)) {
      throw Error(ErrorCode::InvalidArgument, "non-finite feature value");
    }
  }
  validate(kind(), params_);
  width_ = 0;
  fit_impl(matrix, seed);
  width_ = matrix.cols();
}

double RankingModel::predict_score(std::span<const double> x) const {
  if (!fitted()) throw Error(ErrorCode::NotFitted, "model is not fitted");
  if (x.size() != width_) {
    throw Error(ErrorCode::DimensionMismatch,
                "input width " + std::to_string(x.size()) + " != " + std::to_string(width_));
  }
  const double s = score_impl(x);
  if (std::isnan(s)) return 0.0;
  return std::clamp(s, 0.0, 1.0);
}

std::vector<double> RankingModel::predict(const LabeledMatrix& matrix) const {
  std::vector<double> out(matrix.rows());
  for (std::size_t i = 0; i < matrix.rows(); ++i) out[i] = predict_score(matrix.row(i));
  return out;
}

std::unique_ptr<RankingModel> make_model(ModelKind kind, const Hyperparameters& params) {
  switch (kind) {
    case ModelKind::LIR: return std::make_unique<LinearRegressionModel>(params);
    case ModelKind::LOR: return std::make_unique<LogisticRegressionModel>(params);
    case ModelKind::RF: return std::make_unique<RandomForestModel>(params);
    case ModelKind::HGB: return std::make_unique<HistGradientBoostingModel>(params);
    case ModelKind::KNN: return std::make_unique<KnnModel>(params);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown model kind");
}

namespace {

Eigen::MatrixXd design_matrix(const LabeledMatrix& m) {
  Eigen::MatrixXd a(m.rows(), m.cols() + 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) a(i, j) = m.at(i, j);
    a(i, m.cols()) = 1.0;
  }
  return a;
}

double dot(std::span<const double> w, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
  return s;
}

void put_vector(std::ostream& out, std::span<const double> v) {
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
  for (double x : v) bin::put<double>(out, x);
}

std::vector<double> get_vector(std::istream& in, std::size_t expected) {
  const auto n = bin::get<std::uint32_t>(in);
  if (n != expected) throw Error(ErrorCode::IoError, "model payload width mismatch");
  std::vector<double> v(n);
  for (auto& x : v) x = bin::get<double>(in);
  return v;
}

}  // namespace

// ---------------------------------------------------------------- LIR

LinearRegressionModel LinearRegressionModel::from_coefficients(std::vector<double> weights, double intercept) {
  LinearRegressionModel m;
  m.width_ = weights.size();
  m.weights_ = std::move(weights);
  m.intercept_ = intercept;
  return m;
}

void LinearRegressionModel::fit_impl(const LabeledMatrix& matrix, std::uint64_t) {
  const Eigen::MatrixXd a = design_matrix(matrix);
  Eigen::VectorXd y(matrix.rows());
  for (std::size_t i = 0; i < matrix.rows(); ++i) y(i) = matrix.labels[i];
  const Eigen::VectorXd beta = a.completeOrthogonalDecomposition().solve(y);
  weights_.assign(beta.data(), beta.data() + matrix.cols());
  intercept_ = beta(static_cast<Eigen::Index>(matrix.cols()));
}

double LinearRegressionModel::raw(std::span<const double> x) const { return dot(weights_, x) + intercept_; }

double LinearRegressionModel::score_impl(std::span<const double> x) const { return std::clamp(raw(x), 0.0, 1.0); }

void LinearRegressionModel::save_payload(std::ostream& out) const {
  put_vector(out, weights_);
  bin::put<double>(out, intercept_);
}

void LinearRegressionModel::load_payload(std::istream& in, std::size_t width) {
  weights_ = get_vector(in, width);
  intercept_ = bin::get<double>(in);
  width_ = width;
}

// ---------------------------------------------------------------- LOR

LogisticRegressionModel LogisticRegressionModel::from_coefficients(std::vector<double> weights, double intercept) {
  LogisticRegressionModel m;
  m.width_ = weights.size();
  m.weights_ = std::move(weights);
  m.intercept_ = intercept;
  return m;
}

void LogisticRegressionModel::fit_impl(const LabeledMatrix& matrix, std::uint64_t) {
  const Eigen::MatrixXd a = design_matrix(matrix);
  const auto n = a.rows();
  const auto d = a.cols();  // last column is the intercept
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = matrix.labels[static_cast<std::size_t>(i)];
  const double c = params_.C;

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = a * beta;
    double f = 0.5 * beta.head(d - 1).squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) f += c * (softplus(z(i)) - y(i) * z(i));
    return f;
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  double f = objective(beta);
  for (int iter = 0; iter < params_.maxNewtonIter; ++iter) {
    const Eigen::VectorXd z = a * beta;
    Eigen::VectorXd p(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      s(i) = p(i) * (1.0 - p(i));
    }
    Eigen::VectorXd grad = c * (a.transpose() * (p - y));
    grad.head(d - 1) += beta.head(d - 1);
    if (grad.lpNorm<Eigen::Infinity>() < 1e-10 * (1.0 + c * static_cast<double>(n))) break;

    Eigen::MatrixXd h = c * (a.transpose() * s.asDiagonal() * a);
    h.diagonal().head(d - 1).array() += 1.0;
    h.diagonal().array() += 1e-12 * (1.0 + h.diagonal().cwiseAbs().maxCoeff());
    const Eigen::VectorXd step = h.ldlt().solve(grad);

    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd candidate = beta - t * step;
      const double fc = objective(candidate);
      if (fc <= f - 1e-4 * t * grad.dot(step)) {
        beta = candidate;
        f = fc;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved || (t * step).lpNorm<Eigen::Infinity>() < 1e-14 * (1.0 + beta.lpNorm<Eigen::Infinity>())) break;
  }
  weights_.assign(beta.data(), beta.data() + (d - 1));
  intercept_ = beta(d - 1);
}

double LogisticRegressionModel::score_impl(std::span<const double> x) const {
  return sigmoid(dot(weights_, x) + intercept_);
}

void LogisticRegressionModel::save_payload(std::ostream& out) const {
  put_vector(out, weights_);
  bin::put<double>(out, intercept_);
}

void LogisticRegressionModel::load_payload(std::istream& in, std::size_t width) {
  weights_ = get_vector(in, width);
  intercept_ = bin::get<double>(in);
  width_ = width;
}

// ---------------------------------------------------------------- trees

double Tree::evaluate(std::span<const double> x) const {
  std::int32_t at = 0;
  while (true) {
    const TreeNode& n = nodes[static_cast<std::size_t>(at)];
    if (n.feature < 0) return n.value;
    const double v = x[static_cast<std::size_t>(n.feature)];
    const bool left = std::isnan(v) ? n.missingLeft : v <= n.threshold;
    at = left ? n.left : n.right;
  }
}

std::size_t Tree::leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

std::size_t Tree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<std::int32_t, std::size_t>> stack{{0, 0}};
  std::size_t best = 0;
  while (!stack.empty()) {
    auto [at, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    const TreeNode& n = nodes[static_cast<std::size_t>(at)];
    if (n.feature >= 0) {
      stack.emplace_back(n.left, d + 1);
      stack.emplace_back(n.right, d + 1);
    }
  }
  return best;
}

namespace {

void put_tree(std::ostream& out, const Tree& t) {
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.nodes.size()));
  for (const auto& n : t.nodes) {
    bin::put<std::int32_t>(out, n.feature);
    bin::put<double>(out, n.threshold);
    bin::put<std::uint8_t>(out, n.missingLeft ? 1 : 0);
    bin::put<std::int32_t>(out, n.left);
    bin::put<std::int32_t>(out, n.right);
    bin::put<double>(out, n.value);
  }
}

Tree get_tree(std::istream& in, std::size_t width) {
  Tree t;
  const auto count = bin::get<std::uint32_t>(in);
  if (count == 0) throw Error(ErrorCode::IoError, "empty tree in model payload");
  t.nodes.resize(count);
  for (auto& n : t.nodes) {
    n.feature = bin::get<std::int32_t>(in);
    n.threshold = bin::get<double>(in);
    n.missingLeft = bin::get<std::uint8_t>(in) != 0;
    n.left = bin::get<std::int32_t>(in);
    n.right = bin::get<std::int32_t>(in);
    n.value = bin::get<double>(in);
  }
  // Children must point forward so evaluation terminates.
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const auto& n = t.nodes[i];
    if (n.feature < 0) continue;
    const auto ok = [&](std::int32_t c) { return c > static_cast<std::int32_t>(i) && c < static_cast<std::int32_t>(count); };
    if (static_cast<std::size_t>(n.feature) >= width || !ok(n.left) || !ok(n.right)) {
      throw Error(ErrorCode::IoError, "corrupt tree in model payload");
    }
  }
  return t;
}

double midpoint(double a, double b) {
  const double m = a + (b - a) / 2.0;
  return m < b ? m : a;
}

// CART builder over bootstrap weights.
class CartBuilder {
 public:
  CartBuilder(const LabeledMatrix& m, std::span<const std::uint32_t> weight, int max_depth, std::size_t mtry,
              Rng& rng)
      : m_(m), w_(weight), max_depth_(max_depth), mtry_(mtry), rng_(rng) {}

  Tree build() {
    std::vector<std::uint32_t> rows;
    for (std::uint32_t i = 0; i < w_.size(); ++i) {
      if (w_[i] > 0) rows.push_back(i);
    }
    tree_.nodes.clear();
    tree_.nodes.emplace_back();
    struct Task {
      std::int32_t node;
      std::vector<std::uint32_t> rows;
      int depth;
    };
    std::vector<Task> stack;
    stack.push_back({0, std::move(rows), 0});
    while (!stack.empty()) {
      Task task = std::move(stack.back());
      stack.pop_back();
      double total = 0, positive = 0;
      for (auto i : task.rows) {
        total += w_[i];
        positive += w_[i] * m_.labels[i];
      }
      TreeNode& node = tree_.nodes[static_cast<std::size_t>(task.node)];
      node.value = positive / total;
      if (positive == 0 || positive == total || task.rows.size() < 2 ||
          (max_depth_ > 0 && task.depth >= max_depth_)) {
        continue;
      }
      auto split = best_split(task.rows, total, positive);
      if (!split) continue;
      std::vector<std::uint32_t> left, right;
      for (auto i : task.rows) (m_.at(i, split->feature) <= split->threshold ? left : right).push_back(i);
      const auto l = static_cast<std::int32_t>(tree_.nodes.size());
      tree_.nodes.emplace_back();
      tree_.nodes.emplace_back();
      TreeNode& parent = tree_.nodes[static_cast<std::size_t>(task.node)];
      parent.feature = static_cast<std::int32_t>(split->feature);
      parent.threshold = split->threshold;
      parent.missingLeft = true;
      parent.left = l;
      parent.right = l + 1;
      stack.push_back({l + 1, std::move(right), task.depth + 1});
      stack.push_back({l, std::move(left), task.depth + 1});
    }
    return std::move(tree_);
  }

 private:
  struct Split {
    std::size_t feature;
    double threshold;
  };

  std::optional<Split> best_split(std::vector<std::uint32_t>& rows, double total, double positive) {
    const std::size_t d = m_.cols();
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::optional<Split> best;
    double best_impurity = std::numeric_limits<double>::infinity();
    std::size_t examined = 0;
    for (std::size_t k = 0; k < d && examined < mtry_; ++k) {
      // Lazy Fisher-Yates: draw the next candidate feature.
      std::swap(order[k], order[k + rng_.uniform_index(d - k)]);
      const std::size_t f = order[k];
      std::sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double va = m_.at(a, f), vb = m_.at(b, f);
        return va != vb ? va < vb : a < b;
      });
      if (m_.at(rows.front(), f) == m_.at(rows.back(), f)) continue;
      ++examined;
      double lw = 0, lp = 0;
      for (std::size_t r = 0; r + 1 < rows.size(); ++r) {
        lw += w_[rows[r]];
        lp += w_[rows[r]] * m_.labels[rows[r]];
        const double here = m_.at(rows[r], f), next = m_.at(rows[r + 1], f);
        if (here == next) continue;
        const double rw = total - lw, rp = positive - lp;
        const double impurity = 2.0 * lp * (1.0 - lp / lw) + 2.0 * rp * (1.0 - rp / rw);
        if (impurity < best_impurity) {
          best_impurity = impurity;
          best = Split{f, midpoint(here, next)};
        }
      }
    }
    return best;
  }

  const LabeledMatrix& m_;
  std::span<const std::uint32_t> w_;
  int max_depth_;
  std::size_t mtry_;
  Rng& rng_;
  Tree tree_;
};

}  // namespace

// ---------------------------------------------------------------- RF

void RandomForestModel::fit_impl(const LabeledMatrix& matrix, std::uint64_t seed) {
  const std::size_t n = matrix.rows();
  const auto mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(matrix.cols()))));
  trees_.clear();
  trees_.reserve(static_cast<std::size_t>(params_.nTrees));
  std::vector<std::uint32_t> weight(n);
  for (int t = 0; t < params_.nTrees; ++t) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(t)));
    std::fill(weight.begin(), weight.end(), 0u);
    for (std::size_t s = 0; s < n; ++s) ++weight[rng.uniform_index(n)];
    trees_.push_back(CartBuilder(matrix, weight, params_.maxDepth, mtry, rng).build());
  }
}

double RandomForestModel::score_impl(std::span<const double> x) const {
  double s = 0.0;
  for (const auto& t : trees_) s += t.evaluate(x);
  return s / static_cast<double>(trees_.size());
}

void RandomForestModel::save_payload(std::ostream& out) const {
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(trees_.size()));
  for (const auto& t : trees_) put_tree(out, t);
}

void RandomForestModel::load_payload(std::istream& in, std::size_t width) {
  const auto count = bin::get<std::uint32_t>(in);
  if (count == 0) throw Error(ErrorCode::IoError, "forest without trees");
  trees_.clear();
  for (std::uint32_t t = 0; t < count; ++t) trees_.push_back(get_tree(in, width));
  width_ = width;
}

// ---------------------------------------------------------------- HGB

std::vector<double> bin_thresholds(std::span<const double> column, int max_bins) {
  std::vector<double> v;
  v.reserve(column.size());
  for (double x : column) {
    if (std::isfinite(x)) v.push_back(x);
  }
  std::sort(v.begin(), v.end());
  std::vector<double> distinct;
  for (double x : v) {
    if (distinct.empty() || distinct.back() != x) distinct.push_back(x);
  }
  std::vector<double> out;
  if (distinct.size() <= 1) return out;
  const auto limit = static_cast<std::size_t>(max_bins);
  if (distinct.size() <= limit) {
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) out.push_back(midpoint(distinct[i], distinct[i + 1]));
    return out;
  }
  // Quantile cut points over the sorted sample, deduplicated.
  for (std::size_t b = 1; b < limit; ++b) {
    const double q = static_cast<double>(b) / static_cast<double>(limit);
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double a = v[lo], c = v[hi];
    double t = a == c ? a : midpoint(a, c);
    if (t >= distinct.back()) continue;
    if (out.empty() || t > out.back()) out.push_back(t);
  }
  return out;
}

namespace {

constexpr std::uint8_t kMissingBin = 255;
constexpr double kMinHessianToSplit = 1e-3;

struct HistBin {
  double g = 0, h = 0;
  std::uint32_t n = 0;
};

struct HgbSplit {
  double gain = 0;
  std::size_t feature = 0;
  std::size_t bin = 0;
  bool missingLeft = false;
};

struct HgbLeaf {
  std::int32_t node;
  std::vector<std::uint32_t> rows;
  double g = 0, h = 0;
  std::optional<HgbSplit> split;
};

class HgbGrower {
 public:
  HgbGrower(const std::vector<std::vector<std::uint8_t>>& bins, const std::vector<std::vector<double>>& thresholds,
            std::span<const double> grad, std::span<const double> hess, const Hyperparameters& p)
      : bins_(bins), thr_(thresholds), g_(grad), h_(hess), p_(p) {}

  // Returns the tree and writes each row's leaf value (already shrunk).
  Tree grow(std::size_t n, std::vector<double>& update) {
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<HgbLeaf> leaves;
    HgbLeaf root{0, {}, 0, 0, std::nullopt};
    root.rows.resize(n);
    std::iota(root.rows.begin(), root.rows.end(), 0u);
    finish_leaf(root);
    leaves.push_back(std::move(root));
    while (leaves.size() < static_cast<std::size_t>(p_.maxLeafNodes)) {
      std::size_t pick = leaves.size();
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (!leaves[i].split) continue;
        if (pick == leaves.size() || leaves[i].split->gain > leaves[pick].split->gain) pick = i;
      }
      if (pick == leaves.size()) break;
      HgbLeaf parent = std::move(leaves[pick]);
      leaves.erase(leaves.begin() + static_cast<std::ptrdiff_t>(pick));
      const HgbSplit s = *parent.split;
      const auto l = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[static_cast<std::size_t>(parent.node)];
      node.feature = static_cast<std::int32_t>(s.feature);
      node.threshold = thr_[s.feature][s.bin];
      node.missingLeft = s.missingLeft;
      node.left = l;
      node.right = l + 1;
      HgbLeaf left{l, {}, 0, 0, std::nullopt}, right{l + 1, {}, 0, 0, std::nullopt};
      const auto& col = bins_[s.feature];
      for (auto r : parent.rows) {
        const std::uint8_t b = col[r];
        const bool go_left = b == kMissingBin ? s.missingLeft : b <= s.bin;
        (go_left ? left : right).rows.push_back(r);
      }
      finish_leaf(left);
      finish_leaf(right);
      leaves.push_back(std::move(left));
      leaves.push_back(std::move(right));
    }
    for (const auto& leaf : leaves) {
      const double value = -p_.learningRate * leaf.g / (leaf.h + p_.l2Regularization + 1e-300);
      tree.nodes[static_cast<std::size_t>(leaf.node)].value = value;
      for (auto r : leaf.rows) update[r] = value;
    }
    return tree;
  }

 private:
  double score(double g, double h) const { return g * g / (h + p_.l2Regularization); }

  void finish_leaf(HgbLeaf& leaf) {
    leaf.g = leaf.h = 0;
    for (auto r : leaf.rows) {
      leaf.g += g_[r];
      leaf.h += h_[r];
    }
    leaf.split.reset();
    const auto min_leaf = static_cast<std::size_t>(p_.minSamplesLeaf);
    if (leaf.rows.size() < 2 * min_leaf || leaf.h < 2 * kMinHessianToSplit) return;
    const double parent_score = score(leaf.g, leaf.h);
    std::vector<HistBin> hist(256);
    for (std::size_t f = 0; f < bins_.size(); ++f) {
      const std::size_t nb = thr_[f].size() + 1;
      if (nb < 2) continue;
      std::fill(hist.begin(), hist.end(), HistBin{});
      const auto& col = bins_[f];
      for (auto r : leaf.rows) {
        HistBin& b = hist[col[r]];
        b.g += g_[r];
        b.h += h_[r];
        ++b.n;
      }
      const HistBin miss = hist[kMissingBin];
      for (int pass = 0; pass < (miss.n > 0 ? 2 : 1); ++pass) {
        const bool missing_left = pass == 1;
        double gl = missing_left ? miss.g : 0, hl = missing_left ? miss.h : 0;
        std::size_t nl = missing_left ? miss.n : 0;
        for (std::size_t b = 0; b + 1 < nb; ++b) {
          gl += hist[b].g;
          hl += hist[b].h;
          nl += hist[b].n;
          const std::size_t nr = leaf.rows.size() - nl;
          if (nl < min_leaf) continue;
          if (nr < min_leaf) break;
          const double gr = leaf.g - gl, hr = leaf.h - hl;
          if (hl < kMinHessianToSplit || hr < kMinHessianToSplit) continue;
          const double gain = score(gl, hl) + score(gr, hr) - parent_score;
          if (gain > 0 && (!leaf.split || gain > leaf.split->gain)) {
            bool ml = missing_left;
            if (miss.n == 0) ml = nl >= nr;  // unseen NaN follows the larger child
            leaf.split = HgbSplit{gain, f, b, ml};
          }
        }
      }
    }
  }

  const std::vector<std::vector<std::uint8_t>>& bins_;
  const std::vector<std::vector<double>>& thr_;
  std::span<const double> g_, h_;
  const Hyperparameters& p_;
};

}  // namespace

void HistGradientBoostingModel::fit_impl(const LabeledMatrix& matrix, std::uint64_t) {
  const std::size_t n = matrix.rows(), d = matrix.cols();
  std::vector<std::vector<double>> thresholds(d);
  std::vector<std::vector<std::uint8_t>> bins(d, std::vector<std::uint8_t>(n));
  std::vector<double> column(n);
  for (std::size_t f = 0; f < d; ++f) {
    for (std::size_t i = 0; i < n; ++i) column[i] = matrix.at(i, f);
    thresholds[f] = bin_thresholds(column, params_.maxBins);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = column[i];
      bins[f][i] = std::isnan(v) ? kMissingBin
                                 : static_cast<std::uint8_t>(std::lower_bound(thresholds[f].begin(),
                                                                              thresholds[f].end(), v) -
                                                             thresholds[f].begin());
    }
  }
  const double prior = std::clamp(static_cast<double>(matrix.positives()) / static_cast<double>(n), 1e-15,
                                  1.0 - 1e-15);
  baseline_ = std::log(prior / (1.0 - prior));
  std::vector<double> raw(n, baseline_), grad(n), hess(n), update(n);
  trees_.clear();
  for (int it = 0; it < params_.maxIter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(raw[i]);
      grad[i] = p - matrix.labels[i];
      hess[i] = p * (1.0 - p);
    }
    HgbGrower grower(bins, thresholds, grad, hess, params_);
    trees_.push_back(grower.grow(n, update));
    for (std::size_t i = 0; i < n; ++i) raw[i] += update[i];
  }
}

double HistGradientBoostingModel::score_impl(std::span<const double> x) const {
  double raw = baseline_;
  for (const auto& t : trees_) raw += t.evaluate(x);
  return sigmoid(raw);
}

void HistGradientBoostingModel::save_payload(std::ostream& out) const {
  bin::put<double>(out, baseline_);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(trees_.size()));
  for (const auto& t : trees_) put_tree(out, t);
}

void HistGradientBoostingModel::load_payload(std::istream& in, std::size_t width) {
  baseline_ = bin::get<double>(in);
  const auto count = bin::get<std::uint32_t>(in);
  trees_.clear();
  for (std::uint32_t t = 0; t < count; ++t) trees_.push_back(get_tree(in, width));
  width_ = width;
}

// ---------------------------------------------------------------- KNN

void KnnModel::fit_impl(const LabeledMatrix& matrix, std::uint64_t) {
  x_ = matrix.values;
  y_ = matrix.labels;
}

double KnnModel::score_impl(std::span<const double> x) const {
  const std::size_t d = width_, n = y_.size();
  std::vector<std::pair<double, std::uint32_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = x_.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = row[j] - x[j];
      s += diff * diff;
    }
    dist[i] = {s, static_cast<std::uint32_t>(i)};
  }
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(params_.k), n);
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
  std::size_t positive = 0;
  for (std::size_t i = 0; i < k; ++i) positive += y_[dist[i].second];
  return static_cast<double>(positive) / static_cast<double>(k);
}

void KnnModel::save_payload(std::ostream& out) const {
  bin::put<std::uint64_t>(out, y_.size());
  for (double v : x_) bin::put<double>(out, v);
  for (auto y : y_) bin::put<std::uint8_t>(out, y);
}

void KnnModel::load_payload(std::istream& in, std::size_t width) {
  const auto n = bin::get<std::uint64_t>(in);
  if (n == 0 || n > (1ull << 32)) throw Error(ErrorCode::IoError, "bad KNN training size");
  x_.resize(n * width);
  for (auto& v : x_) v = bin::get<double>(in);
  y_.resize(n);
  for (auto& y : y_) y = bin::get<std::uint8_t>(in);
  width_ = width;
}

// ---------------------------------------------------------------- CV

double log_loss(std::span<const std::uint8_t> labels, std::span<const double> scores) {
  if (labels.size() != scores.size() || labels.empty()) {
    throw Error(ErrorCode::DimensionMismatch, "log_loss needs matching non-empty inputs");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(scores[i], kLogLossEpsilon, 1.0 - kLogLossEpsilon);
    s -= labels[i] ? std::log(p) : std::log1p(-p);
  }
  return s / static_cast<double>(labels.size());
}

double accuracy(std::span<const std::uint8_t> labels, std::span<const double> scores) {
  if (labels.size() != scores.size() || labels.empty()) {
    throw Error(ErrorCode::DimensionMismatch, "accuracy needs matching non-empty inputs");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += (scores[i] >= 0.5) == (labels[i] == 1);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const std::uint8_t> labels, std::size_t k,
                                                       std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 folds");
  if (labels.size() < k) throw Error(ErrorCode::TooFewRows, "fewer rows than folds");
  Rng rng(Rng::derive(seed, 0x5f01d5));
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (std::uint8_t cls : {std::uint8_t{0}, std::uint8_t{1}}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == cls) idx.push_back(i);
    }
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    // Continue the round robin across classes so fold sizes differ by at most one.
    for (std::size_t i : idx) folds[next++ % k].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

CvReport cross_validate(ModelKind kind, const LabeledMatrix& matrix, std::span<const Hyperparameters> grid,
                        std::uint64_t seed, std::size_t folds) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty hyperparameter grid");
  if (matrix.rows() < 10) throw Error(ErrorCode::TooFewRows, "cross-validation needs at least 10 rows");
  CvReport report;
  report.kind = kind;
  report.folds = stratified_folds(matrix.labels, folds, seed);
  std::vector<std::vector<std::size_t>> train(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<bool> held(matrix.rows(), false);
    for (auto i : report.folds[f]) held[i] = true;
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
      if (!held[i]) train[f].push_back(i);
    }
  }
  for (const auto& params : grid) {
    GridPointResult point;
    point.params = params;
    for (std::size_t f = 0; f < folds; ++f) {
      auto model = make_model(kind, params);
      model->fit(matrix.subset(train[f]), Rng::derive(seed, f + 1));
      const LabeledMatrix held = matrix.subset(report.folds[f]);
      const auto scores = model->predict(held);
      point.folds.push_back({log_loss(held.labels, scores), accuracy(held.labels, scores)});
    }
    for (const auto& m : point.folds) {
      point.meanLogLoss += m.logLoss;
      point.meanAccuracy += m.accuracy;
    }
    point.meanLogLoss /= static_cast<double>(folds);
    point.meanAccuracy /= static_cast<double>(folds);
    report.grid.push_back(std::move(point));
  }
  for (std::size_t g = 1; g < report.grid.size(); ++g) {
    if (report.grid[g].meanLogLoss < report.grid[report.chosen].meanLogLoss) report.chosen = g;
  }
  return report;
}

std::string CvReport::to_json() const {
  ordered_json j;
  j["kind"] = to_string(kind);
  j["folds"] = folds.size();
  j["foldSizes"] = ordered_json::array();
  for (const auto& f : folds) j["foldSizes"].push_back(f.size());
  j["grid"] = ordered_json::array();
  for (const auto& g : grid) {
    ordered_json point;
    point["params"] = params_to_json(kind, g.params);
    point["folds"] = ordered_json::array();
    for (const auto& m : g.folds) point["folds"].push_back({{"logLoss", m.logLoss}, {"accuracy", m.accuracy}});
    point["meanLogLoss"] = g.meanLogLoss;
    point["meanAccuracy"] = g.meanAccuracy;
    j["grid"].push_back(std::move(point));
  }
  j["chosen"] = chosen;
  j["chosenParams"] = grid.empty() ? ordered_json(nullptr) : params_to_json(kind, chosen_params());
  return j.dump(2);
}

std::vector<Hyperparameters> default_grid(ModelKind kind) {
  std::vector<Hyperparameters> grid;
  switch (kind) {
    case ModelKind::LIR: grid.emplace_back(); break;
    case ModelKind::LOR:
      for (double c : {0.1, 1.0, 10.0}) {
        Hyperparameters p;
        p.C = c;
        grid.push_back(p);
      }
      break;
    case ModelKind::RF:
      for (int depth : {8, 16, 0}) {
        for (int trees : {100, 200}) {
          Hyperparameters p;
          p.maxDepth = depth;
          p.nTrees = trees;
          grid.push_back(p);
        }
      }
      break;
    case ModelKind::HGB:
      for (double lr : {0.05, 0.1}) {
        for (int iters : {100, 200}) {
          Hyperparameters p;
          p.learningRate = lr;
          p.maxIter = iters;
          grid.push_back(p);
        }
      }
      break;
    case ModelKind::KNN:
      for (int k : {25, 50, 100}) {
        Hyperparameters p;
        p.k = k;
        grid.push_back(p);
      }
      break;
  }
  return grid;
}

// ---------------------------------------------------------------- .frm

namespace {

constexpr char kModelMagic[8] = {'F', 'R', 'K', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kModelVersion = 1;

}  // namespace

void save_model(std::ostream& out, const RankingModel& model, std::span<const FeatureColumn> columns) {
  if (!model.fitted()) throw Error(ErrorCode::NotFitted, "cannot save an unfitted model");
  if (columns.size() != model.width()) {
    throw Error(ErrorCode::ManifestMismatch, "manifest width differs from the model width");
  }
  out.write(kModelMagic, sizeof kModelMagic);
  bin::put<std::uint32_t>(out, kModelVersion);
  bin::put<std::uint8_t>(out, static_cast<std::uint8_t>(model.kind()));
  bin::put<std::uint64_t>(out, manifest_hash(columns));
  bin::put_string(out, manifest_json(columns));
  bin::put_string(out, hyperparameters_json(model.kind(), model.hyperparameters()));
  model.save_payload(out);
  if (!out) throw Error(ErrorCode::IoError, "model write failed");
}

void save_model(const std::filesystem::path& path, const RankingModel& model,
                std::span<const FeatureColumn> columns) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  save_model(out, model, columns);
}

ModelArtifact load_model(std::istream& in, std::optional<std::span<const FeatureColumn>> expected) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kModelMagic)) {
    throw Error(ErrorCode::IoError, "not a fanranker model file");
  }
  const auto version = bin::get<std::uint32_t>(in);
  if (version != kModelVersion) throw Error(ErrorCode::IoError, "unsupported model version " + std::to_string(version));
  const auto kind_byte = bin::get<std::uint8_t>(in);
  if (kind_byte > static_cast<std::uint8_t>(ModelKind::KNN)) throw Error(ErrorCode::IoError, "unknown model kind");
  const auto kind = static_cast<ModelKind>(kind_byte);
  ModelArtifact art;
  art.manifestHash = bin::get<std::uint64_t>(in);
  art.columns = parse_manifest_json(bin::get_string(in));
  if (manifest_hash(art.columns) != art.manifestHash) {
    throw Error(ErrorCode::ManifestMismatch, "stored manifest does not match its hash");
  }
  if (expected && !std::equal(art.columns.begin(), art.columns.end(), expected->begin(), expected->end())) {
    throw Error(ErrorCode::ManifestMismatch, "model was trained on a different column manifest (" +
                                                 std::to_string(art.columns.size()) + " vs " +
                                                 std::to_string(expected->size()) + " columns)");
  }
  const Hyperparameters params = parse_hyperparameters_json(bin::get_string(in));
  art.model = make_model(kind, params);
  art.model->load_payload(in, art.columns.size());
  return art;
}

ModelArtifact load_model(const std::filesystem::path& path, std::optional<std::span<const FeatureColumn>> expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return load_model(in, expected);
}

}  // namespace fanranker
