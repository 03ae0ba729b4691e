#include "sdforge/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdforge/parallel.hpp"
#include "sdforge/rng.hpp"

namespace sdforge::models {

namespace {

class TreeBuilder {
public:
  TreeBuilder(const MatrixXd &x, const VectorXd &y, const TreeParams &params,
              std::size_t max_features, std::uint64_t seed)
      : x_(x), y_(y), params_(params), mtry_(max_features), rng_(seed) {
    features_.resize(static_cast<std::size_t>(x.cols()));
    std::iota(features_.begin(), features_.end(), 0);
  }

  Tree build(std::span<const std::size_t> rows) {
    rows_.assign(rows.begin(), rows.end());
    if (rows_.empty())
      throw Error("fit_tree: no rows");
    tree_.nodes.clear();
    grow(0, rows_.size(), 0);
    return std::move(tree_);
  }

private:
  struct Candidate {
    int feature = -1;
    double threshold = 0;
    double gain = 0;
  };

  int grow(std::size_t begin, std::size_t end, int depth) {
    const std::size_t count = end - begin;
    double sum = 0, lo = y_(rowi(begin)), hi = lo;
    for (std::size_t k = begin; k < end; ++k) {
      double v = y_(rowi(k));
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(TreeNode{});
    tree_.nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(count);

    const std::size_t min_leaf = std::max<std::size_t>(1, params_.min_samples_leaf);
    if ((params_.max_depth >= 0 && depth >= params_.max_depth) ||
        count < 2 * min_leaf || lo == hi)
      return id;

    Candidate best = best_split(begin, end, sum, min_leaf);
    if (best.feature < 0)
      return id;

    auto mid = std::stable_partition(
        rows_.begin() + static_cast<std::ptrdiff_t>(begin),
        rows_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t r) {
          return x_(static_cast<Eigen::Index>(r), best.feature) <= best.threshold;
        });
    auto split = static_cast<std::size_t>(mid - rows_.begin());
    int left = grow(begin, split, depth + 1);
    int right = grow(split, end, depth + 1);
    auto &node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left;
    node.right = right;
    return id;
  }

  Candidate best_split(std::size_t begin, std::size_t end, double sum,
                       std::size_t min_leaf) {
    const std::size_t p = features_.size();
    std::vector<std::size_t> candidates;
    if (mtry_ >= p) {
      candidates = features_;
    } else {
      std::vector<std::size_t> pool = features_;
      for (std::size_t i = 0; i < mtry_; ++i)
        std::swap(pool[i], pool[i + rng_.below(p - i)]);
      candidates.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(mtry_));
      std::sort(candidates.begin(), candidates.end());
    }

    const std::size_t count = end - begin;
    const double n = static_cast<double>(count);
    const double parent = sum * sum / n;
    Candidate best;
    for (std::size_t f : candidates) {
      pairs_.clear();
      for (std::size_t k = begin; k < end; ++k) {
        auto r = rowi(k);
        pairs_.emplace_back(x_(r, static_cast<Eigen::Index>(f)), y_(r));
      }
      std::sort(pairs_.begin(), pairs_.end(),
                [](const auto &a, const auto &b) { return a.first < b.first; });
      double left_sum = 0;
      for (std::size_t i = 0; i + 1 < count; ++i) {
        left_sum += pairs_[i].second;
        const std::size_t nl = i + 1, nr = count - nl;
        if (nl < min_leaf)
          continue;
        if (nr < min_leaf)
          break;
        double a = pairs_[i].first, b = pairs_[i + 1].first;
        if (!(a < b))
          continue;
        double right_sum = sum - left_sum;
        double gain = left_sum * left_sum / static_cast<double>(nl) +
                      right_sum * right_sum / static_cast<double>(nr) - parent;
        if (gain > best.gain) {
          double threshold = a + (b - a) / 2.0;
          if (!(threshold < b))
            threshold = a;
          best = Candidate{static_cast<int>(f), threshold, gain};
        }
      }
    }
    return best;
  }

  Eigen::Index rowi(std::size_t k) const { return static_cast<Eigen::Index>(rows_[k]); }

  const MatrixXd &x_;
  const VectorXd &y_;
  const TreeParams &params_;
  std::size_t mtry_;
  Rng rng_;
  std::vector<std::size_t> features_;
  std::vector<std::size_t> rows_;
  std::vector<std::pair<double, double>> pairs_;
  Tree tree_;
};

void check_params(const Dataset &train, const TreeParams &params) {
  train.validate();
  if (train.rows() == 0)
    throw Error("tree ensemble: empty training set");
  if (params.n_estimators == 0)
    throw Error("tree ensemble: n_estimators must be positive");
}

} // namespace

double Tree::predict_row(std::span<const double> row) const {
  std::size_t i = 0;
  for (;;) {
    const auto &node = nodes[i];
    if (node.feature < 0)
      return node.value;
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(node.feature)] <= node.threshold
                                     ? node.left
                                     : node.right);
  }
}

bool Tree::uses_feature(std::size_t feature) const {
  return std::any_of(nodes.begin(), nodes.end(), [&](const TreeNode &n) {
    return n.feature == static_cast<int>(feature);
  });
}

TreeParams forest_defaults() {
  TreeParams p;
  p.n_estimators = 200;
  p.max_depth = 30;
  p.min_samples_leaf = 5;
  p.bootstrap = true;
  return p;
}

TreeParams gbm_defaults() {
  TreeParams p;
  p.n_estimators = 300;
  p.max_depth = 10;
  p.min_samples_leaf = 5;
  p.learning_rate = 0.1;
  p.subsample = 0.8;
  p.bootstrap = false;
  return p;
}

Tree fit_tree(const MatrixXd &x, const VectorXd &y, std::span<const std::size_t> rows,
              const TreeParams &params, std::size_t max_features, std::uint64_t seed) {
  auto p = static_cast<std::size_t>(x.cols());
  if (max_features == 0 || max_features > p)
    max_features = p;
  TreeBuilder builder(x, y, params, max_features, seed);
  return builder.build(rows);
}

double TreeEnsemble::predict_row(std::span<const double> row) const {
  if (row.size() != feature_names.size())
    throw Error("tree ensemble: row has wrong feature count");
  double total = 0;
  for (const auto &tree : trees)
    total += tree.predict_row(row);
  if (kind == EnsembleKind::random_forest)
    return total / static_cast<double>(trees.size());
  return init + learning_rate * total;
}

VectorXd TreeEnsemble::predict(const MatrixXd &x) const {
  VectorXd out(x.rows());
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      row[static_cast<std::size_t>(j)] = x(i, j);
    out(i) = predict_row(row);
  }
  return out;
}

TreeEnsemble fit_forest(const Dataset &train, const TreeParams &params) {
  check_params(train, params);
  const std::size_t n = train.rows(), p = train.cols();
  std::size_t mtry = params.max_features ? std::min(params.max_features, p) : (p + 2) / 3;

  TreeEnsemble forest;
  forest.kind = EnsembleKind::random_forest;
  forest.params = params;
  forest.learning_rate = 1.0;
  forest.feature_names = train.feature_names;
  forest.trees.resize(params.n_estimators);
  parallel_for(params.n_estimators, params.workers, [&](std::size_t t) {
    std::uint64_t tree_seed = derive_seed(params.seed, t);
    Rng rng(tree_seed);
    std::vector<std::size_t> rows(n);
    if (params.bootstrap) {
      for (auto &r : rows)
        r = rng.below(n);
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    forest.trees[t] = fit_tree(train.x, train.y, rows, params, mtry, rng.next_u64());
  });
  return forest;
}

TreeEnsemble fit_gbm(const Dataset &train, const TreeParams &params) {
  check_params(train, params);
  if (!(params.learning_rate > 0 && params.learning_rate <= 1))
    throw Error("fit_gbm: learning_rate must lie in (0, 1]");
  if (!(params.subsample > 0 && params.subsample <= 1))
    throw Error("fit_gbm: subsample must lie in (0, 1]");
  const std::size_t n = train.rows(), p = train.cols();
  std::size_t mtry = params.max_features ? std::min(params.max_features, p) : p;
  auto take = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(params.subsample * static_cast<double>(n))));

  TreeEnsemble gbm;
  gbm.kind = EnsembleKind::gradient_boosting;
  gbm.params = params;
  gbm.learning_rate = params.learning_rate;
  gbm.feature_names = train.feature_names;
  gbm.init = train.y.mean();

  VectorXd current = VectorXd::Constant(train.y.size(), gbm.init);
  VectorXd residual(train.y.size());
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> row(p);
  for (std::size_t t = 0; t < params.n_estimators; ++t) {
    residual = train.y - current;
    Rng rng(derive_seed(params.seed, t));
    std::vector<std::size_t> rows = all;
    if (take < n) {
      for (std::size_t i = 0; i < take; ++i)
        std::swap(rows[i], rows[i + rng.below(n - i)]);
      rows.resize(take);
      std::sort(rows.begin(), rows.end());
    }
    Tree tree = fit_tree(train.x, residual, rows, params, mtry, rng.next_u64());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j)
        row[j] = train.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      current(static_cast<Eigen::Index>(i)) += params.learning_rate * tree.predict_row(row);
    }
    gbm.trees.push_back(std::move(tree));
  }
  return gbm;
}

} // namespace sdforge::models
