#include "sdforge/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "sdforge/parallel.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/stats.hpp"

namespace sdforge::models {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> row_of(const MatrixXd &x, Eigen::Index i) {
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    row[static_cast<std::size_t>(j)] = x(i, j);
  return row;
}

std::size_t require_feature(const Dataset &data, std::string_view name) {
  auto idx = data.feature_index(name);
  if (!idx)
    throw Error("stratified predictor needs feature " + std::string(name));
  return *idx;
}

// Larger tuples are more strongly regularized.
std::tuple<double, double, double> strength(const ModelSpec &spec) {
  switch (spec.family) {
  case Family::ridge:
  case Family::lasso:
  case Family::elasticnet:
    return {spec.linear.lambda, spec.linear.l1_ratio, 0.0};
  case Family::random_forest:
  case Family::gradient_boosting: {
    double depth = spec.trees.max_depth < 0
                       ? std::numeric_limits<double>::infinity()
                       : static_cast<double>(spec.trees.max_depth);
    return {-depth, static_cast<double>(spec.trees.min_samples_leaf),
            -spec.trees.learning_rate};
  }
  }
  return {0, 0, 0};
}

} // namespace

// ---------------------------------------------------------------------------
// Stratified predictor

std::string to_string(RoutingMode mode) {
  return mode == RoutingMode::features_only ? "features_only" : "provisional_estimate";
}

RoutingMode routing_from_string(std::string_view name) {
  if (name == "features_only" || name == "features" || name == "a")
    return RoutingMode::features_only;
  if (name == "provisional_estimate" || name == "provisional" || name == "b")
    return RoutingMode::provisional_estimate;
  throw Error("unknown routing mode: " + std::string(name));
}

char StratifiedPredictor::route(std::span<const double> row,
                                std::optional<double> logp_estimate) const {
  if (row.size() != feature_names.size())
    throw Error("stratified predictor: row has wrong feature count");
  bool compliant = row[molwt_index] <= thresholds.molwt &&
                   row[donors_index] <= thresholds.donors &&
                   row[acceptors_index] <= thresholds.acceptors;
  if (compliant && mode == RoutingMode::provisional_estimate && logp_estimate)
    compliant = *logp_estimate <= thresholds.logp;
  return compliant ? 'A' : 'B';
}

double StratifiedPredictor::predict_row(std::span<const double> row) const {
  std::optional<double> estimate;
  if (mode == RoutingMode::provisional_estimate && global)
    estimate = global->predict_row(row);
  return route(row, estimate) == 'A' ? model_a.predict_row(row) : model_b.predict_row(row);
}

VectorXd StratifiedPredictor::predict(const MatrixXd &x) const {
  VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out(i) = predict_row(row_of(x, i));
  return out;
}

StratifiedPredictor fit_stratified(const Dataset &train, const StratifiedOptions &options) {
  train.validate();
  StratifiedPredictor predictor;
  predictor.mode = options.mode;
  predictor.feature_names = train.feature_names;
  predictor.molwt_index = require_feature(train, "MolWt");
  predictor.donors_index = require_feature(train, "NumHDonors");
  predictor.acceptors_index = require_feature(train, "NumHAcceptors");

  // Training strata are defined on the true target, so the logP criterion is
  // always applied here regardless of the inference routing mode.
  StratifiedPredictor truth_router = predictor;
  truth_router.mode = RoutingMode::provisional_estimate;
  std::vector<std::size_t> a_rows, b_rows;
  for (std::size_t i = 0; i < train.rows(); ++i) {
    auto row = row_of(train.x, static_cast<Eigen::Index>(i));
    char r = truth_router.route(row, train.y(static_cast<Eigen::Index>(i)));
    (r == 'A' ? a_rows : b_rows).push_back(i);
  }
  if (a_rows.size() < options.min_stratum || b_rows.size() < options.min_stratum)
    throw Error("stratified predictor: stratum too small (compliant " +
                std::to_string(a_rows.size()) + ", violators " +
                std::to_string(b_rows.size()) + ", need " +
                std::to_string(options.min_stratum) + " each)");

  LinearOptions ridge;
  ridge.penalty = Penalty::ridge;
  ridge.lambda = options.lambda;
  predictor.model_a = fit_linear(train.subset(a_rows), ridge);
  predictor.model_b = fit_linear(train.subset(b_rows), ridge);
  predictor.global = fit_linear(train, ridge);
  predictor.train_a = a_rows.size();
  predictor.train_b = b_rows.size();
  return predictor;
}

StratifiedPredictions predict_stratified(const StratifiedPredictor &predictor,
                                         const Dataset &rows) {
  StratifiedPredictions out;
  const auto n = static_cast<Eigen::Index>(rows.rows());
  out.predictions.resize(n);
  std::size_t disagree = 0;
  StratifiedPredictor truth_router = predictor;
  truth_router.mode = RoutingMode::provisional_estimate;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = row_of(rows.x, i);
    std::optional<double> estimate;
    if (predictor.mode == RoutingMode::provisional_estimate && predictor.global)
      estimate = predictor.global->predict_row(row);
    char r = predictor.route(row, estimate);
    out.routes.push_back(r);
    out.logp_estimates.push_back(estimate);
    out.predictions(i) =
        r == 'A' ? predictor.model_a.predict_row(row) : predictor.model_b.predict_row(row);
    if (truth_router.route(row, rows.y(i)) != r)
      ++disagree;
  }
  out.disagreement_rate = n ? static_cast<double>(disagree) / static_cast<double>(n) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Model container

VectorXd predict(const FittedModel &model, const MatrixXd &x) {
  return std::visit([&](const auto &m) -> VectorXd { return m.predict(x); }, model);
}

double predict_row(const FittedModel &model, std::span<const double> row) {
  return std::visit([&](const auto &m) { return m.predict_row(row); }, model);
}

const std::vector<std::string> &feature_names(const FittedModel &model) {
  return std::visit(
      [](const auto &m) -> const std::vector<std::string> & { return m.feature_names; },
      model);
}

std::string model_kind(const FittedModel &model) {
  if (auto *linear = std::get_if<LinearModel>(&model))
    return to_string(linear->penalty);
  if (auto *ensemble = std::get_if<TreeEnsemble>(&model))
    return ensemble->kind == EnsembleKind::random_forest ? "random_forest"
                                                         : "gradient_boosting";
  return "stratified";
}

// ---------------------------------------------------------------------------
// Metrics

Metrics evaluate(const VectorXd &predictions, const VectorXd &targets) {
  if (predictions.size() != targets.size())
    throw Error("evaluate: prediction and target lengths differ");
  if (targets.size() == 0)
    throw Error("evaluate: no rows");
  Metrics m;
  m.n = static_cast<std::size_t>(targets.size());
  const double n = static_cast<double>(m.n);
  VectorXd err = targets - predictions;
  double sse = err.squaredNorm();
  double sst = (targets.array() - targets.mean()).square().sum();
  m.r2 = sst > 0 ? 1.0 - sse / sst : kNaN;
  m.rmse = std::sqrt(sse / n);
  m.mae = err.cwiseAbs().sum() / n;
  return m;
}

Metrics evaluate(const FittedModel &model, const Dataset &data) {
  return evaluate(predict(model, data.x), data.y);
}

// ---------------------------------------------------------------------------
// Splitting

Split split_stratified(const Dataset &data, double test_fraction, std::size_t bins,
                       std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1))
    throw Error("split: test_fraction must lie in (0, 1)");
  if (bins == 0)
    throw Error("split: bins must be positive");
  const std::size_t n = data.rows();
  if (n < 2 * bins)
    throw Error("split: need at least two rows per bin");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data.y(static_cast<Eigen::Index>(a)) < data.y(static_cast<Eigen::Index>(b));
  });

  Split split;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t lo = b * n / bins, hi = (b + 1) * n / bins;
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                        order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  for (std::size_t b = 0; b < groups.size();) {
    if (groups[b].size() >= 2 || groups.size() == 1) {
      ++b;
      continue;
    }
    std::size_t into = b > 0 ? b - 1 : b + 1;
    split.warnings.push_back("target bin " + std::to_string(b) +
                             " has fewer than 2 rows; merged into bin " +
                             std::to_string(into));
    auto &dest = groups[into];
    dest.insert(dest.end(), groups[b].begin(), groups[b].end());
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(b));
  }

  split.bin_of_row.assign(n, 0);
  for (std::size_t b = 0; b < groups.size(); ++b) {
    auto members = groups[b];
    for (auto r : members)
      split.bin_of_row[r] = b;
    Rng rng(derive_seed(seed, b));
    rng.shuffle(members);
    auto take = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k)
      (k < take ? split.test : split.train).push_back(members[k]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---------------------------------------------------------------------------
// Fitting and cross-validation

std::string to_string(Family family) {
  switch (family) {
  case Family::ridge:
    return "ridge";
  case Family::lasso:
    return "lasso";
  case Family::elasticnet:
    return "elasticnet";
  case Family::random_forest:
    return "random_forest";
  case Family::gradient_boosting:
    return "gradient_boosting";
  }
  return "?";
}

Family family_from_string(std::string_view name) {
  if (name == "ridge")
    return Family::ridge;
  if (name == "lasso")
    return Family::lasso;
  if (name == "elasticnet" || name == "enet")
    return Family::elasticnet;
  if (name == "random_forest" || name == "rf")
    return Family::random_forest;
  if (name == "gradient_boosting" || name == "gbm")
    return Family::gradient_boosting;
  throw Error("unknown model family: " + std::string(name));
}

FittedModel fit_model(const Dataset &train, const ModelSpec &spec) {
  switch (spec.family) {
  case Family::ridge:
  case Family::lasso:
  case Family::elasticnet: {
    LinearOptions options = spec.linear;
    options.penalty = spec.family == Family::ridge   ? Penalty::ridge
                      : spec.family == Family::lasso ? Penalty::lasso
                                                     : Penalty::elasticnet;
    return fit_linear(train, options);
  }
  case Family::random_forest:
    return fit_forest(train, spec.trees);
  case Family::gradient_boosting:
    return fit_gbm(train, spec.trees);
  }
  throw Error("unknown model family");
}

std::vector<ModelSpec> default_grid(Family family, std::uint64_t seed, std::size_t workers) {
  std::vector<ModelSpec> grid;
  switch (family) {
  case Family::ridge:
  case Family::lasso:
  case Family::elasticnet:
    for (int k = -4; k <= 2; ++k) {
      ModelSpec spec;
      spec.family = family;
      spec.linear.lambda = std::pow(10.0, k);
      spec.linear.l1_ratio = 0.5;
      grid.push_back(spec);
    }
    break;
  case Family::random_forest:
    for (int depth : {15, 30})
      for (std::size_t leaf : {5, 10}) {
        ModelSpec spec;
        spec.family = family;
        spec.trees = forest_defaults();
        spec.trees.max_depth = depth;
        spec.trees.min_samples_leaf = leaf;
        spec.trees.seed = seed;
        spec.trees.workers = workers;
        grid.push_back(spec);
      }
    break;
  case Family::gradient_boosting:
    for (int depth : {5, 10})
      for (double rate : {0.05, 0.1}) {
        ModelSpec spec;
        spec.family = family;
        spec.trees = gbm_defaults();
        spec.trees.max_depth = depth;
        spec.trees.learning_rate = rate;
        spec.trees.seed = seed;
        spec.trees.workers = workers;
        grid.push_back(spec);
      }
    break;
  }
  return grid;
}

CvResult cross_validate(const Dataset &train, const std::vector<ModelSpec> &grid,
                        std::size_t folds, std::uint64_t seed, std::size_t workers) {
  if (grid.empty())
    throw Error("cross_validate: empty grid");
  if (folds < 2)
    throw Error("cross_validate: need at least 2 folds");
  const std::size_t n = train.rows();
  if (n < folds)
    throw Error("cross_validate: fewer rows than folds");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  CvResult result;
  result.fold_of_row.assign(n, 0);
  std::vector<std::vector<std::size_t>> held(folds), kept(folds);
  for (std::size_t k = 0; k < folds; ++k) {
    std::size_t lo = k * n / folds, hi = (k + 1) * n / folds;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= lo && i < hi) {
        held[k].push_back(perm[i]);
        result.fold_of_row[perm[i]] = k;
      } else {
        kept[k].push_back(perm[i]);
      }
    }
  }

  std::vector<double> fold_scores(grid.size() * folds);
  parallel_for(fold_scores.size(), workers, [&](std::size_t task) {
    std::size_t g = task / folds, k = task % folds;
    ModelSpec spec = grid[g];
    if (workers > 1)
      spec.trees.workers = 1;
    auto model = fit_model(train.subset(kept[k]), spec);
    Dataset validation = train.subset(held[k]);
    fold_scores[task] = evaluate(model, validation).r2;
  });

  result.scores.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double total = 0;
    for (std::size_t k = 0; k < folds; ++k)
      total += fold_scores[g * folds + k];
    result.scores[g] = total / static_cast<double>(folds);
  }
  auto score_of = [&](std::size_t g) {
    double s = result.scores[g];
    return std::isnan(s) ? -std::numeric_limits<double>::infinity() : s;
  };
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    double s = score_of(g), b = score_of(best);
    double tol = 1e-12 * std::max(1.0, std::abs(b));
    if (s > b + tol || (std::abs(s - b) <= tol && strength(grid[g]) > strength(grid[best])))
      best = g;
  }
  result.best_index = best;
  result.best = grid[best];
  return result;
}

// ---------------------------------------------------------------------------

std::vector<CategoryError> report_error_by_category(const VectorXd &predictions,
                                                    const VectorXd &targets) {
  if (predictions.size() != targets.size())
    throw Error("error by category: prediction and target lengths differ");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<CategoryError> bins = {
      {"(-inf,0)", -inf, 0, 0, kNaN, kNaN, false},
      {"[0,2)", 0, 2, 0, kNaN, kNaN, false},
      {"[2,4)", 2, 4, 0, kNaN, kNaN, true},
      {"[4,5)", 4, 5, 0, kNaN, kNaN, false},
      {"[5,inf)", 5, inf, 0, kNaN, kNaN, false},
  };
  std::vector<std::vector<double>> errors(bins.size());
  for (Eigen::Index i = 0; i < targets.size(); ++i) {
    double t = targets(i);
    for (std::size_t b = 0; b < bins.size(); ++b)
      if (t >= bins[b].lower && t < bins[b].upper) {
        errors[b].push_back(std::abs(predictions(i) - t));
        break;
      }
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    auto &e = errors[b];
    bins[b].count = e.size();
    if (e.empty())
      continue;
    std::sort(e.begin(), e.end());
    bins[b].median_abs_error = stats::quantile_sorted(e, 0.5);
    bins[b].iqr_abs_error =
        stats::quantile_sorted(e, 0.75) - stats::quantile_sorted(e, 0.25);
  }
  return bins;
}

} // namespace sdforge::models
