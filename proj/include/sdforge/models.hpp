#pragma once

// Regression models for the descriptor dataset.
//
// Penalty conventions (X standardized, y centered, n rows):
//   ridge       RSS + lambda * |b|^2            solved in closed form
//   lasso       RSS / 2n + lambda * |b|_1        cyclic coordinate descent
//   elasticnet  RSS / 2n + lambda * (r |b|_1 + (1 - r) / 2 |b|^2)
// so elasticnet(lambda, r = 0) equals ridge(n * lambda) and
// elasticnet(lambda, r = 1) equals lasso(lambda). The intercept is never
// penalized.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "sdforge/error.hpp"

namespace sdforge::models {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// The seven modeling features (HeavyAtomCount is dropped as redundant with
// MolWt).
const std::vector<std::string> &modeling_features();

struct Dataset {
  MatrixXd x;
  VectorXd y;
  std::vector<std::string> feature_names;
  std::vector<std::string> row_ids;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }
  Dataset subset(std::span<const std::size_t> rows) const;
  std::optional<std::size_t> feature_index(std::string_view name) const;
  void validate() const;
};

// Reads the 12-column dataset CSV, keeping `features` as X and logP_target
// as y. Row ids come from Original_InChI, else InChIKey, else the row number.
Dataset load_dataset_csv(std::istream &in,
                         const std::vector<std::string> &features = modeling_features());
Dataset load_dataset_csv(const std::filesystem::path &path,
                         const std::vector<std::string> &features = modeling_features());

// Splits one CSV line into fields (RFC 4180 quotes). Embedded line breaks in
// quoted fields are not supported.
std::vector<std::string> split_csv_line(std::string_view line);

class Scaler {
public:
  Scaler() = default;
  Scaler(VectorXd mean, VectorXd scale);

  // Population standard deviation; throws for constant features.
  static Scaler fit(const MatrixXd &x);

  MatrixXd transform(const MatrixXd &x) const;
  const VectorXd &mean() const { return mean_; }
  const VectorXd &scale() const { return scale_; }

private:
  VectorXd mean_;
  VectorXd scale_;
};

class YeoJohnson {
public:
  YeoJohnson() = default;
  explicit YeoJohnson(double lambda, double log_likelihood = 0)
      : lambda_(lambda), log_likelihood_(log_likelihood) {}

  // Maximizes the profile log-likelihood over lambda in [-5, 5] by golden
  // section search.
  static YeoJohnson fit(std::span<const double> y, double tolerance = 1e-6);
  static double transform(double y, double lambda);
  static double log_likelihood(std::span<const double> y, double lambda);

  double apply(double y) const { return transform(y, lambda_); }
  // Values outside the transform's range are clamped to its boundary.
  double invert(double z) const;

  double lambda() const { return lambda_; }
  double fit_log_likelihood() const { return log_likelihood_; }

private:
  double lambda_ = 1.0;
  double log_likelihood_ = 0;
};

enum class Penalty { ridge, lasso, elasticnet };

std::string to_string(Penalty penalty);
Penalty penalty_from_string(std::string_view name);

struct LinearOptions {
  Penalty penalty = Penalty::ridge;
  double lambda = 1.0;
  double l1_ratio = 0.5;
  double tolerance = 1e-7;
  int max_iters = 10000;
  bool yeo_johnson = false;
};

struct LinearModel {
  Penalty penalty = Penalty::ridge;
  double lambda = 0;
  double l1_ratio = 0;
  bool weighted = false;
  double intercept = 0;
  VectorXd coefficients;  // on the standardized scale
  Scaler scaler;
  std::optional<YeoJohnson> transform;
  std::vector<std::string> feature_names;
  int iterations = 0;

  VectorXd predict(const MatrixXd &x) const;
  double predict_row(std::span<const double> row) const;
};

class NonConvergence : public Error {
public:
  NonConvergence(LinearModel last, int iterations)
      : Error("coordinate descent did not converge in " +
              std::to_string(iterations) + " sweeps"),
        last_iterate(std::move(last)) {}

  LinearModel last_iterate;
};

LinearModel fit_linear(const Dataset &train, const LinearOptions &options);

// Largest lambda for which the lasso keeps any coefficient nonzero.
double lasso_lambda_max(const Dataset &train);

struct WlsDiagnostics {
  VectorXd weights;  // normalized to mean 1
  bool fell_back = false;
  std::string warning;
};

// Feasible weighted least squares: log(e^2 + eps) is regressed on the base
// model's fitted values, and the inverse fitted variances weight a ridge
// refit with the base lambda and scaler.
LinearModel fit_wls(const Dataset &train, const LinearModel &base,
                    WlsDiagnostics *diagnostics = nullptr);

// Weighted ridge on pre-standardized features; weights are rescaled to mean 1.
std::pair<double, VectorXd> solve_weighted_ridge(const MatrixXd &xs,
                                                 const VectorXd &y,
                                                 const VectorXd &weights,
                                                 double lambda);

// ---------------------------------------------------------------------------
// Trees

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0;  // go left when x[feature] <= threshold
  int left = -1;
  int right = -1;
  double value = 0;
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at 0

  double predict_row(std::span<const double> row) const;
  bool uses_feature(std::size_t feature) const;
};

enum class EnsembleKind { random_forest, gradient_boosting };

struct TreeParams {
  std::size_t n_estimators = 200;
  int max_depth = 30;  // < 0 for unlimited
  std::size_t min_samples_leaf = 5;
  // Features sampled per split; 0 means ceil(p / 3) for forests and p for
  // boosting.
  std::size_t max_features = 0;
  bool bootstrap = true;
  double subsample = 1.0;  // per-iteration row fraction for boosting
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

TreeParams forest_defaults();
TreeParams gbm_defaults();

struct TreeEnsemble {
  EnsembleKind kind = EnsembleKind::random_forest;
  std::vector<Tree> trees;
  double init = 0;  // boosting base score
  double learning_rate = 1.0;
  TreeParams params;
  std::vector<std::string> feature_names;

  VectorXd predict(const MatrixXd &x) const;
  double predict_row(std::span<const double> row) const;
};

// Fits one CART regression tree on the given (possibly repeated) rows.
Tree fit_tree(const MatrixXd &x, const VectorXd &y,
              std::span<const std::size_t> rows, const TreeParams &params,
              std::size_t max_features, std::uint64_t seed);

TreeEnsemble fit_forest(const Dataset &train, const TreeParams &params);
TreeEnsemble fit_gbm(const Dataset &train, const TreeParams &params);

// ---------------------------------------------------------------------------
// Stratified two-tier predictor

enum class RoutingMode {
  features_only,         // MolWt, donor, and acceptor criteria only
  provisional_estimate,  // plus logP <= 5 on a global ridge estimate
};

std::string to_string(RoutingMode mode);
RoutingMode routing_from_string(std::string_view name);

struct LipinskiThresholds {
  double molwt = 500;
  double logp = 5;
  double donors = 5;
  double acceptors = 10;
};

struct StratifiedPredictor {
  LinearModel model_a;  // Lipinski-compliant
  LinearModel model_b;  // violators
  std::optional<LinearModel> global;  // provides the routing logP estimate
  RoutingMode mode = RoutingMode::provisional_estimate;
  LipinskiThresholds thresholds;
  std::vector<std::string> feature_names;
  std::size_t molwt_index = 0;
  std::size_t donors_index = 0;
  std::size_t acceptors_index = 0;
  std::size_t train_a = 0;
  std::size_t train_b = 0;

  // 'A' or 'B'. logp_estimate is ignored in features_only mode.
  char route(std::span<const double> row, std::optional<double> logp_estimate) const;
  double predict_row(std::span<const double> row) const;
  VectorXd predict(const MatrixXd &x) const;
};

struct StratifiedOptions {
  double lambda = 1.0;
  RoutingMode mode = RoutingMode::provisional_estimate;
  std::size_t min_stratum = 50;
};

// Training strata use each row's true logP; throws when a stratum has fewer
// than min_stratum rows.
StratifiedPredictor fit_stratified(const Dataset &train,
                                   const StratifiedOptions &options = {});

struct StratifiedPredictions {
  VectorXd predictions;
  std::vector<char> routes;
  std::vector<std::optional<double>> logp_estimates;
  // Fraction of rows whose route differs from routing on the true target.
  double disagreement_rate = 0;
};

StratifiedPredictions predict_stratified(const StratifiedPredictor &predictor,
                                         const Dataset &rows);

// ---------------------------------------------------------------------------
// Model container, evaluation, splitting, CV

using FittedModel = std::variant<LinearModel, TreeEnsemble, StratifiedPredictor>;

VectorXd predict(const FittedModel &model, const MatrixXd &x);
double predict_row(const FittedModel &model, std::span<const double> row);
const std::vector<std::string> &feature_names(const FittedModel &model);
std::string model_kind(const FittedModel &model);

struct Metrics {
  double r2 = 0;  // NaN when the targets are constant
  double rmse = 0;
  double mae = 0;
  std::size_t n = 0;
};

Metrics evaluate(const VectorXd &predictions, const VectorXd &targets);
Metrics evaluate(const FittedModel &model, const Dataset &data);

struct Split {
  std::vector<std::size_t> train;  // ascending row indices
  std::vector<std::size_t> test;
  std::vector<std::size_t> bin_of_row;
  std::vector<std::string> warnings;
};

// Rows are ranked by target and cut into `bins` equal-count bins; each bin
// contributes round(test_fraction * size) rows to the test set.
Split split_stratified(const Dataset &data, double test_fraction = 0.2,
                       std::size_t bins = 10, std::uint64_t seed = 0);

enum class Family { ridge, lasso, elasticnet, random_forest, gradient_boosting };

std::string to_string(Family family);
// Accepts the to_string names plus rf, gbm, enet.
Family family_from_string(std::string_view name);

struct ModelSpec {
  Family family = Family::ridge;
  LinearOptions linear;
  TreeParams trees;
};

FittedModel fit_model(const Dataset &train, const ModelSpec &spec);

// Default grids: lambda in 10^-4 .. 10^2 for linear families (l1_ratio 0.5
// for elasticnet); small depth/leaf grids around the tabulated ensemble
// settings.
std::vector<ModelSpec> default_grid(Family family, std::uint64_t seed = 0,
                                    std::size_t workers = 1);

struct CvResult {
  std::size_t best_index = 0;
  ModelSpec best;
  std::vector<double> scores;  // mean validation R^2 per grid point
  std::vector<std::size_t> fold_of_row;
};

// Folds are contiguous blocks of a seeded permutation. Ties in score go to the
// more strongly regularized point (larger lambda, shallower trees, larger
// leaves).
CvResult cross_validate(const Dataset &train, const std::vector<ModelSpec> &grid,
                        std::size_t folds, std::uint64_t seed,
                        std::size_t workers = 1);

struct CategoryError {
  std::string label;
  double lower = 0;
  double upper = 0;
  std::size_t count = 0;
  double median_abs_error = 0;  // NaN for an empty bin
  double iqr_abs_error = 0;     // NaN for an empty bin
  bool balanced = false;
};

// Bins (-inf,0), [0,2), [2,4) "balanced", [4,5), [5,inf) by target value.
std::vector<CategoryError> report_error_by_category(const VectorXd &predictions,
                                                    const VectorXd &targets);

// ---------------------------------------------------------------------------
// Serialization: text, "#sdforge-model v1" header, reals as %.17g.

void save_model(const FittedModel &model, std::ostream &out);
void save_model(const FittedModel &model, const std::filesystem::path &path);
FittedModel load_model(std::istream &in);
FittedModel load_model(const std::filesystem::path &path);

} // namespace sdforge::models
