#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "sdforge/models.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/stats.hpp"
#include "sdforge/synth.hpp"

using namespace sdforge;
using namespace sdforge::models;

namespace {

// Same 30-row fixture as the stats tests. Expected coefficients come from
// scikit-learn (Ridge, Lasso, ElasticNet) fitted on the population-
// standardized columns; Yeo-Johnson values from scipy.stats.
const std::vector<double> kX1 = {0.034, 1.36, 1.225, -0.51, -0.298, -0.527, 0.57, -0.056, 0.747, -1.847, 1.567, -0.096, 0.68, -0.137, -0.379, 0.463, 0.825, -0.203, -0.153, 0.686, -0.87, -1.514, 0.395, -0.671, -1.92, -0.814, -0.468, -1.193, -1.492, 0.037};
const std::vector<double> kX2 = {0.738, 0.629, 0.14, 0.002, 0.395, -0.556, 0.778, 0.801, 0.283, -1.759, 1.218, 0.14, 1.287, -1.11, -0.757, -0.393, -0.892, -0.021, 0.33, -0.179, 0.587, -0.251, 0.739, -0.081, -0.387, -1.554, 0.21, -0.234, -2.309, 0.3};
const std::vector<double> kX3 = {-1.902, 1.356, -0.135, -1.491, 0.957, -1.217, -1.752, 0.394, 1.583, -1.892, 1.221, -1.239, -1.628, -1.928, -0.828, 0.908, -0.027, 1.412, -1.131, -0.739, -0.967, 1.913, 1.764, -0.637, -0.256, -0.743, 0.986, -1.84, -1.73, -0.384};
const std::vector<double> kY = {0.945, 8.545, -0.714, -1.636, 1.401, 2.305, 1.147, -0.504, 3.522, -1.928, 3.003, -0.756, 0.91, 1.222, 0.457, 2.449, 1.184, 0.736, 1.19, 1.86, -4.503, 2.534, 2.673, 2.943, -2.398, -0.282, -1.778, 0.831, 5.863, -0.269};

Dataset fixture() {
  Dataset d;
  d.x.resize(30, 3);
  d.y.resize(30);
  for (int i = 0; i < 30; ++i) {
    d.x.row(i) << kX1[i], kX2[i], kX3[i];
    d.y(i) = kY[i];
    d.row_ids.push_back("r" + std::to_string(i));
  }
  d.feature_names = {"a", "b", "c"};
  return d;
}

void expect_coefficients(const LinearModel &m, std::vector<double> expected, double tol) {
  ASSERT_EQ(m.coefficients.size(), static_cast<Eigen::Index>(expected.size()));
  for (std::size_t j = 0; j < expected.size(); ++j)
    EXPECT_NEAR(m.coefficients(j), expected[j], tol) << "coefficient " << j;
  EXPECT_NEAR(m.intercept, 1.0317333333333334, 1e-12);
}

LinearModel fit(Penalty p, double lambda, double l1_ratio = 0.5) {
  LinearOptions o;
  o.penalty = p;
  o.lambda = lambda;
  o.l1_ratio = l1_ratio;
  o.tolerance = 1e-12;
  o.max_iters = 100000;
  return fit_linear(fixture(), o);
}

Dataset synthetic(std::size_t n, std::uint64_t seed) {
  return synth::heteroskedastic_regression(n, seed, 0.3);
}

} // namespace

TEST(Linear, RidgeMatchesSklearn) {
  expect_coefficients(fit(Penalty::ridge, 0.5),
                      {1.2376578275041452, -0.9544227563792527, 0.6651353159582073}, 1e-12);
  expect_coefficients(fit(Penalty::ridge, 10),
                      {0.7847802049481364, -0.49476202498482413, 0.504007660586941}, 1e-12);
}

TEST(Linear, RidgeAtZeroIsOls) {
  auto m = fit(Penalty::ridge, 0);
  auto ols = stats::ols_with_intercept(fixture().x, fixture().y);
  VectorXd diff = m.predict(fixture().x) - ols.fitted;
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Linear, LassoMatchesSklearn) {
  expect_coefficients(fit(Penalty::lasso, 0.1),
                      {1.0688183929725212, -0.7403744141767622, 0.5609647782859685}, 1e-8);
  auto sparse = fit(Penalty::lasso, 0.5);
  expect_coefficients(sparse, {0.3779031452677591, 0, 0.14199915377504566}, 1e-8);
  EXPECT_EQ(sparse.coefficients(1), 0.0);
}

TEST(Linear, LassoLambdaMax) {
  double lmax = lasso_lambda_max(fixture());
  EXPECT_NEAR(lmax, 0.9228001159938614, 1e-12);
  EXPECT_EQ(fit(Penalty::lasso, lmax * 1.0001).coefficients.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(fit(Penalty::lasso, lmax * 0.99).coefficients.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Linear, ElasticNetMatchesSklearnAndEndpoints) {
  expect_coefficients(fit(Penalty::elasticnet, 0.2, 0.5),
                      {0.8973486624822435, -0.5688514470440409, 0.5092518247497518}, 1e-8);
  // r = 1 is the lasso; r = 0 is ridge with lambda scaled by n.
  VectorXd d1 = fit(Penalty::elasticnet, 0.1, 1.0).coefficients - fit(Penalty::lasso, 0.1).coefficients;
  EXPECT_LT(d1.cwiseAbs().maxCoeff(), 1e-8);
  VectorXd d0 = fit(Penalty::elasticnet, 0.1, 0.0).coefficients - fit(Penalty::ridge, 3.0).coefficients;
  EXPECT_LT(d0.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Linear, LassoSatisfiesKkt) {
  auto d = synthetic(400, 3);
  double lambda = 0.05;
  LinearOptions o;
  o.penalty = Penalty::lasso;
  o.lambda = lambda;
  o.tolerance = 1e-12;
  auto m = fit_linear(d, o);
  MatrixXd xs = m.scaler.transform(d.x);
  VectorXd r = d.y.array() - d.y.mean() - (xs * m.coefficients).array();
  VectorXd g = xs.transpose() * r / static_cast<double>(d.rows());
  for (Eigen::Index j = 0; j < g.size(); ++j) {
    if (m.coefficients(j) != 0)
      EXPECT_NEAR(g(j), lambda * (m.coefficients(j) > 0 ? 1 : -1), 1e-7);
    else
      EXPECT_LE(std::abs(g(j)), lambda + 1e-9);
  }
}

TEST(Linear, NonConvergenceCarriesLastIterate) {
  LinearOptions o;
  o.penalty = Penalty::lasso;
  o.lambda = 1e-4;
  o.tolerance = 1e-30;
  o.max_iters = 2;
  try {
    fit_linear(synthetic(200, 4), o);
    FAIL() << "expected NonConvergence";
  } catch (const NonConvergence &e) {
    EXPECT_EQ(e.last_iterate.coefficients.size(), 7);
  }
}

TEST(YeoJohnsonTransform, MatchesScipy) {
  EXPECT_NEAR(YeoJohnson::transform(2.0, 0.5), 1.4641016151377548, 1e-12);
  EXPECT_NEAR(YeoJohnson::transform(-1.5, 0.5), -1.968564716806983, 1e-12);
  EXPECT_NEAR(YeoJohnson::transform(3.0, 0.0), 1.3862943611198906, 1e-12);
  EXPECT_NEAR(YeoJohnson::transform(-2.0, 2.0), -1.0986122886681098, 1e-12);
  EXPECT_NEAR(YeoJohnson::transform(0.7, -1.3), 0.38333230526783413, 1e-12);
  auto yj = YeoJohnson::fit(kY, 1e-9);
  EXPECT_NEAR(yj.lambda(), 0.8900028334160358, 1e-5);
  EXPECT_NEAR(YeoJohnson::log_likelihood(kY, yj.lambda()), -26.65548293122538, 1e-6);
}

TEST(YeoJohnsonTransform, InverseRoundTrip) {
  for (double lambda : {-1.3, 0.0, 0.5, 1.0, 2.0, 2.7}) {
    YeoJohnson yj(lambda);
    for (double y : {-4.0, -0.5, 0.0, 0.3, 6.0})
      EXPECT_NEAR(yj.invert(yj.apply(y)), y, 1e-9) << lambda << " " << y;
  }
}

TEST(Wls, WeightsNormalizedAndDownweightNoisyRows) {
  auto d = synthetic(1500, 5);
  LinearOptions o;
  o.lambda = 1;
  auto base = fit_linear(d, o);
  WlsDiagnostics diag;
  auto wls = fit_wls(d, base, &diag);
  EXPECT_TRUE(wls.weighted);
  EXPECT_FALSE(diag.fell_back);
  EXPECT_NEAR(diag.weights.mean(), 1.0, 1e-12);
  EXPECT_GT(diag.weights.maxCoeff() / diag.weights.minCoeff(), 2.0);
}

TEST(Wls, UnitWeightsReproduceRidge) {
  auto d = fixture();
  auto scaler = Scaler::fit(d.x);
  MatrixXd xs = scaler.transform(d.x);
  auto [b0, b] = solve_weighted_ridge(xs, d.y, VectorXd::Constant(30, 3.0), 0.5);
  EXPECT_NEAR(b0, 1.0317333333333334, 1e-12);
  EXPECT_NEAR(b(0), 1.2376578275041452, 1e-12);
}

TEST(Trees, StumpFindsBestSplitByBruteForce) {
  Rng rng(9);
  const int n = 60;
  MatrixXd x(n, 3);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j)
      x(i, j) = std::round(rng.uniform(0, 10) * 4) / 4;  // ties on purpose
    y(i) = (x(i, 1) > 6 ? 3 : 0) + rng.normal();
  }
  TreeParams p;
  p.max_depth = 1;
  p.min_samples_leaf = 4;
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  auto tree = fit_tree(x, y, rows, p, 3, 1);

  auto sse = [&](auto predict) {
    double s = 0;
    for (int i = 0; i < n; ++i) {
      double e = y(i) - predict(i);
      s += e * e;
    }
    return s;
  };
  double best = std::numeric_limits<double>::infinity();
  for (int j = 0; j < 3; ++j) {
    for (int t = 0; t < n; ++t) {
      double thr = x(t, j);
      double sl = 0, sr = 0;
      int nl = 0, nr = 0;
      for (int i = 0; i < n; ++i)
        (x(i, j) <= thr ? (sl += y(i), ++nl) : (sr += y(i), ++nr));
      if (nl < 4 || nr < 4)
        continue;
      best = std::min(best, sse([&](int i) { return x(i, j) <= thr ? sl / nl : sr / nr; }));
    }
  }
  double got = sse([&](int i) {
    std::vector<double> row = {x(i, 0), x(i, 1), x(i, 2)};
    return tree.predict_row(row);
  });
  EXPECT_NEAR(got, best, 1e-9);
  EXPECT_EQ(tree.nodes[0].feature, 1);
}

TEST(Trees, ForestIndependentOfWorkers) {
  auto d = synthetic(500, 6);
  auto p = forest_defaults();
  p.n_estimators = 24;
  p.seed = 4;
  p.workers = 1;
  VectorXd a = fit_forest(d, p).predict(d.x);
  p.workers = 4;
  VectorXd b = fit_forest(d, p).predict(d.x);
  EXPECT_EQ(a, b);
}

TEST(Trees, GbmImprovesOnTheMean) {
  auto d = synthetic(600, 7);
  auto p = gbm_defaults();
  p.n_estimators = 50;
  auto m = fit_gbm(d, p);
  EXPECT_GT(evaluate(m.predict(d.x), d.y).r2, 0.8);
  EXPECT_NEAR(m.init, d.y.mean(), 1e-12);
}

TEST(SplitAndCv, StratifiedSplitPartitionsRows) {
  auto d = synthetic(1003, 8);
  auto s = split_stratified(d, 0.2, 10, 5);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(1003);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
  EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
  std::vector<int> per_bin(10);
  for (auto r : s.test)
    ++per_bin[s.bin_of_row[r]];
  for (int c : per_bin)
    EXPECT_EQ(c, 20);
  auto again = split_stratified(d, 0.2, 10, 5);
  EXPECT_EQ(again.test, s.test);
  EXPECT_NE(split_stratified(d, 0.2, 10, 6).test, s.test);
}

TEST(SplitAndCv, CrossValidationPicksTheBestScore) {
  auto d = synthetic(300, 9);
  auto grid = default_grid(Family::ridge);
  auto cv = cross_validate(d, grid, 5, 3);
  ASSERT_EQ(cv.scores.size(), grid.size());
  auto best = std::max_element(cv.scores.begin(), cv.scores.end()) - cv.scores.begin();
  EXPECT_EQ(cv.scores[cv.best_index], cv.scores[static_cast<std::size_t>(best)]);
  std::vector<int> fold_sizes(5);
  for (auto f : cv.fold_of_row)
    ++fold_sizes[f];
  for (int s : fold_sizes)
    EXPECT_EQ(s, 60);
  EXPECT_THROW(cross_validate(d, grid, 1, 3), Error);
}

TEST(Evaluation, MetricsAndCategories) {
  VectorXd p(4), t(4);
  p << 1, 2, 3, 5;
  t << 1, 2, 4, 4;
  auto m = evaluate(p, t);
  EXPECT_NEAR(m.rmse, std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(m.mae, 0.5, 1e-15);
  EXPECT_NEAR(m.r2, 1 - 2.0 / 6.75, 1e-15);
  EXPECT_TRUE(std::isnan(evaluate(p, VectorXd::Constant(4, 2.0)).r2));

  VectorXd tp(5), tt(5);
  tt << -1, 0.5, 3, 4.5, 7;
  tp << -1.5, 0.5, 2, 4.5, 7;
  auto cats = report_error_by_category(tp, tt);
  ASSERT_EQ(cats.size(), 5u);
  EXPECT_TRUE(cats[2].balanced);
  EXPECT_EQ(cats[2].count, 1u);
  EXPECT_DOUBLE_EQ(cats[2].median_abs_error, 1.0);
}

TEST(Stratified, RoutingRules) {
  StratifiedPredictor s;
  s.molwt_index = 0;
  s.donors_index = 1;
  s.acceptors_index = 2;
  s.feature_names = {"MolWt", "NumHDonors", "NumHAcceptors"};
  s.mode = RoutingMode::provisional_estimate;
  std::vector<double> ok = {500, 5, 10}, heavy = {500.1, 1, 1};
  EXPECT_EQ(s.route(ok, 5.0), 'A');
  EXPECT_EQ(s.route(ok, 5.01), 'B');
  EXPECT_EQ(s.route(heavy, 0.0), 'B');
  s.mode = RoutingMode::features_only;
  EXPECT_EQ(s.route(ok, 9.0), 'A');
}

TEST(Stratified, FitAndPredictOnDescriptorLikeData) {
  auto d = synthetic(2000, 10);
  // Relabel features so the routing columns exist.
  d.feature_names = modeling_features();
  d.x.col(0) = (d.x.col(0).array() * 120 + 350).matrix();  // MolWt
  d.x.col(2) = d.x.col(2).array().abs().round();           // donors
  d.x.col(3) = (d.x.col(3).array().abs() * 4).round();     // acceptors
  StratifiedOptions o;
  o.min_stratum = 20;
  auto s = fit_stratified(d, o);
  EXPECT_EQ(s.train_a + s.train_b, d.rows());
  auto pred = predict_stratified(s, d);
  EXPECT_EQ(pred.routes.size(), d.rows());
  EXPECT_GE(pred.disagreement_rate, 0.0);
  EXPECT_LT(pred.disagreement_rate, 0.5);
  o.min_stratum = d.rows();
  EXPECT_THROW(fit_stratified(d, o), Error);
}

TEST(ModelIo, RoundTripPreservesPredictions) {
  auto d = synthetic(300, 11);
  std::vector<ModelSpec> specs(3);
  specs[0].family = Family::elasticnet;
  specs[0].linear.penalty = Penalty::elasticnet;
  specs[0].linear.lambda = 0.01;
  specs[0].linear.yeo_johnson = true;
  specs[1].family = Family::random_forest;
  specs[1].trees = forest_defaults();
  specs[1].trees.n_estimators = 5;
  specs[2].family = Family::gradient_boosting;
  specs[2].trees = gbm_defaults();
  specs[2].trees.n_estimators = 10;
  for (const auto &spec : specs) {
    auto model = fit_model(d, spec);
    std::stringstream buf;
    save_model(model, buf);
    auto back = load_model(buf);
    EXPECT_EQ(predict(back, d.x), predict(model, d.x)) << to_string(spec.family);
    EXPECT_EQ(model_kind(back), model_kind(model));
  }
  std::istringstream bad("#something-else\n");
  EXPECT_THROW(load_model(bad), Error);
}

TEST(DatasetCsv, LoadsQuotedFields) {
  std::istringstream in(
      "InChIKey,SMILES,Original_InChI,logP_target,MolWt,TPSA,NumHDonors,NumHAcceptors,"
      "NumRotatableBonds,NumAromaticRings,FractionCSP3,HeavyAtomCount\n"
      "K,CCO,\"InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3\",-0.1,46.069,20.23,1,1,0,0,1,3\n");
  auto d = load_dataset_csv(in);
  ASSERT_EQ(d.rows(), 1u);
  EXPECT_EQ(d.cols(), 7u);
  EXPECT_EQ(d.row_ids[0], "InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3");
  EXPECT_DOUBLE_EQ(d.y(0), -0.1);
  EXPECT_DOUBLE_EQ(d.x(0, 0), 46.069);
}
