#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sdforge/explain.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/synth.hpp"

using namespace sdforge;
using namespace sdforge::explain;

namespace {

MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m(i, j) = rng.normal();
  return m;
}

double nonlinear(std::span<const double> x) {
  return x[0] * x[1] + std::max(x[2], 0.5 * x[3]) + std::sin(x[0]);
}

// Permutation definition of the Shapley value with the same interventional
// value function, enumerated over all p! orderings.
std::vector<double> permutation_shapley(const Predictor &f, const MatrixXd &bg,
                                        const std::vector<double> &x) {
  const std::size_t p = x.size();
  auto value = [&](const std::vector<bool> &in) {
    double s = 0;
    std::vector<double> z(p);
    for (Eigen::Index b = 0; b < bg.rows(); ++b) {
      for (std::size_t j = 0; j < p; ++j)
        z[j] = in[j] ? x[j] : bg(b, static_cast<Eigen::Index>(j));
      s += f(z);
    }
    return s / static_cast<double>(bg.rows());
  };
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(p, 0);
  double perms = 0;
  do {
    std::vector<bool> in(p, false);
    double prev = value(in);
    for (auto j : order) {
      in[j] = true;
      double next = value(in);
      phi[j] += next - prev;
      prev = next;
    }
    perms += 1;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto &v : phi)
    v /= perms;
  return phi;
}

} // namespace

TEST(Shap, WeightsSumToOneOverCoalitionSizes) {
  for (std::size_t p = 1; p <= 15; ++p) {
    double total = 0;
    for (std::size_t s = 0; s < p; ++s)
      total += std::tgamma(double(p)) / (std::tgamma(double(s) + 1) * std::tgamma(double(p - s))) *
               shapley_weight(s, p);
    EXPECT_NEAR(total, 1.0, 1e-12) << p;
  }
  EXPECT_DOUBLE_EQ(shapley_weight(0, 3), 1.0 / 3);
  EXPECT_DOUBLE_EQ(shapley_weight(1, 3), 1.0 / 6);
}

TEST(Shap, MatchesPermutationDefinition) {
  MatrixXd bg = random_matrix(12, 4, 1);
  ShapExplainer explainer(nonlinear, bg, {"a", "b", "c", "d"});
  MatrixXd rows = random_matrix(5, 4, 2);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    std::vector<double> row = {rows(i, 0), rows(i, 1), rows(i, 2), rows(i, 3)};
    auto e = explainer.explain(row);
    auto expected = permutation_shapley(nonlinear, bg, row);
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(e.phi[j], expected[j], 1e-12);
  }
}

TEST(Shap, LocalAccuracy) {
  MatrixXd bg = random_matrix(20, 4, 3);
  ShapExplainer explainer(nonlinear, bg, {"a", "b", "c", "d"});
  std::vector<double> row = {0.3, -1.2, 2.0, 0.1};
  auto e = explainer.explain(row);
  double sum = std::accumulate(e.phi.begin(), e.phi.end(), 0.0);
  EXPECT_NEAR(e.base_value + sum, e.prediction, 1e-12);
  EXPECT_DOUBLE_EQ(e.prediction, nonlinear(row));
}

TEST(Shap, LinearModelClosedForm) {
  auto d = synth::suppression_regression(300, 4);
  models::LinearOptions o;
  o.lambda = 0.5;
  auto model = models::fit_linear(d, o);
  MatrixXd bg = sample_background(d.x, 50, 9);
  ShapExplainer explainer(make_predictor(model), bg, d.feature_names);
  Eigen::VectorXd bg_mean = bg.colwise().mean();
  for (int i = 0; i < 5; ++i) {
    std::vector<double> row;
    for (Eigen::Index j = 0; j < d.x.cols(); ++j)
      row.push_back(d.x(i, j));
    auto e = explainer.explain(row);
    for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
      double slope = model.coefficients(j) / model.scaler.scale()(j);
      EXPECT_NEAR(e.phi[j], slope * (row[j] - bg_mean(j)), 1e-10);
    }
  }
}

TEST(Shap, DummyFeatureGetsZero) {
  auto f = [](std::span<const double> x) { return x[0] * x[0] + 2 * x[2]; };
  ShapExplainer explainer(f, random_matrix(8, 3, 5), {"a", "unused", "c"});
  std::vector<double> row = {1.5, 100.0, -0.5};
  EXPECT_EQ(explainer.explain(row).phi[1], 0.0);
}

TEST(Shap, ExplainRowsIndependentOfWorkers) {
  MatrixXd bg = random_matrix(10, 4, 6);
  ShapExplainer explainer(nonlinear, bg, {"a", "b", "c", "d"});
  MatrixXd rows = random_matrix(9, 4, 7);
  std::vector<std::string> ids(9);
  for (int i = 0; i < 9; ++i)
    ids[i] = "r" + std::to_string(i);
  auto a = explainer.explain_rows(rows, ids, 1);
  auto b = explainer.explain_rows(rows, ids, 4);
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(a[i].phi, b[i].phi);
    EXPECT_EQ(b[i].row_id, ids[i]);
  }
}

TEST(Shap, RejectsBadConfigurations) {
  EXPECT_THROW(ShapExplainer(nonlinear, MatrixXd(0, 4), {"a", "b", "c", "d"}), Error);
  EXPECT_THROW(ShapExplainer(nonlinear, random_matrix(3, 4, 1), {"a", "b"}), Error);
  std::vector<std::string> many(16, "f");
  EXPECT_THROW(ShapExplainer(nonlinear, random_matrix(3, 16, 1), many), Error);
}

TEST(Shap, BackgroundSampling) {
  MatrixXd data = random_matrix(40, 2, 8);
  auto a = sample_background(data, 10, 3);
  EXPECT_EQ(a.rows(), 10);
  EXPECT_EQ(a, sample_background(data, 10, 3));
  EXPECT_EQ(sample_background(data, 100, 3).rows(), 40);
}

TEST(Shap, SummaryRanksAndDirections) {
  auto f = [](std::span<const double> x) { return 3 * x[0] - x[1]; };
  MatrixXd bg = random_matrix(30, 3, 9);
  ShapExplainer explainer(f, bg, {"a", "b", "c"});
  MatrixXd rows = random_matrix(25, 3, 10);
  auto exps = explainer.explain_rows(rows, std::vector<std::string>(25, "r"));
  auto s = shap_summary(exps, rows, explainer.feature_names());
  EXPECT_EQ(s.ranking, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(s.direction, (std::vector<int>{1, -1, 0}));
  EXPECT_THROW(shap_summary({}, rows, explainer.feature_names()), Error);

  std::vector<double> imp = {0.5, 2.0, 0.5, 1.0};
  EXPECT_EQ(importance_ranks(imp), (std::vector<std::size_t>{3, 1, 3, 2}));

  std::ostringstream out;
  write_summary_csv(out, s);
  EXPECT_NE(out.str().find("a"), std::string::npos);
}
