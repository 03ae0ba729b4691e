#include "sdforge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "sdforge/error.hpp"
#include "sdforge/rng.hpp"

namespace sdforge::stats {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Moments {
  double mean = 0, m2 = 0, m3 = 0, m4 = 0;
};

Moments central_moments(std::span<const double> x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  m.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  for (double v : x) {
    double d = v - m.mean, d2 = d * d;
    m.m2 += d2;
    m.m3 += d2 * d;
    m.m4 += d2 * d2;
  }
  m.m2 /= n;
  m.m3 /= n;
  m.m4 /= n;
  return m;
}

} // namespace

double chi2_sf(double x, double df) {
  if (!(df > 0))
    throw Error("chi2_sf: df must be positive");
  if (x <= 0)
    return 1.0;
  if (std::isinf(x))
    return 0.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty())
    throw Error("quantile of an empty sample");
  double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  auto lo = static_cast<std::size_t>(std::floor(h));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

ColumnSummary summarize(std::span<const double> column) {
  if (column.size() < 2)
    throw Error("summarize needs at least two values");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  auto m = central_moments(column);
  const double n = static_cast<double>(column.size());

  ColumnSummary s;
  s.n = column.size();
  s.mean = m.mean;
  s.median = quantile_sorted(sorted, 0.5);
  s.std_dev = std::sqrt(m.m2 * n / (n - 1.0));
  s.min = sorted.front();
  s.max = sorted.back();
  s.q1 = quantile_sorted(sorted, 0.25);
  s.q3 = quantile_sorted(sorted, 0.75);
  s.iqr = s.q3 - s.q1;
  if (m.m2 > 0) {
    s.skewness = m.m3 / std::pow(m.m2, 1.5);
    s.excess_kurtosis = m.m4 / (m.m2 * m.m2) - 3.0;
  }
  return s;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw Error("pearson needs two aligned samples of size >= 2");
  const double n = static_cast<double>(a.size());
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 || sbb == 0)
    return kNaN;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

CorrelationMatrix pearson_matrix(const MatrixXd &data) {
  const auto n = data.rows();
  const auto p = data.cols();
  if (n < 2)
    throw Error("pearson_matrix needs at least two rows");
  CorrelationMatrix out;
  out.r = MatrixXd::Constant(p, p, kNaN);
  out.p_values = MatrixXd::Constant(p, p, kNaN);
  out.zero_variance.assign(static_cast<std::size_t>(p), false);

  MatrixXd centered = data.rowwise() - data.colwise().mean();
  VectorXd ss = centered.colwise().squaredNorm();
  for (Eigen::Index j = 0; j < p; ++j)
    out.zero_variance[static_cast<std::size_t>(j)] = !(ss(j) > 0);

  const double df = static_cast<double>(n) - 2.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (out.zero_variance[static_cast<std::size_t>(i)])
      continue;
    for (Eigen::Index j = i; j < p; ++j) {
      if (out.zero_variance[static_cast<std::size_t>(j)])
        continue;
      double r = i == j ? 1.0
                        : std::clamp(centered.col(i).dot(centered.col(j)) /
                                         std::sqrt(ss(i) * ss(j)),
                                     -1.0, 1.0);
      double pv = kNaN;
      if (df > 0) {
        double one_minus = 1.0 - r * r;
        if (one_minus <= 0)
          pv = 0.0;
        else {
          double t2 = r * r * df / one_minus;
          pv = boost::math::ibeta(df / 2.0, 0.5, df / (df + t2));
        }
      }
      out.r(i, j) = out.r(j, i) = r;
      out.p_values(i, j) = out.p_values(j, i) = pv;
    }
  }
  return out;
}

OlsFit ols_with_intercept(const MatrixXd &x, const VectorXd &y) {
  const auto n = x.rows();
  if (y.size() != n)
    throw Error("ols: row count mismatch");
  MatrixXd design(n, x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;

  Eigen::ColPivHouseholderQR<MatrixXd> qr(design);
  OlsFit fit;
  fit.rank_deficient = qr.rank() < design.cols();
  fit.coefficients = qr.solve(y);
  fit.fitted = design * fit.coefficients;
  double mean = y.mean();
  double sst = (y.array() - mean).square().sum();
  double sse = (y - fit.fitted).squaredNorm();
  fit.r_squared = sst > 0 ? 1.0 - sse / sst : kNaN;
  return fit;
}

std::vector<double> vif(const MatrixXd &features) {
  const auto p = features.cols();
  if (p < 2)
    throw Error("vif needs at least two features");
  if (features.rows() <= p)
    throw Error("vif needs more rows than features");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    MatrixXd others(features.rows(), p - 1);
    others.leftCols(j) = features.leftCols(j);
    others.rightCols(p - 1 - j) = features.rightCols(p - 1 - j);
    auto fit = ols_with_intercept(others, features.col(j));
    double r2 = fit.r_squared;
    if (std::isnan(r2) || r2 >= 1.0 - 1e-12)
      out.push_back(std::numeric_limits<double>::infinity());
    else
      out.push_back(1.0 / (1.0 - r2));
  }
  return out;
}

OutlierResult iqr_outliers(std::span<const double> column) {
  if (column.size() < 4)
    throw Error("iqr_outliers needs at least four values");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  double q1 = quantile_sorted(sorted, 0.25);
  double q3 = quantile_sorted(sorted, 0.75);
  double iqr = q3 - q1;
  OutlierResult out;
  out.lower = q1 - 1.5 * iqr;
  out.upper = q3 + 1.5 * iqr;
  for (std::size_t i = 0; i < column.size(); ++i)
    if (column[i] < out.lower || column[i] > out.upper)
      out.indices.push_back(i);
  return out;
}

NormalityResult normality_test(std::span<const double> column,
                               std::size_t subsample, std::uint64_t seed) {
  if (subsample < 20)
    throw Error("normality_test: subsample must be at least 20");
  std::vector<double> x(column.begin(), column.end());
  if (x.size() > subsample) {
    Rng rng(seed);
    // Partial Fisher-Yates: the first `subsample` slots become the sample.
    for (std::size_t i = 0; i < subsample; ++i)
      std::swap(x[i], x[i + rng.below(x.size() - i)]);
    x.resize(subsample);
  }
  if (x.size() < 20)
    throw Error("normality_test: insufficient data (need at least 20 values)");

  const double n = static_cast<double>(x.size());
  auto m = central_moments(x);
  if (!(m.m2 > 0))
    throw Error("normality_test: constant sample");
  const double b1 = m.m3 / std::pow(m.m2, 1.5);
  const double b2 = m.m4 / (m.m2 * m.m2);

  // Skewness test (D'Agostino 1970).
  double y = b1 * std::sqrt((n + 1) * (n + 3) / (6.0 * (n - 2)));
  double beta2 = 3.0 * (n * n + 27 * n - 70) * (n + 1) * (n + 3) /
                 ((n - 2.0) * (n + 5) * (n + 7) * (n + 9));
  double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
  double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
  double alpha = std::sqrt(2.0 / (w2 - 1.0));
  if (y == 0)
    y = 1;
  double z_skew = delta * std::log(y / alpha + std::sqrt((y / alpha) * (y / alpha) + 1.0));
  if (b1 == 0)
    z_skew = 0;

  // Kurtosis test (Anscombe & Glynn 1983).
  double e = 3.0 * (n - 1) / (n + 1);
  double var_b2 = 24.0 * n * (n - 2) * (n - 3) / ((n + 1) * (n + 1) * (n + 3) * (n + 5));
  double xk = (b2 - e) / std::sqrt(var_b2);
  double sqrt_beta1 = 6.0 * (n * n - 5 * n + 2) / ((n + 7) * (n + 9)) *
                      std::sqrt(6.0 * (n + 3) * (n + 5) / (n * (n - 2) * (n - 3)));
  double a = 6.0 + 8.0 / sqrt_beta1 *
                       (2.0 / sqrt_beta1 + std::sqrt(1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)));
  double term1 = 1.0 - 2.0 / (9.0 * a);
  double denom = 1.0 + xk * std::sqrt(2.0 / (a - 4.0));
  double term2 = std::copysign(std::cbrt(std::abs((1.0 - 2.0 / a) / denom)), denom);
  double z_kurt = (term1 - term2) / std::sqrt(2.0 / (9.0 * a));

  NormalityResult out;
  out.z_skewness = z_skew;
  out.z_kurtosis = z_kurt;
  out.statistic = z_skew * z_skew + z_kurt * z_kurt;
  out.p_value = chi2_sf(out.statistic, 2.0);
  out.n_used = x.size();
  return out;
}

BreuschPaganResult breusch_pagan(const VectorXd &residuals,
                                 const MatrixXd &regressors) {
  const auto n = residuals.size();
  if (regressors.rows() != n)
    throw Error("breusch_pagan: row count mismatch");
  if (n <= regressors.cols() + 1)
    throw Error("breusch_pagan: need more observations than regressors");
  BreuschPaganResult out;
  out.degrees_of_freedom = static_cast<int>(regressors.cols());

  VectorXd e2 = residuals.array().square();
  double mean = e2.mean();
  if (!((e2.array() - mean).square().sum() > 0)) {
    out.lm_statistic = 0;
    out.p_value = 1;
    return out;
  }
  auto fit = ols_with_intercept(regressors, e2);
  if (fit.rank_deficient)
    throw Error("breusch_pagan: degenerate auxiliary design");
  out.lm_statistic = std::max(0.0, static_cast<double>(n) * fit.r_squared);
  out.p_value = chi2_sf(out.lm_statistic, out.degrees_of_freedom);
  return out;
}

SymmetricEigen jacobi_eigen(const MatrixXd &symmetric, double tolerance,
                            int max_sweeps) {
  const auto p = symmetric.rows();
  if (symmetric.cols() != p)
    throw Error("jacobi_eigen: matrix must be square");
  MatrixXd a = 0.5 * (symmetric + symmetric.transpose());
  MatrixXd v = MatrixXd::Identity(p, p);
  const double scale = std::max(a.norm(), std::numeric_limits<double>::min());

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0;
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = i + 1; j < p; ++j)
        off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= tolerance * scale)
      break;
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = i + 1; j < p; ++j) {
        if (a(i, j) == 0)
          continue;
        double theta = (a(j, j) - a(i, i)) / (2.0 * a(i, j));
        double t = std::copysign(1.0, theta) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (Eigen::Index k = 0; k < p; ++k) {
          double aki = a(k, i), akj = a(k, j);
          a(k, i) = c * aki - s * akj;
          a(k, j) = s * aki + c * akj;
        }
        for (Eigen::Index k = 0; k < p; ++k) {
          double aik = a(i, k), ajk = a(j, k);
          a(i, k) = c * aik - s * ajk;
          a(j, k) = s * aik + c * ajk;
        }
        for (Eigen::Index k = 0; k < p; ++k) {
          double vki = v(k, i), vkj = v(k, j);
          v(k, i) = c * vki - s * vkj;
          v(k, j) = s * vki + c * vkj;
        }
      }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto x, auto y) { return a(x, x) > a(y, y); });
  SymmetricEigen out;
  out.values.resize(p);
  out.vectors.resize(p, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

PcaResult pca(const MatrixXd &features, std::size_t k) {
  const auto n = features.rows();
  const auto p = features.cols();
  if (k == 0 || static_cast<Eigen::Index>(k) > p)
    throw Error("pca: k must be between 1 and the number of features");
  if (n < 2)
    throw Error("pca: need at least two rows");

  PcaResult out;
  out.means = features.colwise().mean();
  MatrixXd z = features.rowwise() - out.means.transpose();
  out.scales = (z.colwise().squaredNorm() / static_cast<double>(n)).array().sqrt();
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(out.scales(j) > 0))
      throw Error("pca: constant feature cannot be standardized");
  z = z.array().rowwise() / out.scales.transpose().array();
  MatrixXd corr = z.transpose() * z / static_cast<double>(n);

  auto eig = jacobi_eigen(corr);
  out.eigenvalues = eig.values.cwiseMax(0.0);
  const double total = out.eigenvalues.sum();
  const auto kk = static_cast<Eigen::Index>(k);
  out.loadings = eig.vectors.leftCols(kk);
  for (Eigen::Index c = 0; c < kk; ++c) {
    Eigen::Index arg = 0;
    out.loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.loadings(arg, c) < 0)
      out.loadings.col(c) *= -1.0;
  }
  out.explained_variance_ratio = out.eigenvalues.head(kk) / total;
  out.scores = z * out.loadings;
  return out;
}

} // namespace sdforge::stats
