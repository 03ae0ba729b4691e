#pragma once

// Descriptive statistics and regression diagnostics.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace sdforge::stats {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Type-7 (linear interpolation) quantile of an ascending-sorted sample.
double quantile_sorted(std::span<const double> sorted, double q);

struct ColumnSummary {
  double mean = 0;
  double median = 0;
  double std_dev = 0;  // sample (n - 1)
  double min = 0;
  double max = 0;
  double q1 = 0;
  double q3 = 0;
  double iqr = 0;
  double skewness = 0;         // m3 / m2^1.5
  double excess_kurtosis = 0;  // m4 / m2^2 - 3
  std::size_t n = 0;
};

// Requires n >= 2. Skewness and kurtosis are 0 for a constant column.
ColumnSummary summarize(std::span<const double> column);

struct CorrelationMatrix {
  MatrixXd r;         // NaN where undefined
  MatrixXd p_values;  // two-sided, t with n - 2 df; NaN where undefined
  std::vector<bool> zero_variance;  // per column

  bool defined(std::size_t i, std::size_t j) const {
    return !zero_variance[i] && !zero_variance[j];
  }
};

// Columns of `data` are variables.
CorrelationMatrix pearson_matrix(const MatrixXd &data);

struct OlsFit {
  VectorXd coefficients;  // intercept first
  VectorXd fitted;
  double r_squared = 0;  // NaN when y is constant
  bool rank_deficient = false;
};

// Least squares of y on [1, X] via column-pivoting QR.
OlsFit ols_with_intercept(const MatrixXd &x, const VectorXd &y);

// 1 / (1 - R_j^2) from regressing each column on the others (with
// intercept); +inf under exact linear dependence.
std::vector<double> vif(const MatrixXd &features);

struct OutlierResult {
  std::vector<std::size_t> indices;  // ascending
  double lower = 0;
  double upper = 0;
};

// Values strictly outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR]. Requires n >= 4.
OutlierResult iqr_outliers(std::span<const double> column);

struct NormalityResult {
  double statistic = 0;  // K^2
  double p_value = 0;
  double z_skewness = 0;
  double z_kurtosis = 0;
  std::size_t n_used = 0;
};

// D'Agostino-Pearson omnibus K^2 on a seeded subsample of min(n, subsample)
// values; p from chi-square with 2 df.
NormalityResult normality_test(std::span<const double> column,
                               std::size_t subsample, std::uint64_t seed);

struct BreuschPaganResult {
  double lm_statistic = 0;
  int degrees_of_freedom = 0;
  double p_value = 1;
};

// LM = n R^2 of e^2 regressed on [1, regressors]; df = number of regressors.
BreuschPaganResult breusch_pagan(const VectorXd &residuals,
                                 const MatrixXd &regressors);

struct SymmetricEigen {
  VectorXd values;   // descending
  MatrixXd vectors;  // columns, matching `values`
};

// Cyclic Jacobi rotations.
SymmetricEigen jacobi_eigen(const MatrixXd &symmetric, double tolerance = 1e-14,
                            int max_sweeps = 100);

struct PcaResult {
  MatrixXd loadings;  // p x k, orthonormal columns
  VectorXd eigenvalues;  // all p, descending
  VectorXd explained_variance_ratio;  // k
  MatrixXd scores;  // n x k projections of the standardized data
  VectorXd means;
  VectorXd scales;
};

// Principal components of the correlation matrix. Each loading vector is
// signed so its largest-magnitude element is positive.
PcaResult pca(const MatrixXd &features, std::size_t k);

// Upper tail of chi-square(df).
double chi2_sf(double x, double df);

// NaN when either input has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

} // namespace sdforge::stats
