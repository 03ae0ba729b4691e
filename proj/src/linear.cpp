#include "sdforge/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>

#include "sdforge/stats.hpp"
#include "strings.hpp"

namespace sdforge::models {

namespace {

constexpr double kWlsEpsilon = 1e-8;

double soft_threshold(double z, double gamma) {
  if (z > gamma)
    return z - gamma;
  if (z < -gamma)
    return z + gamma;
  return 0.0;
}

} // namespace

const std::vector<std::string> &modeling_features() {
  static const std::vector<std::string> names = {
      "MolWt",           "TPSA",
      "NumHDonors",      "NumHAcceptors",
      "NumRotatableBonds", "NumAromaticRings",
      "FractionCSP3"};
  return names;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.feature_names = feature_names;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  out.row_ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = static_cast<Eigen::Index>(rows[i]);
    if (rows[i] >= this->rows())
      throw Error("dataset subset: row index out of range");
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(r);
    out.y(static_cast<Eigen::Index>(i)) = y(r);
    if (rows[i] < row_ids.size())
      out.row_ids.push_back(row_ids[rows[i]]);
  }
  return out;
}

std::optional<std::size_t> Dataset::feature_index(std::string_view name) const {
  for (std::size_t j = 0; j < feature_names.size(); ++j)
    if (feature_names[j] == name)
      return j;
  return std::nullopt;
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(x.cols()) != feature_names.size())
    throw Error("dataset: feature count does not match feature names");
  if (x.rows() != y.size())
    throw Error("dataset: X and y row counts differ");
  if (!x.allFinite() || !y.allFinite())
    throw Error("dataset: missing or non-finite values");
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted)
    throw ParseError("unterminated quoted CSV field");
  fields.push_back(std::move(field));
  return fields;
}

Dataset load_dataset_csv(std::istream &in, const std::vector<std::string> &features) {
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("dataset: empty input");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  auto header = split_csv_line(line);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name)
        return i;
    return std::nullopt;
  };
  std::vector<std::size_t> feature_cols;
  for (const auto &f : features) {
    auto c = column(f);
    if (!c)
      throw ParseError("dataset: missing column " + f, 1);
    feature_cols.push_back(*c);
  }
  auto target_col = column("logP_target");
  if (!target_col)
    throw ParseError("dataset: missing column logP_target", 1);
  auto inchi_col = column("Original_InChI");
  auto key_col = column("InChIKey");

  std::vector<double> values;
  std::vector<double> targets;
  std::vector<std::string> ids;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<std::string> fields;
    try {
      fields = split_csv_line(line);
    } catch (const ParseError &e) {
      throw ParseError(std::string("dataset: ") + e.what(), line_no);
    }
    if (fields.size() != header.size())
      throw ParseError("dataset: expected " + std::to_string(header.size()) +
                           " fields, found " + std::to_string(fields.size()),
                       line_no);
    for (std::size_t c : feature_cols) {
      auto v = detail::parse_double(fields[c]);
      if (!v)
        throw ParseError("dataset: missing or invalid value in " + header[c], line_no);
      values.push_back(*v);
    }
    auto t = detail::parse_double(fields[*target_col]);
    if (!t)
      throw ParseError("dataset: missing or invalid logP_target", line_no);
    targets.push_back(*t);
    std::string id;
    if (inchi_col && !fields[*inchi_col].empty())
      id = fields[*inchi_col];
    else if (key_col && !fields[*key_col].empty())
      id = fields[*key_col];
    else
      id = std::to_string(targets.size());
    ids.push_back(std::move(id));
  }

  Dataset data;
  const auto n = static_cast<Eigen::Index>(targets.size());
  const auto p = static_cast<Eigen::Index>(features.size());
  data.x.resize(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      data.x(i, j) = values[static_cast<std::size_t>(i * p + j)];
  data.y = Eigen::Map<VectorXd>(targets.data(), n);
  data.feature_names = features;
  data.row_ids = std::move(ids);
  return data;
}

Dataset load_dataset_csv(const std::filesystem::path &path,
                         const std::vector<std::string> &features) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return load_dataset_csv(in, features);
}

// ---------------------------------------------------------------------------

Scaler::Scaler(VectorXd mean, VectorXd scale)
    : mean_(std::move(mean)), scale_(std::move(scale)) {
  if (mean_.size() != scale_.size())
    throw Error("scaler: mean and scale sizes differ");
  for (Eigen::Index j = 0; j < scale_.size(); ++j)
    if (!(scale_(j) > 0))
      throw Error("scaler: non-positive scale");
}

Scaler Scaler::fit(const MatrixXd &x) {
  if (x.rows() < 2)
    throw Error("scaler: need at least two rows");
  VectorXd mean = x.colwise().mean();
  VectorXd scale(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double ss = (x.col(j).array() - mean(j)).square().sum();
    scale(j) = std::sqrt(ss / static_cast<double>(x.rows()));
    double magnitude = std::max(1.0, std::abs(mean(j)));
    if (!(scale(j) > 1e-12 * magnitude))
      throw Error("scaler: feature " + std::to_string(j) + " is constant");
  }
  return Scaler(std::move(mean), std::move(scale));
}

MatrixXd Scaler::transform(const MatrixXd &x) const {
  if (x.cols() != mean_.size())
    throw Error("scaler: column count mismatch");
  return (x.rowwise() - mean_.transpose()).array().rowwise() /
         scale_.transpose().array();
}

// ---------------------------------------------------------------------------

double YeoJohnson::transform(double y, double lambda) {
  constexpr double kEps = 1e-12;
  if (y >= 0) {
    if (std::abs(lambda) < kEps)
      return std::log1p(y);
    return std::expm1(lambda * std::log1p(y)) / lambda;
  }
  double mu = 2.0 - lambda;
  if (std::abs(mu) < kEps)
    return -std::log1p(-y);
  return -std::expm1(mu * std::log1p(-y)) / mu;
}

double YeoJohnson::log_likelihood(std::span<const double> y, double lambda) {
  const double n = static_cast<double>(y.size());
  double mean = 0;
  std::vector<double> z(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    z[i] = transform(y[i], lambda);
    mean += z[i];
  }
  mean /= n;
  double var = 0;
  for (double v : z)
    var += (v - mean) * (v - mean);
  var /= n;
  double jacobian = 0;
  for (double v : y)
    jacobian += std::copysign(std::log1p(std::abs(v)), v);
  if (!(var > 0))
    return -std::numeric_limits<double>::infinity();
  return -0.5 * n * std::log(var) + (lambda - 1.0) * jacobian;
}

YeoJohnson YeoJohnson::fit(std::span<const double> y, double tolerance) {
  if (y.size() < 2)
    throw Error("yeo-johnson: need at least two values");
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = -5.0, b = 5.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = log_likelihood(y, c), fd = log_likelihood(y, d);
  while (b - a > tolerance) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = log_likelihood(y, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = log_likelihood(y, d);
    }
  }
  double lambda = (a + b) / 2.0;
  return YeoJohnson(lambda, log_likelihood(y, lambda));
}

double YeoJohnson::invert(double z) const {
  constexpr double kEps = 1e-12;
  constexpr double kTiny = 1e-300;
  const double lambda = lambda_;
  if (z >= 0) {
    if (std::abs(lambda) < kEps)
      return std::expm1(z);
    double base = 1.0 + lambda * z;
    if (base <= 0)
      base = kTiny;
    return std::expm1(std::log(base) / lambda);
  }
  double mu = 2.0 - lambda;
  if (std::abs(mu) < kEps)
    return -std::expm1(-z);
  double base = 1.0 - mu * z;
  if (base <= 0)
    base = kTiny;
  return -std::expm1(std::log(base) / mu);
}

// ---------------------------------------------------------------------------

std::string to_string(Penalty penalty) {
  switch (penalty) {
  case Penalty::ridge:
    return "ridge";
  case Penalty::lasso:
    return "lasso";
  case Penalty::elasticnet:
    return "elasticnet";
  }
  return "?";
}

Penalty penalty_from_string(std::string_view name) {
  if (name == "ridge")
    return Penalty::ridge;
  if (name == "lasso")
    return Penalty::lasso;
  if (name == "elasticnet" || name == "enet")
    return Penalty::elasticnet;
  throw Error("unknown penalty: " + std::string(name));
}

VectorXd LinearModel::predict(const MatrixXd &x) const {
  VectorXd z = (scaler.transform(x) * coefficients).array() + intercept;
  if (transform)
    for (Eigen::Index i = 0; i < z.size(); ++i)
      z(i) = transform->invert(z(i));
  return z;
}

double LinearModel::predict_row(std::span<const double> row) const {
  if (row.size() != static_cast<std::size_t>(coefficients.size()))
    throw Error("linear model: row has wrong feature count");
  double z = intercept;
  for (std::size_t j = 0; j < row.size(); ++j) {
    auto jj = static_cast<Eigen::Index>(j);
    z += (row[j] - scaler.mean()(jj)) / scaler.scale()(jj) * coefficients(jj);
  }
  return transform ? transform->invert(z) : z;
}

std::pair<double, VectorXd> solve_weighted_ridge(const MatrixXd &xs,
                                                 const VectorXd &y,
                                                 const VectorXd &weights,
                                                 double lambda) {
  if (weights.size() != y.size() || xs.rows() != y.size())
    throw Error("weighted ridge: size mismatch");
  if (!(weights.array() > 0).all())
    throw Error("weighted ridge: weights must be positive");
  VectorXd w = weights / weights.mean();
  const double wsum = w.sum();
  VectorXd xbar = (xs.transpose() * w) / wsum;
  double ybar = w.dot(y) / wsum;
  MatrixXd xc = xs.rowwise() - xbar.transpose();
  VectorXd yc = y.array() - ybar;
  MatrixXd gram = xc.transpose() * w.asDiagonal() * xc;
  gram.diagonal().array() += lambda;
  VectorXd rhs = xc.transpose() * (w.asDiagonal() * yc);
  VectorXd beta = gram.ldlt().solve(rhs);
  if (!beta.allFinite())
    beta = gram.colPivHouseholderQr().solve(rhs);
  return {ybar - xbar.dot(beta), beta};
}

double lasso_lambda_max(const Dataset &train) {
  MatrixXd xs = Scaler::fit(train.x).transform(train.x);
  VectorXd yc = train.y.array() - train.y.mean();
  return (xs.transpose() * yc).cwiseAbs().maxCoeff() /
         static_cast<double>(train.rows());
}

LinearModel fit_linear(const Dataset &train, const LinearOptions &options) {
  train.validate();
  if (train.rows() < 2)
    throw Error("fit_linear: need at least two rows");
  if (!(options.lambda >= 0))
    throw Error("fit_linear: lambda must be non-negative");
  if (options.penalty == Penalty::elasticnet &&
      !(options.l1_ratio >= 0 && options.l1_ratio <= 1))
    throw Error("fit_linear: l1_ratio must lie in [0, 1]");

  LinearModel model;
  model.penalty = options.penalty;
  model.lambda = options.lambda;
  model.l1_ratio = options.penalty == Penalty::lasso       ? 1.0
                   : options.penalty == Penalty::ridge     ? 0.0
                                                           : options.l1_ratio;
  model.feature_names = train.feature_names;
  model.scaler = Scaler::fit(train.x);
  MatrixXd xs = model.scaler.transform(train.x);

  VectorXd y = train.y;
  if (options.yeo_johnson) {
    std::vector<double> raw(y.data(), y.data() + y.size());
    model.transform = YeoJohnson::fit(raw);
    for (Eigen::Index i = 0; i < y.size(); ++i)
      y(i) = model.transform->apply(y(i));
  }
  const double ybar = y.mean();
  const auto p = xs.cols();
  const double n = static_cast<double>(xs.rows());

  if (options.penalty == Penalty::ridge) {
    VectorXd yc = y.array() - ybar;
    MatrixXd gram = xs.transpose() * xs;
    gram.diagonal().array() += options.lambda;
    VectorXd rhs = xs.transpose() * yc;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(gram);
    if (qr.rank() < p)
      throw Error("fit_linear: normal equations are singular");
    model.coefficients = qr.solve(rhs);
    model.intercept = ybar;
    return model;
  }

  // Cyclic coordinate descent. Standardized columns have x_j'x_j / n = 1.
  const double l1 = options.lambda * model.l1_ratio;
  const double l2 = options.lambda * (1.0 - model.l1_ratio);
  VectorXd beta = VectorXd::Zero(p);
  VectorXd residual = y.array() - ybar;
  VectorXd col_sq = xs.colwise().squaredNorm().transpose() / n;
  for (int sweep = 1; sweep <= options.max_iters; ++sweep) {
    double max_change = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      double old = beta(j);
      double rho = xs.col(j).dot(residual) / n + col_sq(j) * old;
      double updated = soft_threshold(rho, l1) / (col_sq(j) + l2);
      if (updated != old) {
        residual -= (updated - old) * xs.col(j);
        beta(j) = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    if (max_change < options.tolerance) {
      model.coefficients = beta;
      model.intercept = ybar;
      model.iterations = sweep;
      return model;
    }
  }
  model.coefficients = beta;
  model.intercept = ybar;
  model.iterations = options.max_iters;
  throw NonConvergence(std::move(model), options.max_iters);
}

LinearModel fit_wls(const Dataset &train, const LinearModel &base,
                    WlsDiagnostics *diagnostics) {
  train.validate();
  if (base.penalty != Penalty::ridge)
    throw Error("fit_wls: base model must be ridge");
  if (base.transform)
    throw Error("fit_wls: base model must not transform the target");
  if (base.feature_names != train.feature_names)
    throw Error("fit_wls: base model features differ from the data");

  MatrixXd xs = base.scaler.transform(train.x);
  VectorXd fitted = (xs * base.coefficients).array() + base.intercept;
  VectorXd residual = train.y - fitted;
  VectorXd log_sq = (residual.array().square() + kWlsEpsilon).log();

  WlsDiagnostics diag;
  const auto n = train.y.size();
  VectorXd weights = VectorXd::Ones(n);
  auto variance_model = stats::ols_with_intercept(fitted, log_sq);
  if (variance_model.rank_deficient || !variance_model.coefficients.allFinite()) {
    diag.fell_back = true;
    diag.warning = "variance model is degenerate; using unweighted fit";
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      double g = variance_model.coefficients(0) +
                 variance_model.coefficients(1) * fitted(i);
      weights(i) = 1.0 / std::max(kWlsEpsilon, std::exp(g));
    }
    if (!weights.allFinite()) {
      weights.setOnes();
      diag.fell_back = true;
      diag.warning = "variance model produced non-finite weights; using unweighted fit";
    }
  }
  weights /= weights.mean();

  LinearModel model = base;
  auto [intercept, beta] = solve_weighted_ridge(xs, train.y, weights, base.lambda);
  model.intercept = intercept;
  model.coefficients = beta;
  model.weighted = !diag.fell_back;
  diag.weights = weights;
  if (diagnostics)
    *diagnostics = std::move(diag);
  return model;
}

} // namespace sdforge::models
