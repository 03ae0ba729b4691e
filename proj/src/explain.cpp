#include "sdforge/explain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>

#include "sdforge/descriptors.hpp"
#include "sdforge/error.hpp"
#include "sdforge/parallel.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/stats.hpp"

namespace sdforge::explain {

Predictor make_predictor(const models::FittedModel &model) {
  // Owns a copy so temporaries (e.g. an implicitly converted LinearModel) are safe.
  auto owned = std::make_shared<const models::FittedModel>(model);
  return [owned](std::span<const double> row) { return models::predict_row(*owned, row); };
}

double shapley_weight(std::size_t s, std::size_t p) {
  if (p == 0 || s >= p)
    throw Error("shapley_weight: coalition size must be below feature count");
  // s!(p-s-1)!/p! = 1 / (p * C(p-1, s))
  double choose = 1;
  for (std::size_t k = 1; k <= s; ++k)
    choose = choose * static_cast<double>(p - 1 - s + k) / static_cast<double>(k);
  return 1.0 / (static_cast<double>(p) * choose);
}

ShapExplainer::ShapExplainer(Predictor model, MatrixXd background,
                             std::vector<std::string> feature_names)
    : model_(std::move(model)), background_(std::move(background)),
      features_(std::move(feature_names)) {
  if (features_.empty())
    throw Error("shap: empty feature roster");
  if (features_.size() > kMaxExactFeatures)
    throw Error("shap: exact enumeration refuses " + std::to_string(features_.size()) +
                " features (limit " + std::to_string(kMaxExactFeatures) + ")");
  if (background_.rows() == 0)
    throw Error("shap: empty background set");
  if (static_cast<std::size_t>(background_.cols()) != features_.size())
    throw Error("shap: background width does not match the feature roster");
  std::vector<double> row(features_.size());
  double total = 0;
  for (Eigen::Index b = 0; b < background_.rows(); ++b) {
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = background_(b, static_cast<Eigen::Index>(j));
    total += model_(row);
  }
  base_value_ = total / static_cast<double>(background_.rows());
}

ShapExplanation ShapExplainer::explain(std::span<const double> x) const {
  const std::size_t p = features_.size();
  if (x.size() != p)
    throw Error("shap: row has wrong feature count");
  const std::size_t subsets = std::size_t{1} << p;
  const auto nb = background_.rows();

  std::vector<double> value(subsets);
  std::vector<double> row(p);
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    double total = 0;
    for (Eigen::Index b = 0; b < nb; ++b) {
      for (std::size_t j = 0; j < p; ++j)
        row[j] = (mask >> j) & 1U ? x[j] : background_(b, static_cast<Eigen::Index>(j));
      total += model_(row);
    }
    value[mask] = total / static_cast<double>(nb);
  }

  std::vector<double> weight(p);
  for (std::size_t s = 0; s < p; ++s)
    weight[s] = shapley_weight(s, p);

  ShapExplanation out;
  out.phi.assign(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    const std::size_t bit = std::size_t{1} << j;
    double phi = 0;
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      if (mask & bit)
        continue;
      auto s = static_cast<std::size_t>(std::popcount(mask));
      phi += weight[s] * (value[mask | bit] - value[mask]);
    }
    out.phi[j] = phi;
  }
  out.base_value = value[0];
  out.prediction = model_(x);
  return out;
}

std::vector<ShapExplanation>
ShapExplainer::explain_rows(const MatrixXd &rows, const std::vector<std::string> &row_ids,
                            std::size_t workers) const {
  if (static_cast<std::size_t>(rows.cols()) != features_.size())
    throw Error("shap: rows have wrong feature count");
  std::vector<ShapExplanation> out(static_cast<std::size_t>(rows.rows()));
  parallel_for(out.size(), workers, [&](std::size_t i) {
    std::vector<double> row(features_.size());
    for (std::size_t j = 0; j < row.size(); ++j)
      row[j] = rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    out[i] = explain(row);
    out[i].row_id = i < row_ids.size() ? row_ids[i] : std::to_string(i + 1);
  });
  return out;
}

MatrixXd sample_background(const MatrixXd &data, std::size_t size, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (n == 0)
    throw Error("shap: cannot sample background from empty data");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(size, n);
  if (take < n) {
    Rng rng(seed);
    for (std::size_t i = 0; i < take; ++i)
      std::swap(order[i], order[i + rng.below(n - i)]);
  }
  MatrixXd out(static_cast<Eigen::Index>(take), data.cols());
  for (std::size_t i = 0; i < take; ++i)
    out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(order[i]));
  return out;
}

std::vector<std::size_t> importance_ranks(std::span<const double> importance) {
  std::vector<std::size_t> ranks(importance.size());
  for (std::size_t i = 0; i < importance.size(); ++i) {
    std::size_t above = 0;
    for (double v : importance)
      if (v > importance[i])
        ++above;
    ranks[i] = above + 1;
  }
  return ranks;
}

ShapSummary shap_summary(const std::vector<ShapExplanation> &explanations,
                         const MatrixXd &rows,
                         const std::vector<std::string> &feature_names) {
  if (explanations.empty())
    throw Error("shap summary: empty evaluation set");
  const std::size_t p = feature_names.size();
  if (static_cast<std::size_t>(rows.rows()) != explanations.size() ||
      static_cast<std::size_t>(rows.cols()) != p)
    throw Error("shap summary: rows do not match explanations");
  ShapSummary summary;
  summary.feature_names = feature_names;
  summary.mean_abs_phi.assign(p, 0.0);
  summary.direction.assign(p, 0);
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> phi, value;
    for (std::size_t i = 0; i < explanations.size(); ++i) {
      if (explanations[i].phi.size() != p)
        throw Error("shap summary: explanation has wrong feature count");
      phi.push_back(explanations[i].phi[j]);
      value.push_back(rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      summary.mean_abs_phi[j] += std::abs(explanations[i].phi[j]);
    }
    summary.mean_abs_phi[j] /= static_cast<double>(explanations.size());
    if (phi.size() >= 2) {
      double r = stats::pearson(value, phi);
      summary.direction[j] = std::isnan(r) || r == 0 ? 0 : (r > 0 ? 1 : -1);
    }
  }
  summary.ranking.resize(p);
  std::iota(summary.ranking.begin(), summary.ranking.end(), 0);
  std::stable_sort(summary.ranking.begin(), summary.ranking.end(),
                   [&](std::size_t a, std::size_t b) {
                     return summary.mean_abs_phi[a] > summary.mean_abs_phi[b];
                   });
  return summary;
}

void write_phi_csv(std::ostream &out, const std::vector<ShapExplanation> &explanations,
                   const std::vector<std::string> &feature_names) {
  out << "row_id,base_value,prediction";
  for (const auto &f : feature_names)
    out << ",phi_" << f;
  out << '\n';
  for (const auto &e : explanations) {
    out << descriptors::csv_field(e.row_id) << ',' << descriptors::format_real(e.base_value)
        << ',' << descriptors::format_real(e.prediction);
    for (double v : e.phi)
      out << ',' << descriptors::format_real(v);
    out << '\n';
  }
}

void write_summary_csv(std::ostream &out, const ShapSummary &summary) {
  out << "rank,feature,mean_abs_phi,direction\n";
  for (std::size_t r = 0; r < summary.ranking.size(); ++r) {
    std::size_t j = summary.ranking[r];
    out << r + 1 << ',' << summary.feature_names[j] << ','
        << descriptors::format_real(summary.mean_abs_phi[j]) << ','
        << (summary.direction[j] > 0 ? "+" : summary.direction[j] < 0 ? "-" : "0") << '\n';
  }
}

void write_dependence_csv(std::ostream &out,
                          const std::vector<ShapExplanation> &explanations,
                          const MatrixXd &rows, std::size_t feature,
                          const std::string &feature_name) {
  if (static_cast<std::size_t>(rows.rows()) != explanations.size() ||
      feature >= static_cast<std::size_t>(rows.cols()))
    throw Error("dependence export: rows do not match explanations");
  out << "row_id," << feature_name << ",phi\n";
  for (std::size_t i = 0; i < explanations.size(); ++i)
    out << descriptors::csv_field(explanations[i].row_id) << ','
        << descriptors::format_real(
               rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(feature)))
        << ',' << descriptors::format_real(explanations[i].phi[feature]) << '\n';
}

} // namespace sdforge::explain
