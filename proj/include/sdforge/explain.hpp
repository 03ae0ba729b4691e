#pragma once

// Exact Shapley attribution by subset enumeration.
//
// The value of a coalition S for row x is the mean model output over the
// background rows b with features in S taken from x and the rest from b
// (interventional expectation). phi_j sums the weighted marginal
// contributions over all S not containing j, weight |S|!(p-|S|-1)!/p!.
// Cost per explained row: 2^p * |background| model evaluations.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sdforge/models.hpp"

namespace sdforge::explain {

using Eigen::MatrixXd;

using Predictor = std::function<double(std::span<const double>)>;

inline constexpr std::size_t kMaxExactFeatures = 15;

Predictor make_predictor(const models::FittedModel &model);

// |S|!(p-|S|-1)!/p! for a coalition of size s out of p features.
double shapley_weight(std::size_t s, std::size_t p);

struct ShapExplanation {
  std::vector<double> phi;
  double base_value = 0;  // mean prediction over the background
  double prediction = 0;  // model output on the explained row
  std::string row_id;
};

class ShapExplainer {
public:
  // Throws if the background is empty, its width differs from the roster,
  // or the roster exceeds kMaxExactFeatures.
  ShapExplainer(Predictor model, MatrixXd background,
                std::vector<std::string> feature_names);

  ShapExplanation explain(std::span<const double> row) const;

  // Rows are explained concurrently; output order follows the input.
  std::vector<ShapExplanation> explain_rows(const MatrixXd &rows,
                                            const std::vector<std::string> &row_ids,
                                            std::size_t workers = 1) const;

  double base_value() const { return base_value_; }
  const std::vector<std::string> &feature_names() const { return features_; }
  std::size_t background_size() const { return static_cast<std::size_t>(background_.rows()); }

private:
  Predictor model_;
  MatrixXd background_;
  std::vector<std::string> features_;
  double base_value_ = 0;
};

// Up to `size` distinct rows drawn without replacement with a fixed seed;
// all rows when size >= n. Returned in draw order.
MatrixXd sample_background(const MatrixXd &data, std::size_t size, std::uint64_t seed);

struct ShapSummary {
  std::vector<std::string> feature_names;
  std::vector<double> mean_abs_phi;
  std::vector<std::size_t> ranking;  // feature indices, descending mean |phi|
  // Sign of the correlation between feature value and phi: +1, -1, or 0
  // when undefined.
  std::vector<int> direction;
};

// Throws for an empty evaluation set.
ShapSummary shap_summary(const std::vector<ShapExplanation> &explanations,
                         const MatrixXd &rows,
                         const std::vector<std::string> &feature_names);

// Rank (1 = most important) of each feature; ties share the lower rank.
std::vector<std::size_t> importance_ranks(std::span<const double> importance);

void write_phi_csv(std::ostream &out, const std::vector<ShapExplanation> &explanations,
                   const std::vector<std::string> &feature_names);
void write_summary_csv(std::ostream &out, const ShapSummary &summary);
// One row per explanation: row id, feature value, phi.
void write_dependence_csv(std::ostream &out,
                          const std::vector<ShapExplanation> &explanations,
                          const MatrixXd &rows, std::size_t feature,
                          const std::string &feature_name);

} // namespace sdforge::explain
