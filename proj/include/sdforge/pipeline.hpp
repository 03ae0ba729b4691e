#pragma once

// Six-phase workflow orchestration: acquisition, indexing, integration,
// extraction, descriptor transform, and modeling with diagnostics.
//
// Configuration is a flat `key = value` file; '#' starts a comment. Relative
// paths resolve against the config file's directory. Keys:
//
//   source.<name>        comma-separated SDF paths of one source (repeatable)
//   key_tag              full identifier tag (index key)   PUBCHEM_IUPAC_INCHI
//   short_key_tag        hashed identifier tag (audit)     PUBCHEM_IUPAC_INCHIKEY
//   target_tag           logP field                        PUBCHEM_XLOGP3
//   smiles_tag                                             PUBCHEM_SMILES
//   fetch_manifest       optional; enables the fetch phase
//   fetch_dir            download directory                downloads
//   fetch_retries                                          3
//   index_path           default <out>/index.tsv
//   tpsa_table           optional TSV overriding the builtin contributions
//   out                  output directory                  out
//   seed                                                   0
//   workers                                                1
//   test_fraction                                          0.2
//   split_bins                                             10
//   models               comma list from ridge, lasso, elasticnet, ridge_wls,
//                        ridge_yj, random_forest, gradient_boosting, stratified
//   cv_folds             0 disables the grid search        5
//   routing              provisional_estimate | features_only
//   stratified_lambda                                      1
//   min_stratum                                            50
//   shap_model           best | <model label>              best
//   shap_background                                        100
//   shap_rows                                              200
//   normality_subsample                                    5000
//
// Artifacts under <out>: index.tsv, identifiers/<source>.txt, intersection.txt,
// audit.tsv, extracted.sdf, dataset.csv, eda_features.csv, correlation.csv,
// lipinski.csv, split.tsv,
// models/<label>.model, predictions.csv, shap_phi.csv, shap_summary.csv,
// shap_dependence.csv, summary.json, report.md, and state/<phase>.json
// completion markers used by resume.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdforge/error.hpp"

namespace sdforge::pipeline {

class ConfigError : public Error {
public:
  using Error::Error;
};

// Failure inside a phase; upstream artifacts are left in place.
class PhaseError : public Error {
public:
  PhaseError(std::string phase, const std::string &what)
      : Error(phase + ": " + what), phase_(std::move(phase)) {}
  const std::string &phase() const { return phase_; }

private:
  std::string phase_;
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct SourceDef {
  std::string name;
  std::vector<std::filesystem::path> files;
};

struct PipelineConfig {
  std::vector<SourceDef> sources;
  std::string key_tag = "PUBCHEM_IUPAC_INCHI";
  std::string short_key_tag = "PUBCHEM_IUPAC_INCHIKEY";
  std::string target_tag = "PUBCHEM_XLOGP3";
  std::string smiles_tag = "PUBCHEM_SMILES";
  std::optional<std::filesystem::path> fetch_manifest;
  std::filesystem::path fetch_dir = "downloads";
  int fetch_retries = 3;
  std::optional<std::filesystem::path> index_path;
  std::optional<std::filesystem::path> tpsa_table;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double test_fraction = 0.2;
  std::size_t split_bins = 10;
  std::vector<std::string> models = {"ridge",     "lasso",         "elasticnet",
                                     "ridge_wls", "ridge_yj",      "random_forest",
                                     "gradient_boosting", "stratified"};
  std::size_t cv_folds = 5;
  std::string routing = "provisional_estimate";
  double stratified_lambda = 1.0;
  std::size_t min_stratum = 50;
  std::string shap_model = "best";
  std::size_t shap_background = 100;
  std::size_t shap_rows = 200;
  std::size_t normality_subsample = 5000;
  bool resume = false;

  std::filesystem::path resolved_index_path() const;
  std::filesystem::path resolved_fetch_dir() const;
  std::vector<std::filesystem::path> all_source_files() const;

  // Throws ConfigError.
  void validate() const;
  // Canonical key = value text without resume and workers (neither changes
  // any artifact); resume compares it to detect a changed configuration.
  std::string canonical() const;
};

// Applies one key (throws ConfigError on unknown keys or bad values).
// Relative paths resolve against base_dir.
void apply_config_key(PipelineConfig &config, const std::string &key,
                      const std::string &value,
                      const std::filesystem::path &base_dir = {});
PipelineConfig parse_config(std::istream &in, const std::filesystem::path &base_dir = {});
PipelineConfig load_config(const std::filesystem::path &path);

// ---------------------------------------------------------------------------

struct PhaseRecord {
  std::string name;
  std::string status;  // ran | resumed | not_configured
  double seconds = 0;
};

struct StageCounts {
  std::uint64_t fetched = 0;
  std::uint64_t scanned = 0;  // blocks seen while indexing
  std::uint64_t indexed = 0;
  std::uint64_t index_skipped = 0;
  std::uint64_t duplicates = 0;
  std::map<std::string, std::uint64_t> source_identifiers;
  std::uint64_t intersected = 0;
  std::uint64_t collision_groups = 0;
  std::uint64_t extracted = 0;
  std::uint64_t extraction_missing = 0;
  std::uint64_t verification_failures = 0;
  std::uint64_t transformed = 0;
  std::uint64_t excluded = 0;
  std::map<std::string, std::uint64_t> exclusion_reasons;
  std::uint64_t train = 0;
  std::uint64_t test = 0;
};

struct LipinskiRates {
  std::uint64_t n = 0;
  double molwt = kNaN;  // fraction passing each rule
  double logp = kNaN;
  double donors = kNaN;
  double acceptors = kNaN;
  double compliant = kNaN;
};

struct FeatureStats {
  std::string name;
  double mean = kNaN;
  double std_dev = kNaN;
  double median = kNaN;
  double skewness = kNaN;
  double r_target = kNaN;  // Pearson r with the target
  double p_target = kNaN;
  double vif = kNaN;
};

struct EdaResult {
  std::uint64_t n = 0;
  double target_mean = kNaN;
  double target_std = kNaN;
  double target_median = kNaN;
  double target_skewness = kNaN;
  double target_excess_kurtosis = kNaN;
  std::uint64_t target_outliers = 0;
  double normality_p = kNaN;
  std::vector<FeatureStats> features;
  std::vector<double> pca_explained;  // first two components
  LipinskiRates lipinski;
};

struct MetricSet {
  double r2 = kNaN;
  double rmse = kNaN;
  double mae = kNaN;
  std::uint64_t n = 0;
};

struct ModelResult {
  std::string label;
  std::string kind;
  std::string hyperparameters;
  double cv_r2 = kNaN;
  MetricSet train;
  MetricSet test;
  double bp_statistic = kNaN;  // test residuals on test features
  double bp_p = kNaN;
  std::string note;
};

struct StratumResult {
  std::string stratum;  // A | B
  std::uint64_t train_rows = 0;
  std::uint64_t test_rows = 0;
  MetricSet test;
};

struct StratifiedResult {
  bool present = false;
  std::string routing;
  std::vector<StratumResult> strata;
  double disagreement_rate = kNaN;
};

struct CategoryRow {
  std::string label;
  std::uint64_t count = 0;
  double median_abs_error = kNaN;
  double iqr_abs_error = kNaN;
  bool balanced = false;
};

struct ShapFeature {
  std::string name;
  double mean_abs_phi = kNaN;
  int direction = 0;
};

struct ShapResult {
  bool present = false;
  std::string model;
  std::uint64_t rows = 0;
  std::uint64_t background = 0;
  double base_value = kNaN;
  double max_local_error = kNaN;
  std::vector<ShapFeature> ranking;
};

struct RunReport {
  std::vector<PhaseRecord> phases;
  StageCounts counts;
  EdaResult eda;
  std::vector<ModelResult> models;
  std::string best_model;
  StratifiedResult stratified;
  std::vector<CategoryRow> error_by_category;  // best model, test set
  ShapResult shap;
  std::vector<std::string> warnings;

  const PhaseRecord *phase(const std::string &name) const;
  const ModelResult *model(const std::string &label) const;
};

// Machine-readable summary (JSON). NaN is written as null and read back as
// NaN.
void write_summary(const RunReport &report, std::ostream &out);
RunReport read_summary(std::istream &in);
RunReport read_summary(const std::filesystem::path &path);

// Writes summary.json and report.md into out_dir.
void generate_report(const RunReport &report, const std::filesystem::path &out_dir);
void write_markdown_report(const RunReport &report, std::ostream &out);

// ---------------------------------------------------------------------------

inline const std::vector<std::string> &phase_names() {
  static const std::vector<std::string> names = {
      "fetch", "index", "intersect", "extract", "transform",
      "eda",   "fit",   "evaluate",  "explain"};
  return names;
}

struct RunOptions {
  // Phase names to execute; empty means all. Phases not selected must have
  // completion markers when a later phase needs their outputs.
  std::vector<std::string> only;
  // Phase-tagged log lines; stderr when unset.
  std::function<void(const std::string &phase, const std::string &message)> log;
};

RunReport run_pipeline(const PipelineConfig &config, const RunOptions &options = {});

} // namespace sdforge::pipeline
