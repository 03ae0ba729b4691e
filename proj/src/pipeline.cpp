#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sdforge/acquire.hpp"
#include "sdforge/descriptors.hpp"
#include "sdforge/explain.hpp"
#include "sdforge/index.hpp"
#include "sdforge/integrate.hpp"
#include "sdforge/models.hpp"
#include "sdforge/pipeline.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/stats.hpp"
#include "strings.hpp"

namespace sdforge::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using descriptors::format_real;

namespace {

// Seed streams derived from the configured seed, one per consumer.
enum SeedStream : std::uint64_t { kSplit = 1, kCv = 2, kNormality = 3, kBackground = 4, kFetch = 5 };

std::string g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string describe(const models::FittedModel &model) {
  if (auto *m = std::get_if<models::LinearModel>(&model)) {
    std::string s = models::to_string(m->penalty) + " lambda=" + g(m->lambda);
    if (m->penalty == models::Penalty::elasticnet)
      s += " l1_ratio=" + g(m->l1_ratio);
    if (m->weighted)
      s += " weighted";
    if (m->transform)
      s += " yeo_johnson=" + g(m->transform->lambda());
    return s;
  }
  if (auto *t = std::get_if<models::TreeEnsemble>(&model)) {
    const auto &p = t->params;
    std::string s = "trees=" + std::to_string(p.n_estimators) +
                    " depth=" + std::to_string(p.max_depth) +
                    " leaf=" + std::to_string(p.min_samples_leaf);
    if (t->kind == models::EnsembleKind::gradient_boosting)
      s += " lr=" + g(p.learning_rate) + " subsample=" + g(p.subsample);
    return s;
  }
  const auto &s = std::get<models::StratifiedPredictor>(model);
  return "ridge lambda=" + g(s.model_a.lambda) + " per stratum, routing " +
         models::to_string(s.mode);
}

MetricSet to_metric_set(const models::Metrics &m) { return {m.r2, m.rmse, m.mae, m.n}; }

void write_text_atomically(const fs::path &path, const std::string &text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out)
      throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string summary_text(const RunReport &report) {
  std::ostringstream s;
  write_summary(report, s);
  return s.str();
}

std::vector<std::size_t> read_split(const fs::path &path, std::size_t rows,
                                    std::vector<std::size_t> &test) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::size_t> train;
  test.clear();
  while (std::getline(in, line)) {
    auto f = detail::split(detail::rtrim(line), '\t');
    if (f.size() != 3)
      throw ParseError("split file: expected 3 fields");
    auto row = detail::parse_u64(f[0]);
    if (!row || *row >= rows)
      throw ParseError("split file: row index out of range");
    (f[2] == "test" ? test : train).push_back(static_cast<std::size_t>(*row));
  }
  return train;
}

class Runner {
public:
  Runner(const PipelineConfig &config, const RunOptions &options)
      : cfg_(config), opt_(options), out_(config.out), state_(config.out / "state"),
        canonical_(config.canonical()) {}

  RunReport run();

private:
  using Artifacts = std::vector<fs::path>;

  void log(const std::string &phase, const std::string &message) const {
    if (opt_.log)
      opt_.log(phase, message);
    else
      std::cerr << "[" << phase << "] " << message << '\n';
  }

  bool selected(const std::string &phase) const {
    return opt_.only.empty() ||
           std::find(opt_.only.begin(), opt_.only.end(), phase) != opt_.only.end();
  }

  fs::path marker(const std::string &phase) const { return state_ / (phase + ".json"); }

  // Snapshot of the report after `phase`, if its marker matches this config.
  std::optional<RunReport> load_marker(const std::string &phase) const {
    std::ifstream in(marker(phase), std::ios::binary);
    if (!in)
      return std::nullopt;
    try {
      auto j = json::parse(in);
      if (j.at("config").get<std::string>() != canonical_)
        return std::nullopt;
      std::istringstream report(j.at("report").dump());
      return read_summary(report);
    } catch (const std::exception &) {
      return std::nullopt;
    }
  }

  void save_marker(const std::string &phase) const {
    json j = {{"config", canonical_}, {"report", json::parse(summary_text(report_))}};
    write_text_atomically(marker(phase), j.dump(1) + "\n");
  }

  Artifacts artifacts(const std::string &phase, const RunReport &snapshot) const;

  void run_phase(const std::string &phase);
  void execute(const std::string &phase);

  void phase_fetch();
  void phase_index();
  void phase_intersect();
  void phase_extract();
  void phase_transform();
  void phase_eda();
  void phase_fit();
  void phase_evaluate();
  void phase_explain();

  models::Dataset load_dataset() const;
  const descriptors::TpsaTable *tpsa();

  const PipelineConfig &cfg_;
  const RunOptions &opt_;
  fs::path out_, state_;
  std::string canonical_;
  RunReport report_;
  bool upstream_ran_ = false;
  std::optional<descriptors::TpsaTable> tpsa_;
};

Runner::Artifacts Runner::artifacts(const std::string &phase, const RunReport &snapshot) const {
  if (phase == "fetch") {
    Artifacts a;
    if (cfg_.fetch_manifest)
      for (const auto &e : acquire::load_manifest(*cfg_.fetch_manifest))
        a.push_back(cfg_.resolved_fetch_dir() / e.dest_path);
    return a;
  }
  if (phase == "index")
    return {cfg_.resolved_index_path()};
  if (phase == "intersect") {
    Artifacts a = {out_ / "intersection.txt", out_ / "audit.tsv"};
    for (const auto &s : cfg_.sources)
      a.push_back(out_ / "identifiers" / (s.name + ".txt"));
    return a;
  }
  if (phase == "extract")
    return {out_ / "extracted.sdf"};
  if (phase == "transform")
    return {out_ / "dataset.csv"};
  if (phase == "eda")
    return {out_ / "eda_features.csv", out_ / "correlation.csv", out_ / "lipinski.csv"};
  if (phase == "fit") {
    Artifacts a = {out_ / "split.tsv"};
    for (const auto &m : snapshot.models)
      a.push_back(out_ / "models" / (m.label + ".model"));
    return a;
  }
  if (phase == "evaluate")
    return {out_ / "predictions.csv"};
  if (phase == "explain")
    return snapshot.shap.present
               ? Artifacts{out_ / "shap_phi.csv", out_ / "shap_summary.csv",
                           out_ / "shap_dependence.csv"}
               : Artifacts{};
  return {};
}

void Runner::run_phase(const std::string &phase) {
  if (phase == "fetch" && !cfg_.fetch_manifest) {
    report_.phases.push_back({phase, "not_configured", 0});
    return;
  }
  const bool want = selected(phase);
  if (!upstream_ran_ && (cfg_.resume || !want)) {
    if (auto snapshot = load_marker(phase)) {
      auto needed = artifacts(phase, *snapshot);
      bool present = std::all_of(needed.begin(), needed.end(),
                                 [](const fs::path &p) { return fs::exists(p); });
      if (present) {
        auto phases = report_.phases;
        report_ = *snapshot;
        phases.push_back({phase, "resumed", 0});
        report_.phases = phases;
        log(phase, "skipped; outputs from an earlier run are up to date");
        return;
      }
    }
  }
  if (!want)
    throw PhaseError(phase, "outputs are missing or stale; run this phase first");

  // Invalidate this phase and everything downstream before touching outputs.
  const auto &names = phase_names();
  for (auto it = std::find(names.begin(), names.end(), phase); it != names.end(); ++it)
    fs::remove(marker(*it));

  log(phase, "starting");
  auto t0 = std::chrono::steady_clock::now();
  try {
    execute(phase);
  } catch (const PhaseError &) {
    throw;
  } catch (const std::exception &e) {
    throw PhaseError(phase, e.what());
  }
  double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report_.phases.push_back({phase, "ran", seconds});
  save_marker(phase);
  upstream_ran_ = true;
  log(phase, "done in " + g(seconds) + " s");
}

void Runner::execute(const std::string &phase) {
  if (phase == "fetch")
    phase_fetch();
  else if (phase == "index")
    phase_index();
  else if (phase == "intersect")
    phase_intersect();
  else if (phase == "extract")
    phase_extract();
  else if (phase == "transform")
    phase_transform();
  else if (phase == "eda")
    phase_eda();
  else if (phase == "fit")
    phase_fit();
  else if (phase == "evaluate")
    phase_evaluate();
  else if (phase == "explain")
    phase_explain();
}

RunReport Runner::run() {
  for (const auto &name : opt_.only)
    if (std::find(phase_names().begin(), phase_names().end(), name) == phase_names().end())
      throw ConfigError("unknown phase '" + name + "'");
  fs::create_directories(state_);
  const auto &names = phase_names();
  std::size_t last = names.size();
  if (!opt_.only.empty()) {
    last = 0;
    for (std::size_t i = 0; i < names.size(); ++i)
      if (selected(names[i]))
        last = i + 1;
  }
  for (std::size_t i = 0; i < last; ++i)
    run_phase(names[i]);
  generate_report(report_, out_);
  return report_;
}

// ---------------------------------------------------------------------------

void Runner::phase_fetch() {
  auto entries = acquire::load_manifest(*cfg_.fetch_manifest);
  acquire::HttpFetcher fetcher;
  acquire::FetchOptions options;
  options.workers = cfg_.workers;
  options.max_retries = cfg_.fetch_retries;
  options.seed = derive_seed(cfg_.seed, kFetch);
  auto result = acquire::fetch_all(entries, cfg_.resolved_fetch_dir(), fetcher, options);
  std::string failures;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto &r = result.results[i];
    log("fetch", entries[i].dest_path.generic_string() + ": " + acquire::to_string(r.status) +
                     (r.skipped ? " (already present)" : "") +
                     (r.last_error.empty() ? "" : " - " + r.last_error));
    if (r.status != acquire::FetchStatus::ok)
      failures += " " + entries[i].dest_path.generic_string();
  }
  report_.counts.fetched = result.count(acquire::FetchStatus::ok);
  if (!result.all_ok())
    throw PhaseError("fetch", "entries not acquired:" + failures);
}

void Runner::phase_index() {
  index::BuildStats stats;
  auto idx = index::build_index(cfg_.all_source_files(), cfg_.key_tag, cfg_.workers, &stats);
  auto path = cfg_.resolved_index_path();
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  index::write_index(idx, path);
  auto &c = report_.counts;
  c.scanned = stats.blocks();
  c.indexed = idx.size();
  c.index_skipped = stats.skipped();
  c.duplicates = idx.duplicate_log().size();
  if (c.indexed + c.index_skipped + c.duplicates != c.scanned)
    throw PhaseError("index", "count mismatch: indexed + skipped + duplicates != scanned");
  log("index", "scanned " + std::to_string(c.scanned) + " blocks, indexed " +
                   std::to_string(c.indexed) + ", skipped " + std::to_string(c.index_skipped) +
                   ", duplicates " + std::to_string(c.duplicates));
}

void Runner::phase_intersect() {
  std::vector<integrate::IdentifierSet> sets;
  fs::create_directories(out_ / "identifiers");
  for (const auto &s : cfg_.sources) {
    sets.push_back(integrate::extract_identifiers(s.files, cfg_.key_tag, s.name));
    integrate::write_identifier_list(out_ / "identifiers" / (s.name + ".txt"),
                                     sets.back().identifiers);
    report_.counts.source_identifiers[s.name] = sets.back().identifiers.size();
    log("intersect", s.name + ": " + std::to_string(sets.back().identifiers.size()) +
                         " distinct identifiers in " + std::to_string(sets.back().scanned) +
                         " records");
  }
  auto common = integrate::intersect(sets);
  integrate::write_identifier_list(out_ / "intersection.txt", common);
  report_.counts.intersected = common.size();

  auto audit = integrate::audit_collisions(cfg_.all_source_files(), cfg_.short_key_tag,
                                           cfg_.key_tag);
  std::ofstream out(out_ / "audit.tsv", std::ios::binary | std::ios::trunc);
  out << "short_key\tfull_id\tpath\toffset\n";
  for (const auto &f : audit.findings)
    for (const auto &loc : f.locations)
      out << f.short_key << '\t' << loc.full_id << '\t' << loc.path << '\t' << loc.offset << '\n';
  if (!out)
    throw IoError("cannot write audit.tsv");
  report_.counts.collision_groups = audit.findings.size();
  for (const auto &f : audit.findings)
    report_.warnings.push_back("identifier collision: " + f.short_key + " maps to " +
                               std::to_string(f.distinct_full_ids.size()) + " structures");
  log("intersect", std::to_string(common.size()) + " identifiers common to all sources; " +
                       std::to_string(audit.findings.size()) + " collision groups");
}

void Runner::phase_extract() {
  auto idx = index::read_index(cfg_.resolved_index_path());
  auto list = integrate::read_identifier_list(out_ / "intersection.txt");
  std::set<std::string> targets(list.begin(), list.end());
  auto plan = integrate::plan_extraction(idx, targets);
  std::ofstream sink(out_ / "extracted.sdf", std::ios::binary | std::ios::trunc);
  auto result = integrate::extract_records(plan, sink, cfg_.key_tag);
  sink.close();
  if (!sink)
    throw IoError("cannot write extracted.sdf");
  auto &c = report_.counts;
  c.extracted = result.written;
  c.extraction_missing = plan.missing.size();
  c.verification_failures = result.verification_failures.size();
  for (const auto &f : result.verification_failures)
    report_.warnings.push_back("extraction verification: " + f);
  if (c.extracted + c.extraction_missing + c.verification_failures != c.intersected)
    throw PhaseError("extract", "count mismatch: extracted + missing + failed != intersected");
  log("extract", "wrote " + std::to_string(c.extracted) + " records (" +
                     std::to_string(result.bytes_written) + " bytes)");
}

const descriptors::TpsaTable *Runner::tpsa() {
  if (!cfg_.tpsa_table)
    return nullptr;
  if (!tpsa_)
    tpsa_ = descriptors::TpsaTable::load(*cfg_.tpsa_table);
  return &*tpsa_;
}

void Runner::phase_transform() {
  descriptors::TransformOptions options;
  options.target_tag = cfg_.target_tag;
  options.inchikey_tag = cfg_.short_key_tag;
  options.inchi_tag = cfg_.key_tag;
  options.smiles_tag = cfg_.smiles_tag;
  options.workers = cfg_.workers;
  options.tpsa = tpsa();
  auto result = descriptors::transform_dataset(out_ / "extracted.sdf", out_ / "dataset.csv",
                                               options);
  auto &c = report_.counts;
  c.transformed = result.rows;
  c.excluded = result.excluded;
  c.exclusion_reasons = result.exclusion_reasons;
  if (result.records != c.extracted || c.transformed + c.excluded != c.extracted)
    throw PhaseError("transform", "count mismatch: transformed + excluded != extracted");
  if (result.warnings)
    report_.warnings.push_back(std::to_string(result.warnings) +
                               " descriptor warnings during transform");
  log("transform", std::to_string(c.transformed) + " rows, " + std::to_string(c.excluded) +
                       " excluded");
}

models::Dataset Runner::load_dataset() const {
  auto data = models::load_dataset_csv(out_ / "dataset.csv");
  if (data.rows() < 10)
    throw Error("dataset has only " + std::to_string(data.rows()) + " rows");
  return data;
}

void Runner::phase_eda() {
  auto data = load_dataset();
  const auto n = data.rows();
  const auto p = data.cols();
  auto &e = report_.eda;
  e = EdaResult{};
  e.n = n;
  std::vector<double> y(data.y.data(), data.y.data() + data.y.size());
  auto ys = stats::summarize(y);
  e.target_mean = ys.mean;
  e.target_std = ys.std_dev;
  e.target_median = ys.median;
  e.target_skewness = ys.skewness;
  e.target_excess_kurtosis = ys.excess_kurtosis;
  e.target_outliers = stats::iqr_outliers(y).indices.size();
  e.normality_p =
      stats::normality_test(y, cfg_.normality_subsample, derive_seed(cfg_.seed, kNormality))
          .p_value;

  Eigen::MatrixXd joint(data.x.rows(), data.x.cols() + 1);
  joint << data.x, data.y;
  auto corr = stats::pearson_matrix(joint);
  auto vifs = stats::vif(data.x);
  const auto t = static_cast<Eigen::Index>(p);
  for (std::size_t j = 0; j < p; ++j) {
    auto jj = static_cast<Eigen::Index>(j);
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i)
      col[i] = data.x(static_cast<Eigen::Index>(i), jj);
    auto s = stats::summarize(col);
    e.features.push_back({data.feature_names[j], s.mean, s.std_dev, s.median, s.skewness,
                          corr.r(jj, t), corr.p_values(jj, t), vifs[j]});
    if (corr.zero_variance[j])
      report_.warnings.push_back("feature " + data.feature_names[j] + " is constant");
  }
  try {
    auto pc = stats::pca(data.x, std::min<std::size_t>(2, p));
    for (Eigen::Index k = 0; k < pc.explained_variance_ratio.size(); ++k)
      e.pca_explained.push_back(pc.explained_variance_ratio(k));
  } catch (const Error &err) {
    report_.warnings.push_back(std::string("PCA skipped: ") + err.what());
  }

  auto mw = data.feature_index("MolWt");
  auto hd = data.feature_index("NumHDonors");
  auto ha = data.feature_index("NumHAcceptors");
  if (!mw || !hd || !ha)
    throw Error("dataset lacks Lipinski descriptor columns");
  std::size_t pass_mw = 0, pass_logp = 0, pass_hd = 0, pass_ha = 0, pass_all = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = static_cast<Eigen::Index>(i);
    auto v = descriptors::lipinski_check(data.x(r, static_cast<Eigen::Index>(*mw)), data.y(r),
                                         data.x(r, static_cast<Eigen::Index>(*hd)),
                                         data.x(r, static_cast<Eigen::Index>(*ha)));
    pass_mw += v.passes_molwt;
    pass_logp += v.passes_logp;
    pass_hd += v.passes_donors;
    pass_ha += v.passes_acceptors;
    pass_all += v.compliant;
  }
  auto frac = [&](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n); };
  e.lipinski = {n, frac(pass_mw), frac(pass_logp), frac(pass_hd), frac(pass_ha), frac(pass_all)};

  {
    std::ofstream out(out_ / "eda_features.csv", std::ios::binary | std::ios::trunc);
    out << "feature,mean,std_dev,median,skewness,r_target,p_target,vif\n";
    for (const auto &f : e.features)
      out << f.name << ',' << format_real(f.mean) << ',' << format_real(f.std_dev) << ','
          << format_real(f.median) << ',' << format_real(f.skewness) << ','
          << format_real(f.r_target) << ',' << format_real(f.p_target) << ','
          << format_real(f.vif) << '\n';
    out << "logP_target," << format_real(e.target_mean) << ',' << format_real(e.target_std)
        << ',' << format_real(e.target_median) << ',' << format_real(e.target_skewness)
        << ",,,\n";
    if (!out)
      throw IoError("cannot write eda_features.csv");
  }
  {
    std::ofstream out(out_ / "correlation.csv", std::ios::binary | std::ios::trunc);
    std::vector<std::string> names = data.feature_names;
    names.push_back("logP_target");
    out << "variable";
    for (const auto &name : names)
      out << ',' << name;
    out << '\n';
    for (std::size_t a = 0; a < names.size(); ++a) {
      out << names[a];
      for (std::size_t b = 0; b < names.size(); ++b)
        out << ',' << format_real(corr.r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
      out << '\n';
    }
    if (!out)
      throw IoError("cannot write correlation.csv");
  }
  {
    std::ofstream out(out_ / "lipinski.csv", std::ios::binary | std::ios::trunc);
    const auto &l = e.lipinski;
    out << "rule,passing,fraction\n"
        << "MolWt<=500," << pass_mw << ',' << format_real(l.molwt) << '\n'
        << "logP<=5," << pass_logp << ',' << format_real(l.logp) << '\n'
        << "HBD<=5," << pass_hd << ',' << format_real(l.donors) << '\n'
        << "HBA<=10," << pass_ha << ',' << format_real(l.acceptors) << '\n'
        << "all," << pass_all << ',' << format_real(l.compliant) << '\n';
    if (!out)
      throw IoError("cannot write lipinski.csv");
  }
  log("eda", std::to_string(n) + " rows; Lipinski compliant " +
                 g(100 * e.lipinski.compliant) + "%");
}

void Runner::phase_fit() {
  auto data = load_dataset();
  auto split = models::split_stratified(data, cfg_.test_fraction, cfg_.split_bins,
                                        derive_seed(cfg_.seed, kSplit));
  for (const auto &w : split.warnings)
    report_.warnings.push_back("split: " + w);
  {
    std::vector<char> is_test(data.rows(), 0);
    for (auto i : split.test)
      is_test[i] = 1;
    std::ofstream out(out_ / "split.tsv", std::ios::binary | std::ios::trunc);
    out << "row\trow_id\tset\n";
    for (std::size_t i = 0; i < data.rows(); ++i)
      out << i << '\t' << data.row_ids[i] << '\t' << (is_test[i] ? "test" : "train") << '\n';
    if (!out)
      throw IoError("cannot write split.tsv");
  }
  report_.counts.train = split.train.size();
  report_.counts.test = split.test.size();
  auto train = data.subset(split.train);

  fs::create_directories(out_ / "models");
  report_.models.clear();
  const std::uint64_t cv_seed = derive_seed(cfg_.seed, kCv);

  std::map<models::Family, std::pair<models::ModelSpec, double>> tuned;
  auto tune = [&](models::Family family) -> const std::pair<models::ModelSpec, double> & {
    auto it = tuned.find(family);
    if (it != tuned.end())
      return it->second;
    std::pair<models::ModelSpec, double> chosen;
    if (cfg_.cv_folds >= 2) {
      auto grid = models::default_grid(family, cfg_.seed, cfg_.workers);
      auto cv = models::cross_validate(train, grid, cfg_.cv_folds, cv_seed, cfg_.workers);
      chosen = {cv.best, cv.scores[cv.best_index]};
      log("fit", models::to_string(family) + ": " + std::to_string(grid.size()) +
                     " grid points, best CV R2 " + g(chosen.second));
    } else {
      models::ModelSpec spec;
      spec.family = family;
      if (family == models::Family::random_forest)
        spec.trees = models::forest_defaults();
      else if (family == models::Family::gradient_boosting)
        spec.trees = models::gbm_defaults();
      spec.trees.seed = cfg_.seed;
      spec.trees.workers = cfg_.workers;
      chosen = {spec, kNaN};
    }
    return tuned.emplace(family, chosen).first->second;
  };

  auto fit_linear_spec = [&](const models::ModelSpec &spec, std::string &note) {
    try {
      return models::fit_model(train, spec);
    } catch (const models::NonConvergence &e) {
      note = std::string(e.what()) + "; last iterate kept";
      report_.warnings.push_back(models::to_string(spec.family) + ": " + note);
      return models::FittedModel(e.last_iterate);
    }
  };

  for (const auto &label : cfg_.models) {
    ModelResult result;
    result.label = label;
    std::optional<models::FittedModel> model;
    if (label == "ridge_wls" || label == "ridge_yj") {
      const auto &[spec, score] = tune(models::Family::ridge);
      if (label == "ridge_yj") {
        auto yj = spec;
        yj.linear.yeo_johnson = true;
        model = fit_linear_spec(yj, result.note);
      } else {
        auto base = std::get<models::LinearModel>(models::fit_model(train, spec));
        models::WlsDiagnostics diag;
        model = models::fit_wls(train, base, &diag);
        if (diag.fell_back) {
          result.note = diag.warning;
          report_.warnings.push_back("ridge_wls: " + diag.warning);
        }
      }
      (void)score;
    } else if (label == "stratified") {
      models::StratifiedOptions options;
      options.lambda = cfg_.stratified_lambda;
      options.mode = models::routing_from_string(cfg_.routing);
      options.min_stratum = cfg_.min_stratum;
      try {
        model = models::fit_stratified(train, options);
      } catch (const Error &e) {
        report_.warnings.push_back(std::string("stratified model not fitted: ") + e.what());
        log("fit", std::string("stratified model not fitted: ") + e.what());
        continue;
      }
    } else {
      auto family = models::family_from_string(label);
      const auto &[spec, score] = tune(family);
      result.cv_r2 = score;
      model = fit_linear_spec(spec, result.note);
    }
    result.kind = models::model_kind(*model);
    result.hyperparameters = describe(*model);
    models::save_model(*model, out_ / "models" / (label + ".model"));
    log("fit", label + ": " + result.hyperparameters);
    report_.models.push_back(std::move(result));
  }
  if (report_.models.empty())
    throw PhaseError("fit", "no model could be fitted");
}

void Runner::phase_evaluate() {
  auto data = load_dataset();
  std::vector<std::size_t> test_rows;
  auto train_rows = read_split(out_ / "split.tsv", data.rows(), test_rows);
  auto train = data.subset(train_rows);
  auto test = data.subset(test_rows);

  std::vector<Eigen::VectorXd> test_predictions;
  report_.stratified = StratifiedResult{};
  for (auto &m : report_.models) {
    auto model = models::load_model(out_ / "models" / (m.label + ".model"));
    m.train = to_metric_set(models::evaluate(model, train));
    Eigen::VectorXd pred = models::predict(model, test.x);
    m.test = to_metric_set(models::evaluate(pred, test.y));
    auto bp = stats::breusch_pagan(test.y - pred, test.x);
    m.bp_statistic = bp.lm_statistic;
    m.bp_p = bp.p_value;
    test_predictions.push_back(pred);
    log("evaluate", m.label + ": test R2 " + g(m.test.r2) + ", RMSE " + g(m.test.rmse) +
                        ", BP p " + g(m.bp_p));

    if (auto *s = std::get_if<models::StratifiedPredictor>(&model)) {
      auto routed = models::predict_stratified(*s, test);
      auto &res = report_.stratified;
      res.present = true;
      res.routing = models::to_string(s->mode);
      res.disagreement_rate = routed.disagreement_rate;
      for (char stratum : {'A', 'B'}) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < routed.routes.size(); ++i)
          if (routed.routes[i] == stratum)
            rows.push_back(i);
        StratumResult sr;
        sr.stratum = std::string(1, stratum);
        sr.train_rows = stratum == 'A' ? s->train_a : s->train_b;
        sr.test_rows = rows.size();
        if (!rows.empty()) {
          Eigen::VectorXd p(static_cast<Eigen::Index>(rows.size()));
          Eigen::VectorXd t(static_cast<Eigen::Index>(rows.size()));
          for (std::size_t k = 0; k < rows.size(); ++k) {
            p(static_cast<Eigen::Index>(k)) = routed.predictions(static_cast<Eigen::Index>(rows[k]));
            t(static_cast<Eigen::Index>(k)) = test.y(static_cast<Eigen::Index>(rows[k]));
          }
          sr.test = to_metric_set(models::evaluate(p, t));
        }
        res.strata.push_back(sr);
      }
    }
  }

  report_.best_model.clear();
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_index = 0;
  for (std::size_t i = 0; i < report_.models.size(); ++i)
    if (std::isfinite(report_.models[i].test.r2) && report_.models[i].test.r2 > best) {
      best = report_.models[i].test.r2;
      best_index = i;
      report_.best_model = report_.models[i].label;
    }
  report_.error_by_category.clear();
  if (!report_.best_model.empty())
    for (const auto &c : models::report_error_by_category(test_predictions[best_index], test.y))
      report_.error_by_category.push_back(
          {c.label, c.count, c.median_abs_error, c.iqr_abs_error, c.balanced});

  std::ofstream out(out_ / "predictions.csv", std::ios::binary | std::ios::trunc);
  out << "row_id,logP_target";
  for (const auto &m : report_.models)
    out << ',' << m.label;
  out << '\n';
  for (std::size_t i = 0; i < test.rows(); ++i) {
    auto r = static_cast<Eigen::Index>(i);
    out << descriptors::csv_field(test.row_ids[i]) << ',' << format_real(test.y(r));
    for (const auto &p : test_predictions)
      out << ',' << format_real(p(r));
    out << '\n';
  }
  if (!out)
    throw IoError("cannot write predictions.csv");
}

void Runner::phase_explain() {
  report_.shap = ShapResult{};
  std::string label = cfg_.shap_model == "best" ? report_.best_model : cfg_.shap_model;
  if (label.empty() || !report_.model(label)) {
    report_.warnings.push_back("explain: no model available for SHAP");
    return;
  }
  auto data = load_dataset();
  std::vector<std::size_t> test_rows;
  auto train_rows = read_split(out_ / "split.tsv", data.rows(), test_rows);
  auto train = data.subset(train_rows);
  if (test_rows.size() > cfg_.shap_rows)
    test_rows.resize(cfg_.shap_rows);
  auto rows = data.subset(test_rows);

  auto model = models::load_model(out_ / "models" / (label + ".model"));
  auto background =
      explain::sample_background(train.x, cfg_.shap_background, derive_seed(cfg_.seed, kBackground));
  explain::ShapExplainer explainer(explain::make_predictor(model), background,
                                   data.feature_names);
  auto explanations = explainer.explain_rows(rows.x, rows.row_ids, cfg_.workers);
  auto summary = explain::shap_summary(explanations, rows.x, data.feature_names);

  auto &s = report_.shap;
  s.present = true;
  s.model = label;
  s.rows = explanations.size();
  s.background = explainer.background_size();
  s.base_value = explainer.base_value();
  s.max_local_error = 0;
  for (const auto &e : explanations) {
    double total = e.base_value;
    for (double v : e.phi)
      total += v;
    s.max_local_error = std::max(s.max_local_error, std::abs(total - e.prediction));
  }
  for (auto j : summary.ranking)
    s.ranking.push_back({summary.feature_names[j], summary.mean_abs_phi[j], summary.direction[j]});

  auto write = [&](const char *name, auto &&fn) {
    std::ofstream out(out_ / name, std::ios::binary | std::ios::trunc);
    fn(out);
    if (!out)
      throw IoError(std::string("cannot write ") + name);
  };
  write("shap_phi.csv",
        [&](std::ostream &o) { explain::write_phi_csv(o, explanations, data.feature_names); });
  write("shap_summary.csv", [&](std::ostream &o) { explain::write_summary_csv(o, summary); });
  write("shap_dependence.csv", [&](std::ostream &o) {
    auto top = summary.ranking.front();
    explain::write_dependence_csv(o, explanations, rows.x, top, data.feature_names[top]);
  });
  log("explain", label + ": " + std::to_string(s.rows) + " rows explained; top feature " +
                     s.ranking.front().name);
}

} // namespace

RunReport run_pipeline(const PipelineConfig &config, const RunOptions &options) {
  config.validate();
  fs::create_directories(config.out);
  Runner runner(config, options);
  return runner.run();
}

} // namespace sdforge::pipeline
