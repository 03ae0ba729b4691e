#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "sdforge/pipeline.hpp"

namespace sdforge::pipeline {

using nlohmann::json;

namespace {

json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double real_of(const json &j, const char *key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null())
    return kNaN;
  return it->get<double>();
}

template <class T> T value_or(const json &j, const char *key, T fallback) {
  auto it = j.find(key);
  return it == j.end() || it->is_null() ? fallback : it->get<T>();
}

json to_json(const MetricSet &m) {
  return {{"r2", real(m.r2)}, {"rmse", real(m.rmse)}, {"mae", real(m.mae)}, {"n", m.n}};
}

MetricSet metrics_from(const json &j) {
  MetricSet m;
  m.r2 = real_of(j, "r2");
  m.rmse = real_of(j, "rmse");
  m.mae = real_of(j, "mae");
  m.n = value_or<std::uint64_t>(j, "n", 0);
  return m;
}

json to_json(const RunReport &r) {
  json j;
  for (const auto &p : r.phases)
    j["phases"].push_back({{"name", p.name}, {"status", p.status}, {"seconds", p.seconds}});
  const auto &c = r.counts;
  j["counts"] = {{"fetched", c.fetched},
                 {"scanned", c.scanned},
                 {"indexed", c.indexed},
                 {"index_skipped", c.index_skipped},
                 {"duplicates", c.duplicates},
                 {"source_identifiers", c.source_identifiers},
                 {"intersected", c.intersected},
                 {"collision_groups", c.collision_groups},
                 {"extracted", c.extracted},
                 {"extraction_missing", c.extraction_missing},
                 {"verification_failures", c.verification_failures},
                 {"transformed", c.transformed},
                 {"excluded", c.excluded},
                 {"exclusion_reasons", c.exclusion_reasons},
                 {"train", c.train},
                 {"test", c.test}};
  const auto &e = r.eda;
  json features = json::array();
  for (const auto &f : e.features)
    features.push_back({{"name", f.name},
                        {"mean", real(f.mean)},
                        {"std_dev", real(f.std_dev)},
                        {"median", real(f.median)},
                        {"skewness", real(f.skewness)},
                        {"r_target", real(f.r_target)},
                        {"p_target", real(f.p_target)},
                        {"vif", real(f.vif)}});
  json pca = json::array();
  for (double v : e.pca_explained)
    pca.push_back(real(v));
  const auto &l = e.lipinski;
  j["eda"] = {{"n", e.n},
              {"target_mean", real(e.target_mean)},
              {"target_std", real(e.target_std)},
              {"target_median", real(e.target_median)},
              {"target_skewness", real(e.target_skewness)},
              {"target_excess_kurtosis", real(e.target_excess_kurtosis)},
              {"target_outliers", e.target_outliers},
              {"normality_p", real(e.normality_p)},
              {"features", features},
              {"pca_explained", pca},
              {"lipinski",
               {{"n", l.n},
                {"molwt", real(l.molwt)},
                {"logp", real(l.logp)},
                {"donors", real(l.donors)},
                {"acceptors", real(l.acceptors)},
                {"compliant", real(l.compliant)}}}};
  j["models"] = json::array();
  for (const auto &m : r.models)
    j["models"].push_back({{"label", m.label},
                           {"kind", m.kind},
                           {"hyperparameters", m.hyperparameters},
                           {"cv_r2", real(m.cv_r2)},
                           {"train", to_json(m.train)},
                           {"test", to_json(m.test)},
                           {"bp_statistic", real(m.bp_statistic)},
                           {"bp_p", real(m.bp_p)},
                           {"note", m.note}});
  j["best_model"] = r.best_model;
  json strata = json::array();
  for (const auto &s : r.stratified.strata)
    strata.push_back({{"stratum", s.stratum},
                      {"train_rows", s.train_rows},
                      {"test_rows", s.test_rows},
                      {"test", to_json(s.test)}});
  j["stratified"] = {{"present", r.stratified.present},
                     {"routing", r.stratified.routing},
                     {"strata", strata},
                     {"disagreement_rate", real(r.stratified.disagreement_rate)}};
  j["error_by_category"] = json::array();
  for (const auto &c2 : r.error_by_category)
    j["error_by_category"].push_back({{"label", c2.label},
                                      {"count", c2.count},
                                      {"median_abs_error", real(c2.median_abs_error)},
                                      {"iqr_abs_error", real(c2.iqr_abs_error)},
                                      {"balanced", c2.balanced}});
  json ranking = json::array();
  for (const auto &f : r.shap.ranking)
    ranking.push_back(
        {{"name", f.name}, {"mean_abs_phi", real(f.mean_abs_phi)}, {"direction", f.direction}});
  j["shap"] = {{"present", r.shap.present},
               {"model", r.shap.model},
               {"rows", r.shap.rows},
               {"background", r.shap.background},
               {"base_value", real(r.shap.base_value)},
               {"max_local_error", real(r.shap.max_local_error)},
               {"ranking", ranking}};
  j["warnings"] = r.warnings;
  return j;
}

RunReport from_json(const json &j) {
  RunReport r;
  for (const auto &p : j.value("phases", json::array()))
    r.phases.push_back({p.at("name"), p.at("status"), p.at("seconds")});
  const auto &c = j.at("counts");
  auto &k = r.counts;
  k.fetched = c.at("fetched");
  k.scanned = c.at("scanned");
  k.indexed = c.at("indexed");
  k.index_skipped = c.at("index_skipped");
  k.duplicates = c.at("duplicates");
  k.source_identifiers = c.at("source_identifiers").get<std::map<std::string, std::uint64_t>>();
  k.intersected = c.at("intersected");
  k.collision_groups = c.at("collision_groups");
  k.extracted = c.at("extracted");
  k.extraction_missing = c.at("extraction_missing");
  k.verification_failures = c.at("verification_failures");
  k.transformed = c.at("transformed");
  k.excluded = c.at("excluded");
  k.exclusion_reasons = c.at("exclusion_reasons").get<std::map<std::string, std::uint64_t>>();
  k.train = c.at("train");
  k.test = c.at("test");

  const auto &e = j.at("eda");
  auto &d = r.eda;
  d.n = e.at("n");
  d.target_mean = real_of(e, "target_mean");
  d.target_std = real_of(e, "target_std");
  d.target_median = real_of(e, "target_median");
  d.target_skewness = real_of(e, "target_skewness");
  d.target_excess_kurtosis = real_of(e, "target_excess_kurtosis");
  d.target_outliers = e.at("target_outliers");
  d.normality_p = real_of(e, "normality_p");
  for (const auto &f : e.at("features")) {
    FeatureStats s;
    s.name = f.at("name");
    s.mean = real_of(f, "mean");
    s.std_dev = real_of(f, "std_dev");
    s.median = real_of(f, "median");
    s.skewness = real_of(f, "skewness");
    s.r_target = real_of(f, "r_target");
    s.p_target = real_of(f, "p_target");
    s.vif = real_of(f, "vif");
    d.features.push_back(s);
  }
  for (const auto &v : e.at("pca_explained"))
    d.pca_explained.push_back(v.is_null() ? kNaN : v.get<double>());
  const auto &l = e.at("lipinski");
  d.lipinski.n = l.at("n");
  d.lipinski.molwt = real_of(l, "molwt");
  d.lipinski.logp = real_of(l, "logp");
  d.lipinski.donors = real_of(l, "donors");
  d.lipinski.acceptors = real_of(l, "acceptors");
  d.lipinski.compliant = real_of(l, "compliant");

  for (const auto &m : j.at("models")) {
    ModelResult res;
    res.label = m.at("label");
    res.kind = m.at("kind");
    res.hyperparameters = m.at("hyperparameters");
    res.cv_r2 = real_of(m, "cv_r2");
    res.train = metrics_from(m.at("train"));
    res.test = metrics_from(m.at("test"));
    res.bp_statistic = real_of(m, "bp_statistic");
    res.bp_p = real_of(m, "bp_p");
    res.note = m.at("note");
    r.models.push_back(res);
  }
  r.best_model = j.at("best_model");
  const auto &s = j.at("stratified");
  r.stratified.present = s.at("present");
  r.stratified.routing = s.at("routing");
  r.stratified.disagreement_rate = real_of(s, "disagreement_rate");
  for (const auto &st : s.at("strata"))
    r.stratified.strata.push_back(
        {st.at("stratum"), st.at("train_rows"), st.at("test_rows"), metrics_from(st.at("test"))});
  for (const auto &c2 : j.at("error_by_category"))
    r.error_by_category.push_back({c2.at("label"), c2.at("count"),
                                   real_of(c2, "median_abs_error"),
                                   real_of(c2, "iqr_abs_error"), c2.at("balanced")});
  const auto &sh = j.at("shap");
  r.shap.present = sh.at("present");
  r.shap.model = sh.at("model");
  r.shap.rows = sh.at("rows");
  r.shap.background = sh.at("background");
  r.shap.base_value = real_of(sh, "base_value");
  r.shap.max_local_error = real_of(sh, "max_local_error");
  for (const auto &f : sh.at("ranking"))
    r.shap.ranking.push_back({f.at("name"), real_of(f, "mean_abs_phi"), f.at("direction")});
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

std::string num(double v, int decimals = 4) {
  if (std::isnan(v))
    return "n/a";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string pct(double fraction) { return std::isnan(fraction) ? "n/a" : num(100 * fraction, 2) + "%"; }

std::string pvalue(double p) {
  if (std::isnan(p))
    return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, p < 1e-4 ? "%.2e" : "%.4f", p);
  return buf;
}

bool ran(const RunReport &r, const std::string &phase) {
  auto *p = r.phase(phase);
  return p && p->status != "not_configured";
}

} // namespace

const PhaseRecord *RunReport::phase(const std::string &name) const {
  for (const auto &p : phases)
    if (p.name == name)
      return &p;
  return nullptr;
}

const ModelResult *RunReport::model(const std::string &label) const {
  for (const auto &m : models)
    if (m.label == label)
      return &m;
  return nullptr;
}

void write_summary(const RunReport &report, std::ostream &out) {
  out << to_json(report).dump(2) << '\n';
}

RunReport read_summary(std::istream &in) {
  try {
    return from_json(json::parse(in));
  } catch (const json::exception &e) {
    throw ParseError(std::string("summary: ") + e.what());
  }
}

RunReport read_summary(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return read_summary(in);
}

void write_markdown_report(const RunReport &r, std::ostream &out) {
  out << "# Run report\n\n## Phases\n\n| phase | status | seconds |\n|---|---|---|\n";
  for (const auto &p : r.phases)
    out << "| " << p.name << " | " << p.status << " | " << num(p.seconds, 2) << " |\n";

  const auto &c = r.counts;
  out << "\n## Record counts\n\n| stage | count |\n|---|---|\n";
  if (ran(r, "fetch"))
    out << "| fetched files | " << c.fetched << " |\n";
  if (ran(r, "index"))
    out << "| scanned | " << c.scanned << " |\n| indexed | " << c.indexed
        << " |\n| skipped while indexing | " << c.index_skipped << " |\n| duplicate identifiers | "
        << c.duplicates << " |\n";
  if (ran(r, "intersect")) {
    for (const auto &[name, n] : c.source_identifiers)
      out << "| identifiers in " << name << " | " << n << " |\n";
    out << "| intersected | " << c.intersected << " |\n| collision groups | "
        << c.collision_groups << " |\n";
  }
  if (ran(r, "extract"))
    out << "| extracted | " << c.extracted << " |\n| missing from index | "
        << c.extraction_missing << " |\n| verification failures | " << c.verification_failures
        << " |\n";
  if (ran(r, "transform")) {
    out << "| transformed | " << c.transformed << " |\n| excluded | " << c.excluded << " |\n";
    for (const auto &[reason, n] : c.exclusion_reasons)
      out << "| excluded: " << reason << " | " << n << " |\n";
  }
  if (ran(r, "fit"))
    out << "| train rows | " << c.train << " |\n| test rows | " << c.test << " |\n";

  if (ran(r, "eda")) {
    const auto &e = r.eda;
    const auto &l = e.lipinski;
    out << "\n## Lipinski compliance (n = " << l.n << ")\n\n| rule | passing |\n|---|---|\n"
        << "| MolWt <= 500 | " << pct(l.molwt) << " |\n| logP <= 5 | " << pct(l.logp)
        << " |\n| H-bond donors <= 5 | " << pct(l.donors) << " |\n| H-bond acceptors <= 10 | "
        << pct(l.acceptors) << " |\n| all four | " << pct(l.compliant) << " |\n";
    out << "\n## Target distribution\n\nmean " << num(e.target_mean) << ", sd "
        << num(e.target_std) << ", median " << num(e.target_median) << ", skewness "
        << num(e.target_skewness) << ", excess kurtosis " << num(e.target_excess_kurtosis)
        << ", IQR outliers " << e.target_outliers << ", normality p " << pvalue(e.normality_p)
        << "\n";
    out << "\n## Correlation with target and VIF\n\n| feature | mean | sd | r | p | VIF |\n"
           "|---|---|---|---|---|---|\n";
    for (const auto &f : e.features)
      out << "| " << f.name << " | " << num(f.mean) << " | " << num(f.std_dev) << " | "
          << num(f.r_target) << " | " << pvalue(f.p_target) << " | " << num(f.vif, 2) << " |\n";
    if (!e.pca_explained.empty()) {
      out << "\nPCA explained variance:";
      for (double v : e.pca_explained)
        out << ' ' << pct(v);
      out << '\n';
    }
  }

  if (!r.models.empty()) {
    out << "\n## Model comparison\n\n| model | hyperparameters | CV R2 | train R2 | test R2 | "
           "test RMSE | test MAE | BP p (test) |\n|---|---|---|---|---|---|---|---|\n";
    for (const auto &m : r.models)
      out << "| " << m.label << " | " << m.hyperparameters << " | " << num(m.cv_r2) << " | "
          << num(m.train.r2) << " | " << num(m.test.r2) << " | " << num(m.test.rmse) << " | "
          << num(m.test.mae) << " | " << pvalue(m.bp_p) << " |\n";
    if (!r.best_model.empty())
      out << "\nBest test R2: " << r.best_model << "\n";
    for (const auto &m : r.models)
      if (!m.note.empty())
        out << "\n- " << m.label << ": " << m.note;
    out << '\n';
  }

  if (r.stratified.present) {
    out << "\n## Lipinski-stratified models (routing: " << r.stratified.routing
        << ")\n\n| stratum | train rows | test rows | test R2 | test RMSE |\n|---|---|---|---|---|\n";
    for (const auto &s : r.stratified.strata)
      out << "| " << s.stratum << " | " << s.train_rows << " | " << s.test_rows << " | "
          << num(s.test.r2) << " | " << num(s.test.rmse) << " |\n";
    out << "\nRoute disagreement with true-logP routing: " << pct(r.stratified.disagreement_rate)
        << "\n";
  }

  if (!r.error_by_category.empty()) {
    out << "\n## Error by logP category (" << r.best_model
        << ", test set)\n\n| category | n | median abs error | IQR |\n|---|---|---|---|\n";
    for (const auto &c2 : r.error_by_category)
      out << "| " << c2.label << (c2.balanced ? " (balanced)" : "") << " | " << c2.count << " | "
          << num(c2.median_abs_error) << " | " << num(c2.iqr_abs_error) << " |\n";
  }

  if (r.shap.present) {
    out << "\n## SHAP importance (" << r.shap.model << ", " << r.shap.rows << " rows, background "
        << r.shap.background << ")\n\n| rank | feature | mean abs phi | direction |\n|---|---|---|---|\n";
    for (std::size_t i = 0; i < r.shap.ranking.size(); ++i) {
      const auto &f = r.shap.ranking[i];
      out << "| " << i + 1 << " | " << f.name << " | " << num(f.mean_abs_phi) << " | "
          << (f.direction > 0 ? "+" : f.direction < 0 ? "-" : "0") << " |\n";
    }
    out << "\nBase value " << num(r.shap.base_value) << "; largest local accuracy error "
        << pvalue(r.shap.max_local_error) << "\n";
  }

  if (!r.warnings.empty()) {
    out << "\n## Warnings\n\n";
    for (const auto &w : r.warnings)
      out << "- " << w << '\n';
  }
}

void generate_report(const RunReport &report, const std::filesystem::path &out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "summary.json", std::ios::binary | std::ios::trunc);
    write_summary(report, out);
    if (!out)
      throw IoError("cannot write summary.json");
  }
  std::ofstream out(out_dir / "report.md", std::ios::binary | std::ios::trunc);
  write_markdown_report(report, out);
  if (!out)
    throw IoError("cannot write report.md");
}

} // namespace sdforge::pipeline
