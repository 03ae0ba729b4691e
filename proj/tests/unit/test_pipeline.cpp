#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sdforge/descriptors.hpp"
#include "sdforge/models.hpp"
#include "sdforge/pipeline.hpp"
#include "sdforge/synth.hpp"
#include "test_support.hpp"

using namespace sdforge;
using namespace sdforge::pipeline;
using testing_support::read_file;
using testing_support::TempDir;
using testing_support::write_file;

namespace fs = std::filesystem;

namespace {

synth::CorpusManifest make_corpus(const fs::path &dir) {
  synth::CorpusSpec spec;
  spec.sources = 3;
  spec.records_per_source = 400;
  spec.core = 220;
  spec.pairwise_overlap = 30;
  spec.collision_groups = 2;
  spec.missing_target_rate = 0.05;
  spec.seed = 31;
  return synth::generate_corpus(spec, dir);
}

PipelineConfig small_config(const synth::CorpusManifest &m, const fs::path &out) {
  PipelineConfig c;
  for (std::size_t s = 0; s < m.files.size(); ++s)
    c.sources.push_back({"s" + std::to_string(s), {m.files[s]}});
  c.out = out;
  c.seed = 5;
  c.models = {"ridge", "lasso", "ridge_wls", "stratified"};
  c.cv_folds = 3;
  c.min_stratum = 10;
  c.shap_background = 15;
  c.shap_rows = 10;
  return c;
}

RunOptions quiet() {
  RunOptions o;
  o.log = [](const std::string &, const std::string &) {};
  return o;
}

int run_cli(const std::string &args) {
  std::string cmd = std::string(SDFORGE_CLI) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// One shared end-to-end run; the individual tests inspect its outputs.
class PipelineRun : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    manifest_ = new synth::CorpusManifest(make_corpus(dir_->path() / "corpus"));
    config_ = new PipelineConfig(small_config(*manifest_, dir_->path() / "run"));
    report_ = new RunReport(run_pipeline(*config_, quiet()));
  }
  static void TearDownTestSuite() {
    delete report_;
    delete config_;
    delete manifest_;
    delete dir_;
  }

  static TempDir *dir_;
  static synth::CorpusManifest *manifest_;
  static PipelineConfig *config_;
  static RunReport *report_;
};

TempDir *PipelineRun::dir_ = nullptr;
synth::CorpusManifest *PipelineRun::manifest_ = nullptr;
PipelineConfig *PipelineRun::config_ = nullptr;
RunReport *PipelineRun::report_ = nullptr;

} // namespace

TEST(Config, ParsesKeysAndResolvesPaths) {
  TempDir dir;
  write_file(dir / "a.sdf", "");
  write_file(dir / "b.sdf", "");
  std::istringstream in("# comment\nsource.first = a.sdf\nsource.second = b.sdf\n"
                        "models = ridge, lasso\nseed = 9\ncv_folds = 0\nout = results\n");
  auto c = parse_config(in, dir.path());
  ASSERT_EQ(c.sources.size(), 2u);
  EXPECT_EQ(c.sources[0].files[0], dir / "a.sdf");
  EXPECT_EQ(c.models, (std::vector<std::string>{"ridge", "lasso"}));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.out, dir / "results");
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, RejectsInvalidSettings) {
  PipelineConfig c;
  EXPECT_THROW(apply_config_key(c, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(apply_config_key(c, "seed", "abc"), ConfigError);
  EXPECT_THROW(c.validate(), ConfigError);  // no sources

  TempDir dir;
  write_file(dir / "a.sdf", "");
  c.sources = {{"a", {dir / "a.sdf"}}, {"b", {dir / "missing.sdf"}}};
  EXPECT_THROW(c.validate(), ConfigError);
  c.sources[1].files = {dir / "a.sdf"};
  c.models = {"ridge", "ridge"};
  EXPECT_THROW(c.validate(), ConfigError);
  c.models = {"ridge", "mystery"};
  EXPECT_THROW(c.validate(), ConfigError);
  c.models = {"ridge"};
  c.routing = "sideways";
  EXPECT_THROW(c.validate(), ConfigError);
  c.routing = "features_only";
  EXPECT_NO_THROW(c.validate());
  apply_config_key(c, "test_fraction", "1.5");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, CanonicalIgnoresWorkersAndResume) {
  PipelineConfig a, b;
  b.workers = 8;
  b.resume = true;
  EXPECT_EQ(a.canonical(), b.canonical());
  b.seed = 1;
  EXPECT_NE(a.canonical(), b.canonical());
}

TEST_F(PipelineRun, CountsAreConserved) {
  const auto &c = report_->counts;
  EXPECT_EQ(c.scanned, 1200u);
  EXPECT_EQ(c.indexed + c.index_skipped + c.duplicates, c.scanned);
  EXPECT_EQ(c.indexed, manifest_->molecules.size());
  EXPECT_EQ(c.intersected, manifest_->core_identifiers.size());
  EXPECT_EQ(c.extracted + c.extraction_missing + c.verification_failures, c.intersected);
  EXPECT_EQ(c.transformed + c.excluded, c.extracted);
  EXPECT_EQ(c.train + c.test, c.transformed);
  EXPECT_EQ(c.collision_groups, 2u);

  std::size_t missing_core = 0;
  for (const auto &m : manifest_->molecules)
    missing_core += m.core && !m.has_target;
  EXPECT_EQ(c.excluded, missing_core);
}

TEST_F(PipelineRun, ArtifactsExist) {
  for (const char *name : {"index.tsv", "intersection.txt", "audit.tsv", "extracted.sdf",
                           "dataset.csv", "eda_features.csv", "correlation.csv", "lipinski.csv",
                           "split.tsv", "predictions.csv", "shap_phi.csv", "shap_summary.csv",
                           "shap_dependence.csv", "summary.json", "report.md"})
    EXPECT_TRUE(fs::exists(config_->out / name)) << name;
  for (const auto &label : config_->models)
    EXPECT_TRUE(fs::exists(config_->out / "models" / (label + ".model"))) << label;
  for (const auto &phase : phase_names()) {
    if (phase == "fetch")
      continue;
    EXPECT_TRUE(fs::exists(config_->out / "state" / (phase + ".json"))) << phase;
  }
  EXPECT_EQ(report_->phase("fetch")->status, "not_configured");
}

TEST_F(PipelineRun, LipinskiRatesMatchARecount) {
  std::ifstream in(config_->out / "dataset.csv");
  std::string line;
  std::getline(in, line);
  std::size_t n = 0, compliant = 0;
  while (std::getline(in, line)) {
    auto f = models::split_csv_line(line);
    ASSERT_EQ(f.size(), 12u);
    double logp = std::stod(f[3]), molwt = std::stod(f[4]);
    double donors = std::stod(f[6]), acceptors = std::stod(f[7]);
    compliant += molwt <= 500 && logp <= 5 && donors <= 5 && acceptors <= 10;
    ++n;
  }
  EXPECT_EQ(report_->eda.lipinski.n, n);
  EXPECT_NEAR(report_->eda.lipinski.compliant, double(compliant) / double(n), 1e-9);
}

TEST_F(PipelineRun, ModelsAndShapReported) {
  for (const auto &label : config_->models) {
    const auto *m = report_->model(label);
    ASSERT_TRUE(m) << label;
    EXPECT_GT(m->test.r2, 0.5) << label;
  }
  EXPECT_FALSE(report_->best_model.empty());
  EXPECT_TRUE(report_->stratified.present);
  ASSERT_TRUE(report_->shap.present);
  EXPECT_LT(report_->shap.max_local_error, 1e-6);
  EXPECT_EQ(report_->shap.rows, 10u);
  EXPECT_EQ(report_->shap.ranking.size(), models::modeling_features().size());
}

TEST_F(PipelineRun, SummaryRoundTrips) {
  auto back = read_summary(config_->out / "summary.json");
  std::ostringstream a, b;
  write_summary(*report_, a);
  write_summary(back, b);
  EXPECT_EQ(a.str(), b.str());
}

TEST_F(PipelineRun, ResumeSkipsCompletedPhases) {
  auto config = *config_;
  config.resume = true;
  auto before = read_file(config.out / "predictions.csv");
  fs::remove(config.out / "predictions.csv");
  auto r = run_pipeline(config, quiet());
  for (const char *p : {"index", "intersect", "extract", "transform", "eda", "fit"})
    EXPECT_EQ(r.phase(p)->status, "resumed") << p;
  EXPECT_EQ(r.phase("evaluate")->status, "ran");
  EXPECT_EQ(r.phase("explain")->status, "ran");
  EXPECT_EQ(read_file(config.out / "predictions.csv"), before);
  EXPECT_EQ(r.counts.transformed, report_->counts.transformed);

  // A changed setting invalidates the markers from the affected phase on.
  config.shap_rows = 5;
  auto changed = run_pipeline(config, quiet());
  EXPECT_EQ(changed.phase("index")->status, "ran");
  EXPECT_EQ(changed.shap.rows, 5u);
}

TEST_F(PipelineRun, OutputsIndependentOfWorkers) {
  // Fresh directories: other tests rerun phases in the shared one.
  auto serial = *config_;
  serial.out = dir_->path() / "run_serial";
  run_pipeline(serial, quiet());
  auto config = *config_;
  config.out = dir_->path() / "run_parallel";
  config.workers = 3;
  run_pipeline(config, quiet());
  for (const char *name : {"index.tsv", "intersection.txt", "audit.tsv", "extracted.sdf",
                           "dataset.csv", "split.tsv", "predictions.csv", "shap_phi.csv",
                           "models/ridge.model", "models/stratified.model"})
    EXPECT_EQ(read_file(config.out / name), read_file(serial.out / name)) << name;
}

TEST(PipelineErrors, UnselectedPhaseWithoutMarkerFails) {
  TempDir dir;
  auto m = make_corpus(dir / "corpus");
  auto config = small_config(m, dir / "run");
  RunOptions options = quiet();
  options.only = {"fit"};
  try {
    run_pipeline(config, options);
    FAIL() << "expected PhaseError";
  } catch (const PhaseError &e) {
    EXPECT_FALSE(e.phase().empty());
  }
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("run --config " + (dir / "missing.conf").string()), 2);
  EXPECT_EQ(run_cli("--bogus-flag run"), 2);
  EXPECT_EQ(run_cli("gen-corpus " + (dir / "c").string() +
                    " --records 200 --core 120 --pairwise 10 --collisions 1"),
            0);
  ASSERT_TRUE(fs::exists(dir / "c" / "pipeline.conf"));
  // Selecting a late phase with no upstream outputs is a phase failure.
  EXPECT_EQ(run_cli("fit --config " + (dir / "c" / "pipeline.conf").string()), 3);
  EXPECT_EQ(run_cli("index --config " + (dir / "c" / "pipeline.conf").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "c" / "run" / "index.tsv"));
}
