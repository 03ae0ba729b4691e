// sdforge command-line driver.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 phase failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdforge/pipeline.hpp"
#include "sdforge/synth.hpp"

namespace fs = std::filesystem;
using namespace sdforge;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool resume = false;
  std::string out;
  std::vector<std::string> overrides;  // key=value
};

pipeline::PipelineConfig build_config(const GlobalFlags &flags) {
  pipeline::PipelineConfig config;
  if (!flags.config.empty())
    config = pipeline::load_config(flags.config);
  for (const auto &kv : flags.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw pipeline::ConfigError("--set expects key=value, got '" + kv + "'");
    pipeline::apply_config_key(config, kv.substr(0, eq), kv.substr(eq + 1), fs::current_path());
  }
  if (flags.seed)
    config.seed = *flags.seed;
  if (flags.workers)
    config.workers = *flags.workers;
  if (!flags.out.empty())
    config.out = flags.out;
  config.resume = flags.resume;
  return config;
}

void print_counts(const pipeline::RunReport &r) {
  const auto &c = r.counts;
  std::cout << "scanned " << c.scanned << ", indexed " << c.indexed << ", intersected "
            << c.intersected << ", extracted " << c.extracted << ", transformed "
            << c.transformed << ", excluded " << c.excluded << '\n';
  if (!r.best_model.empty())
    if (const auto *m = r.model(r.best_model))
      std::cout << "best model " << m->label << ": test R2 " << m->test.r2 << '\n';
}

int gen_corpus(const synth::CorpusSpec &spec, const fs::path &out) {
  auto manifest = synth::generate_corpus(spec, out);
  std::ofstream conf(out / "pipeline.conf", std::ios::binary | std::ios::trunc);
  conf << "# Generated alongside the synthetic corpus; paths are relative to this file.\n";
  for (std::size_t s = 0; s < manifest.files.size(); ++s)
    conf << "source.s" << s << " = " << manifest.files[s].filename().string() << '\n';
  conf << "key_tag = " << spec.inchi_tag << '\n'
       << "short_key_tag = " << spec.inchikey_tag << '\n'
       << "target_tag = " << spec.target_tag << '\n'
       << "smiles_tag = " << spec.smiles_tag << '\n'
       << "out = run\n"
       << "seed = " << spec.seed << '\n';
  std::cout << "wrote " << manifest.files.size() << " source files, "
            << manifest.molecules.size() << " molecules, " << manifest.core_identifiers.size()
            << " core, " << manifest.collisions.size() << " collision groups to " << out
            << '\n';
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Multi-source SDF integration, descriptor extraction, and logP modeling"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags flags;
  app.add_option("--config", flags.config, "Flat key = value configuration file");
  app.add_option("--seed", flags.seed, "Seed for every random stream");
  app.add_option("--workers", flags.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--resume", flags.resume, "Skip phases whose outputs are up to date");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--set", flags.overrides, "Override a config key (key=value); repeatable");

  // Pipeline phases exposed as subcommands. `audit` is produced by the
  // intersect phase, which scans for collisions in the same run.
  const std::map<std::string, std::pair<std::string, std::vector<std::string>>> phases = {
      {"fetch", {"Download manifest entries with checksum verification", {"fetch"}}},
      {"index", {"Build the byte-offset index over all sources", {"index"}}},
      {"intersect", {"Intersect identifiers across sources (also audits)", {"intersect"}}},
      {"audit", {"Audit hashed identifiers for collisions (with intersect)", {"intersect"}}},
      {"extract", {"Extract intersected records through the index", {"extract"}}},
      {"transform", {"Compute descriptors into the dataset CSV", {"transform"}}},
      {"eda", {"Exploratory statistics and Lipinski compliance", {"eda"}}},
      {"fit", {"Split, tune, and fit the configured models", {"fit"}}},
      {"evaluate", {"Test-set metrics, diagnostics, stratified results", {"evaluate"}}},
      {"explain", {"Exact SHAP attributions for the chosen model", {"explain"}}},
      {"run", {"Run every phase in order", {}}},
  };
  std::vector<std::string> only;
  CLI::App *chosen_phase = nullptr;
  std::vector<std::pair<CLI::App *, std::vector<std::string>>> phase_commands;
  for (const auto &[name, info] : phases)
    phase_commands.emplace_back(app.add_subcommand(name, info.first), info.second);

  synth::CorpusSpec spec;
  std::string corpus_out;
  auto *gen = app.add_subcommand("gen-corpus", "Write a synthetic multi-source corpus");
  gen->add_option("dir", corpus_out, "Directory for the corpus")->required();
  gen->add_option("--sources", spec.sources, "Number of source files");
  gen->add_option("--records", spec.records_per_source, "Records per source");
  gen->add_option("--core", spec.core, "Molecules present in every source");
  gen->add_option("--pairwise", spec.pairwise_overlap, "Molecules shared by neighbouring sources");
  gen->add_option("--collisions", spec.collision_groups, "Planted hashed-key collision groups");
  gen->add_option("--collision-size", spec.collision_group_size, "Members per collision group");
  gen->add_option("--missing-target", spec.missing_target_rate, "Fraction without a target");
  gen->add_option("--noise", spec.noise_base, "Base noise standard deviation");
  gen->add_option("--heteroskedasticity", spec.heteroskedasticity, "Noise growth factor");
  gen->add_flag("--compact", spec.compact, "Tiny molecules (fast benchmarking corpora)");

  auto *rep = app.add_subcommand("report", "Regenerate report.md from summary.json in --out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      if (flags.seed)
        spec.seed = *flags.seed;
      spec.validate();
      return gen_corpus(spec, corpus_out);
    }
    if (rep->parsed()) {
      fs::path out = flags.out.empty() ? build_config(flags).out : fs::path(flags.out);
      auto report = pipeline::read_summary(out / "summary.json");
      pipeline::generate_report(report, out);
      std::cout << "wrote " << (out / "report.md").string() << '\n';
      return 0;
    }
    for (const auto &[cmd, phase_list] : phase_commands)
      if (cmd->parsed()) {
        chosen_phase = cmd;
        only = phase_list;
      }
    auto config = build_config(flags);
    pipeline::RunOptions options;
    options.only = only;
    auto report = pipeline::run_pipeline(config, options);
    if (chosen_phase && chosen_phase->get_name() == "run")
      print_counts(report);
    return 0;
  } catch (const pipeline::ConfigError &e) {
    std::cerr << "[config] error: " << e.what() << '\n';
    return 2;
  } catch (const pipeline::PhaseError &e) {
    std::cerr << "[" << e.phase() << "] failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
