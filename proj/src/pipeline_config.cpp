#include <algorithm>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include "sdforge/acquire.hpp"
#include "sdforge/models.hpp"
#include "sdforge/pipeline.hpp"
#include "strings.hpp"

namespace sdforge::pipeline {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> &known_models() {
  static const std::set<std::string> names = {
      "ridge",    "lasso",         "elasticnet",        "ridge_wls",
      "ridge_yj", "random_forest", "gradient_boosting", "stratified"};
  return names;
}

fs::path resolve(const fs::path &base, const std::string &value) {
  fs::path p(value);
  return p.is_relative() && !base.empty() ? (base / p).lexically_normal() : p;
}

std::uint64_t to_u64(const std::string &key, const std::string &value) {
  auto v = detail::parse_u64(detail::trim(value));
  if (!v)
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return *v;
}

double to_double(const std::string &key, const std::string &value) {
  auto v = detail::parse_double(detail::trim(value));
  if (!v)
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  return *v;
}

std::vector<std::string> to_list(const std::string &value) {
  std::vector<std::string> out;
  for (auto part : detail::split(value, ','))
    if (auto t = detail::trim(part); !t.empty())
      out.emplace_back(t);
  return out;
}

std::string join(const std::vector<std::string> &parts) {
  std::string out;
  for (const auto &p : parts)
    out += (out.empty() ? "" : ",") + p;
  return out;
}

} // namespace

fs::path PipelineConfig::resolved_index_path() const {
  return index_path ? *index_path : out / "index.tsv";
}

fs::path PipelineConfig::resolved_fetch_dir() const {
  return fetch_dir.is_relative() ? out / fetch_dir : fetch_dir;
}

std::vector<fs::path> PipelineConfig::all_source_files() const {
  std::vector<fs::path> files;
  for (const auto &s : sources)
    files.insert(files.end(), s.files.begin(), s.files.end());
  return files;
}

void apply_config_key(PipelineConfig &c, const std::string &key, const std::string &value,
                      const fs::path &base) {
  const std::string v(detail::trim(value));
  if (key.rfind("source.", 0) == 0) {
    std::string name = key.substr(7);
    if (name.empty())
      throw ConfigError("source key needs a name (source.<name>)");
    auto it = std::find_if(c.sources.begin(), c.sources.end(),
                           [&](const SourceDef &s) { return s.name == name; });
    if (it == c.sources.end()) {
      c.sources.push_back({name, {}});
      it = std::prev(c.sources.end());
    }
    for (const auto &f : to_list(v))
      it->files.push_back(resolve(base, f));
  } else if (key == "key_tag") {
    c.key_tag = v;
  } else if (key == "short_key_tag") {
    c.short_key_tag = v;
  } else if (key == "target_tag") {
    c.target_tag = v;
  } else if (key == "smiles_tag") {
    c.smiles_tag = v;
  } else if (key == "fetch_manifest") {
    c.fetch_manifest = v.empty() ? std::nullopt : std::optional(resolve(base, v));
  } else if (key == "fetch_dir") {
    c.fetch_dir = resolve(base, v);
  } else if (key == "fetch_retries") {
    c.fetch_retries = static_cast<int>(to_u64(key, v));
  } else if (key == "index_path") {
    c.index_path = v.empty() ? std::nullopt : std::optional(resolve(base, v));
  } else if (key == "tpsa_table") {
    c.tpsa_table = v.empty() ? std::nullopt : std::optional(resolve(base, v));
  } else if (key == "out") {
    c.out = resolve(base, v);
  } else if (key == "seed") {
    c.seed = to_u64(key, v);
  } else if (key == "workers") {
    c.workers = to_u64(key, v);
  } else if (key == "test_fraction") {
    c.test_fraction = to_double(key, v);
  } else if (key == "split_bins") {
    c.split_bins = to_u64(key, v);
  } else if (key == "models") {
    c.models = to_list(v);
  } else if (key == "cv_folds") {
    c.cv_folds = to_u64(key, v);
  } else if (key == "routing") {
    c.routing = v;
  } else if (key == "stratified_lambda") {
    c.stratified_lambda = to_double(key, v);
  } else if (key == "min_stratum") {
    c.min_stratum = to_u64(key, v);
  } else if (key == "shap_model") {
    c.shap_model = v;
  } else if (key == "shap_background") {
    c.shap_background = to_u64(key, v);
  } else if (key == "shap_rows") {
    c.shap_rows = to_u64(key, v);
  } else if (key == "normality_subsample") {
    c.normality_subsample = to_u64(key, v);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

PipelineConfig parse_config(std::istream &in, const fs::path &base_dir) {
  PipelineConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = detail::trim(line);
    if (text.empty() || text.front() == '#')
      continue;
    auto eq = text.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key(detail::trim(text.substr(0, eq)));
    try {
      apply_config_key(config, key, std::string(text.substr(eq + 1)), base_dir);
    } catch (const ConfigError &e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

PipelineConfig load_config(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot open config " + path.string());
  return parse_config(in, path.parent_path());
}

void PipelineConfig::validate() const {
  if (sources.size() < 2)
    throw ConfigError("at least two sources (source.<name> = ...) are required");
  std::set<fs::path> fetched;
  if (fetch_manifest) {
    if (!fs::exists(*fetch_manifest))
      throw ConfigError("fetch_manifest does not exist: " + fetch_manifest->string());
    try {
      for (const auto &e : acquire::load_manifest(*fetch_manifest))
        fetched.insert((resolved_fetch_dir() / e.dest_path).lexically_normal());
    } catch (const Error &e) {
      throw ConfigError(std::string("fetch_manifest: ") + e.what());
    }
  }
  std::set<std::string> names;
  for (const auto &s : sources) {
    if (!names.insert(s.name).second)
      throw ConfigError("duplicate source name " + s.name);
    if (s.files.empty())
      throw ConfigError("source " + s.name + " lists no files");
    for (const auto &f : s.files)
      if (!fs::exists(f) && !fetched.count(f.lexically_normal()))
        throw ConfigError("source file does not exist: " + f.string());
  }
  if (tpsa_table && !fs::exists(*tpsa_table))
    throw ConfigError("tpsa_table does not exist: " + tpsa_table->string());
  for (const auto *tag : {&key_tag, &short_key_tag, &target_tag, &smiles_tag})
    if (tag->empty())
      throw ConfigError("tag names must not be empty");
  if (workers < 1)
    throw ConfigError("workers must be at least 1");
  if (!(test_fraction > 0 && test_fraction < 1))
    throw ConfigError("test_fraction must lie in (0, 1)");
  if (split_bins < 1)
    throw ConfigError("split_bins must be at least 1");
  if (cv_folds == 1)
    throw ConfigError("cv_folds must be 0 (disabled) or at least 2");
  if (models.empty())
    throw ConfigError("models must name at least one model");
  std::set<std::string> seen;
  for (const auto &m : models) {
    if (!known_models().count(m))
      throw ConfigError("unknown model '" + m + "'");
    if (!seen.insert(m).second)
      throw ConfigError("model listed twice: " + m);
  }
  try {
    models::routing_from_string(routing);
  } catch (const Error &) {
    throw ConfigError("unknown routing '" + routing + "'");
  }
  if (!(stratified_lambda >= 0))
    throw ConfigError("stratified_lambda must be non-negative");
  if (shap_model != "best" && !seen.count(shap_model))
    throw ConfigError("shap_model must be 'best' or one of the configured models");
  if (shap_background < 1)
    throw ConfigError("shap_background must be at least 1");
}

std::string PipelineConfig::canonical() const {
  std::ostringstream text;
  for (const auto &s : sources) {
    std::vector<std::string> files;
    for (const auto &f : s.files)
      files.push_back(f.generic_string());
    text << "source." << s.name << " = " << join(files) << '\n';
  }
  text << "key_tag = " << key_tag << '\n'
      << "short_key_tag = " << short_key_tag << '\n'
      << "target_tag = " << target_tag << '\n'
      << "smiles_tag = " << smiles_tag << '\n'
      << "fetch_manifest = " << (fetch_manifest ? fetch_manifest->generic_string() : "") << '\n'
      << "fetch_dir = " << fetch_dir.generic_string() << '\n'
      << "fetch_retries = " << fetch_retries << '\n'
      << "index_path = " << (index_path ? index_path->generic_string() : "") << '\n'
      << "tpsa_table = " << (tpsa_table ? tpsa_table->generic_string() : "") << '\n'
      << "out = " << out.generic_string() << '\n'
      << "seed = " << seed << '\n'
      << "test_fraction = " << test_fraction << '\n'
      << "split_bins = " << split_bins << '\n'
      << "models = " << join(models) << '\n'
      << "cv_folds = " << cv_folds << '\n'
      << "routing = " << routing << '\n'
      << "stratified_lambda = " << stratified_lambda << '\n'
      << "min_stratum = " << min_stratum << '\n'
      << "shap_model = " << shap_model << '\n'
      << "shap_background = " << shap_background << '\n'
      << "shap_rows = " << shap_rows << '\n'
      << "normality_subsample = " << normality_subsample << '\n';
  return text.str();
}

} // namespace sdforge::pipeline
