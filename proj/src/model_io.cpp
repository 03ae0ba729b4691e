// Model file layout. Every line is TAB-separated; reals use %.17g so they
// round-trip exactly.
//
//   #sdforge-model v1
//   model <kind>                 ridge | lasso | elasticnet | random_forest |
//                                gradient_boosting | stratified
//   features <p> <name>...
//   ... kind-specific lines ...
//   end
//
// Linear: scaler_mean, scaler_scale, transform (none | yeo_johnson <lambda>
// <loglik>), lambda, l1_ratio, weighted, iterations, intercept, coefficients.
// Ensemble: n_estimators, max_depth, min_samples_leaf, max_features,
// bootstrap, subsample, learning_rate, seed, init, trees <count>, then per
// tree "tree <node count>" and one "node <feature> <threshold> <left>
// <right> <value>" line per node (feature -1 marks a leaf).
// Stratified: routing, thresholds <molwt> <logp> <donors> <acceptors>,
// indices <molwt> <donors> <acceptors>, train_sizes <a> <b>, then
// "submodel a|b|global" each followed by a nested linear model block.

#include "sdforge/models.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "strings.hpp"

namespace sdforge::models {

namespace {

constexpr std::string_view kMagic = "#sdforge-model v1";

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_reals(std::ostream &out, std::string_view key, const VectorXd &v) {
  out << key;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out << '\t' << real(v(i));
  out << '\n';
}

void write_features(std::ostream &out, const std::vector<std::string> &names) {
  out << "features\t" << names.size();
  for (const auto &n : names)
    out << '\t' << n;
  out << '\n';
}

void write_linear(std::ostream &out, const LinearModel &m) {
  out << "model\t" << to_string(m.penalty) << '\n';
  write_features(out, m.feature_names);
  write_reals(out, "scaler_mean", m.scaler.mean());
  write_reals(out, "scaler_scale", m.scaler.scale());
  if (m.transform)
    out << "transform\tyeo_johnson\t" << real(m.transform->lambda()) << '\t'
        << real(m.transform->fit_log_likelihood()) << '\n';
  else
    out << "transform\tnone\n";
  out << "lambda\t" << real(m.lambda) << '\n';
  out << "l1_ratio\t" << real(m.l1_ratio) << '\n';
  out << "weighted\t" << (m.weighted ? 1 : 0) << '\n';
  out << "iterations\t" << m.iterations << '\n';
  out << "intercept\t" << real(m.intercept) << '\n';
  write_reals(out, "coefficients", m.coefficients);
  out << "end\n";
}

void write_ensemble(std::ostream &out, const TreeEnsemble &m) {
  out << "model\t"
      << (m.kind == EnsembleKind::random_forest ? "random_forest" : "gradient_boosting")
      << '\n';
  write_features(out, m.feature_names);
  const auto &p = m.params;
  out << "n_estimators\t" << p.n_estimators << '\n';
  out << "max_depth\t" << p.max_depth << '\n';
  out << "min_samples_leaf\t" << p.min_samples_leaf << '\n';
  out << "max_features\t" << p.max_features << '\n';
  out << "bootstrap\t" << (p.bootstrap ? 1 : 0) << '\n';
  out << "subsample\t" << real(p.subsample) << '\n';
  out << "learning_rate\t" << real(m.learning_rate) << '\n';
  out << "seed\t" << p.seed << '\n';
  out << "init\t" << real(m.init) << '\n';
  out << "trees\t" << m.trees.size() << '\n';
  for (const auto &tree : m.trees) {
    out << "tree\t" << tree.nodes.size() << '\n';
    for (const auto &n : tree.nodes)
      out << "node\t" << n.feature << '\t' << real(n.threshold) << '\t' << n.left << '\t'
          << n.right << '\t' << real(n.value) << '\n';
  }
  out << "end\n";
}

void write_stratified(std::ostream &out, const StratifiedPredictor &m) {
  out << "model\tstratified\n";
  write_features(out, m.feature_names);
  out << "routing\t" << to_string(m.mode) << '\n';
  out << "thresholds\t" << real(m.thresholds.molwt) << '\t' << real(m.thresholds.logp)
      << '\t' << real(m.thresholds.donors) << '\t' << real(m.thresholds.acceptors) << '\n';
  out << "indices\t" << m.molwt_index << '\t' << m.donors_index << '\t'
      << m.acceptors_index << '\n';
  out << "train_sizes\t" << m.train_a << '\t' << m.train_b << '\n';
  out << "submodel\ta\n";
  write_linear(out, m.model_a);
  out << "submodel\tb\n";
  write_linear(out, m.model_b);
  if (m.global) {
    out << "submodel\tglobal\n";
    write_linear(out, *m.global);
  }
  out << "end\n";
}

class Reader {
public:
  explicit Reader(std::istream &in) : in_(in) {}

  std::vector<std::string> next() {
    std::string line;
    if (!std::getline(in_, line))
      throw ParseError("model file: unexpected end of input", line_ + 1);
    ++line_;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    std::vector<std::string> tokens;
    for (auto part : detail::split(line, '\t'))
      tokens.emplace_back(part);
    return tokens;
  }

  std::vector<std::string> expect(std::string_view key, std::size_t min_values = 0) {
    auto tokens = next();
    if (tokens.empty() || tokens[0] != key)
      fail("expected '" + std::string(key) + "'");
    if (tokens.size() < 1 + min_values)
      fail("too few values for '" + std::string(key) + "'");
    return tokens;
  }

  std::string value(std::string_view key) {
    auto t = expect(key, 1);
    if (t.size() != 2)
      fail("expected one value for '" + std::string(key) + "'");
    return t[1];
  }

  double real_value(std::string_view key) { return to_real(value(key)); }

  template <class Int> Int int_value(std::string_view key) { return to_int<Int>(value(key)); }

  double to_real(const std::string &s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      fail("invalid number '" + s + "'");
    return v;
  }

  template <class Int> Int to_int(const std::string &s) {
    Int v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      fail("invalid integer '" + s + "'");
    return v;
  }

  VectorXd reals(std::string_view key, std::size_t count) {
    auto t = expect(key);
    if (t.size() != count + 1)
      fail("expected " + std::to_string(count) + " values for '" + std::string(key) + "'");
    VectorXd v(static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i)
      v(static_cast<Eigen::Index>(i)) = to_real(t[i + 1]);
    return v;
  }

  std::vector<std::string> features() {
    auto t = expect("features", 1);
    auto p = to_int<std::size_t>(t[1]);
    if (t.size() != p + 2)
      fail("feature count does not match names");
    return {t.begin() + 2, t.end()};
  }

  [[noreturn]] void fail(const std::string &what) const {
    throw ParseError("model file: " + what, line_);
  }

private:
  std::istream &in_;
  std::size_t line_ = 0;
};

LinearModel read_linear_body(Reader &r, Penalty penalty) {
  LinearModel m;
  m.penalty = penalty;
  m.feature_names = r.features();
  const std::size_t p = m.feature_names.size();
  VectorXd mean = r.reals("scaler_mean", p);
  VectorXd scale = r.reals("scaler_scale", p);
  try {
    m.scaler = Scaler(std::move(mean), std::move(scale));
  } catch (const Error &e) {
    r.fail(e.what());
  }
  auto t = r.expect("transform", 1);
  if (t[1] == "yeo_johnson" && t.size() == 4)
    m.transform = YeoJohnson(r.to_real(t[2]), r.to_real(t[3]));
  else if (!(t[1] == "none" && t.size() == 2))
    r.fail("invalid transform line");
  m.lambda = r.real_value("lambda");
  m.l1_ratio = r.real_value("l1_ratio");
  m.weighted = r.int_value<int>("weighted") != 0;
  m.iterations = r.int_value<int>("iterations");
  m.intercept = r.real_value("intercept");
  m.coefficients = r.reals("coefficients", p);
  r.expect("end");
  return m;
}

TreeEnsemble read_ensemble_body(Reader &r, EnsembleKind kind) {
  TreeEnsemble m;
  m.kind = kind;
  m.feature_names = r.features();
  auto &p = m.params;
  p.n_estimators = r.int_value<std::size_t>("n_estimators");
  p.max_depth = r.int_value<int>("max_depth");
  p.min_samples_leaf = r.int_value<std::size_t>("min_samples_leaf");
  p.max_features = r.int_value<std::size_t>("max_features");
  p.bootstrap = r.int_value<int>("bootstrap") != 0;
  p.subsample = r.real_value("subsample");
  m.learning_rate = r.real_value("learning_rate");
  p.learning_rate = m.learning_rate;
  p.seed = r.int_value<std::uint64_t>("seed");
  m.init = r.real_value("init");
  auto count = r.int_value<std::size_t>("trees");
  const int nfeat = static_cast<int>(m.feature_names.size());
  for (std::size_t t = 0; t < count; ++t) {
    auto nodes = r.int_value<std::size_t>("tree");
    if (nodes == 0)
      r.fail("empty tree");
    Tree tree;
    for (std::size_t i = 0; i < nodes; ++i) {
      auto f = r.expect("node", 5);
      if (f.size() != 6)
        r.fail("node line needs 5 values");
      TreeNode n;
      n.feature = r.to_int<int>(f[1]);
      n.threshold = r.to_real(f[2]);
      n.left = r.to_int<int>(f[3]);
      n.right = r.to_int<int>(f[4]);
      n.value = r.to_real(f[5]);
      if (n.feature >= nfeat || n.feature < -1)
        r.fail("node feature out of range");
      // Children always follow their parent, which also rules out cycles.
      if (n.feature >= 0 &&
          (n.left <= static_cast<int>(i) || n.right <= static_cast<int>(i) ||
           n.left >= static_cast<int>(nodes) || n.right >= static_cast<int>(nodes)))
        r.fail("node child index out of range");
      tree.nodes.push_back(n);
    }
    m.trees.push_back(std::move(tree));
  }
  r.expect("end");
  if (m.trees.empty())
    r.fail("ensemble has no trees");
  return m;
}

FittedModel read_model(Reader &r);

LinearModel read_linear(Reader &r) {
  auto model = read_model(r);
  auto *linear = std::get_if<LinearModel>(&model);
  if (!linear)
    r.fail("stratified submodel must be linear");
  return std::move(*linear);
}

StratifiedPredictor read_stratified_body(Reader &r) {
  StratifiedPredictor m;
  m.feature_names = r.features();
  try {
    m.mode = routing_from_string(r.value("routing"));
  } catch (const ParseError &) {
    throw;
  } catch (const Error &e) {
    r.fail(e.what());
  }
  auto t = r.expect("thresholds", 4);
  m.thresholds = {r.to_real(t[1]), r.to_real(t[2]), r.to_real(t[3]), r.to_real(t[4])};
  auto idx = r.expect("indices", 3);
  m.molwt_index = r.to_int<std::size_t>(idx[1]);
  m.donors_index = r.to_int<std::size_t>(idx[2]);
  m.acceptors_index = r.to_int<std::size_t>(idx[3]);
  const auto p = m.feature_names.size();
  if (m.molwt_index >= p || m.donors_index >= p || m.acceptors_index >= p)
    r.fail("routing feature index out of range");
  auto sizes = r.expect("train_sizes", 2);
  m.train_a = r.to_int<std::size_t>(sizes[1]);
  m.train_b = r.to_int<std::size_t>(sizes[2]);
  if (r.value("submodel") != "a")
    r.fail("expected submodel a");
  m.model_a = read_linear(r);
  if (r.value("submodel") != "b")
    r.fail("expected submodel b");
  m.model_b = read_linear(r);
  auto next = r.next();
  if (next.size() == 2 && next[0] == "submodel" && next[1] == "global") {
    m.global = read_linear(r);
    next = r.next();
  }
  if (next.size() != 1 || next[0] != "end")
    r.fail("expected 'end'");
  return m;
}

FittedModel read_model(Reader &r) {
  auto kind = r.value("model");
  if (kind == "ridge" || kind == "lasso" || kind == "elasticnet")
    return read_linear_body(r, penalty_from_string(kind));
  if (kind == "random_forest")
    return read_ensemble_body(r, EnsembleKind::random_forest);
  if (kind == "gradient_boosting")
    return read_ensemble_body(r, EnsembleKind::gradient_boosting);
  if (kind == "stratified")
    return read_stratified_body(r);
  r.fail("unknown model kind '" + kind + "'");
}

} // namespace

void save_model(const FittedModel &model, std::ostream &out) {
  out << kMagic << '\n';
  std::visit(
      [&](const auto &m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>)
          write_linear(out, m);
        else if constexpr (std::is_same_v<T, TreeEnsemble>)
          write_ensemble(out, m);
        else
          write_stratified(out, m);
      },
      model);
  if (!out)
    throw IoError("failed to write model");
}

void save_model(const FittedModel &model, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  save_model(model, out);
}

FittedModel load_model(std::istream &in) {
  std::string magic;
  if (!std::getline(in, magic))
    throw ParseError("model file: empty input");
  if (!magic.empty() && magic.back() == '\r')
    magic.pop_back();
  if (magic != kMagic)
    throw UnsupportedFormat("not an sdforge model file (header '" + magic + "')");
  Reader reader(in);
  auto model = read_model(reader);
  std::string rest;
  while (std::getline(in, rest))
    if (!detail::trim(rest).empty())
      throw ParseError("model file: trailing content after final 'end'");
  return model;
}

FittedModel load_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return load_model(in);
}

} // namespace sdforge::models
