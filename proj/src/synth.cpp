#include "sdforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include "sdforge/descriptors.hpp"
#include "sdforge/error.hpp"
#include "sdforge/rng.hpp"
#include "strings.hpp"

namespace sdforge::synth {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string real17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Substituent codes in chain order: R ring, O hydroxyl, N amine, K carbonyl,
// E methoxy.
std::vector<char> substituents(const Latent &l) {
  std::vector<char> subs;
  subs.insert(subs.end(), static_cast<std::size_t>(l.rings), 'R');
  subs.insert(subs.end(), static_cast<std::size_t>(l.hydroxyls), 'O');
  subs.insert(subs.end(), static_cast<std::size_t>(l.amines), 'N');
  subs.insert(subs.end(), static_cast<std::size_t>(l.carbonyls), 'K');
  subs.insert(subs.end(), static_cast<std::size_t>(l.ethers), 'E');
  return subs;
}

void normalize_latent(Latent &l) {
  l.chain = std::max(l.chain, 1);
  auto subs = static_cast<int>(substituents(l).size());
  l.chain = std::max(l.chain, subs);
}

std::string hill_formula(const sdf::MolGraph &g) {
  std::map<std::string, int> counts;
  int hydrogens = 0;
  for (std::size_t i = 0; i < g.atoms.size(); ++i) {
    ++counts[g.atoms[i].element];
    hydrogens += descriptors::implicit_hydrogens(g, i);
  }
  auto term = [](const std::string &el, int n) {
    if (n == 0)
      return std::string();
    return n == 1 ? el : el + std::to_string(n);
  };
  std::string out = term("C", counts["C"]) + term("H", hydrogens);
  for (const auto &[el, n] : counts)
    if (el != "C")
      out += term(el, n);
  return out;
}

Latent sample_latent(Rng &rng, const CorpusSpec &spec) {
  Latent l;
  if (spec.compact) {
    l.chain = 1 + static_cast<int>(rng.below(2));
    l.hydroxyls = static_cast<int>(rng.below(2));
    return l;
  }
  double u = rng.uniform();
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  if (u < spec.extreme_fraction / 2) {
    // large lipophilic
    l.chain = pick(14, 36);
    l.rings = pick(0, 4);
    l.hydroxyls = pick(0, 1);
    l.carbonyls = pick(0, 1);
    l.ethers = pick(0, 1);
  } else if (u < spec.extreme_fraction) {
    // small polar
    l.chain = pick(2, 6);
    l.hydroxyls = pick(2, 5);
    l.amines = pick(1, 3);
    l.carbonyls = pick(0, 1);
  } else {
    l.chain = pick(2, 12);
    double r = rng.uniform();
    l.rings = r < 0.3 ? 0 : r < 0.7 ? 1 : r < 0.95 ? 2 : 3;
    l.hydroxyls = pick(0, 2);
    l.amines = pick(0, 1);
    l.carbonyls = pick(0, 2);
    l.ethers = pick(0, 1);
  }
  normalize_latent(l);
  return l;
}

} // namespace

double target_mean(const Latent &l) {
  const double c = l.chain, r = l.rings, h = l.hydroxyls;
  return 0.2 + 0.48 * c - 0.006 * c * c + 1.7 * r - 1.05 * h - 1.15 * l.amines -
         0.55 * l.carbonyls - 0.25 * l.ethers + 0.3 * r * h;
}

double target_sd(double mean, double noise_base, double heteroskedasticity) {
  return noise_base * (1.0 + heteroskedasticity * std::abs(mean - 3.0) / 3.0);
}

sdf::MolGraph build_molecule(Latent &latent) {
  normalize_latent(latent);
  sdf::MolGraph g;
  auto add = [&](const char *el) {
    g.atoms.push_back({el, 0});
    return g.atoms.size() - 1;
  };
  auto bond = [&](std::size_t a, std::size_t b, int order) { g.bonds.push_back({a, b, order}); };
  std::vector<std::size_t> chain;
  for (int i = 0; i < latent.chain; ++i) {
    chain.push_back(add("C"));
    if (i > 0)
      bond(chain[static_cast<std::size_t>(i) - 1], chain.back(), 1);
  }
  auto subs = substituents(latent);
  for (std::size_t i = 0; i < subs.size(); ++i) {
    std::size_t at = chain[i];
    switch (subs[i]) {
    case 'R': {
      std::size_t first = g.atoms.size();
      for (int k = 0; k < 6; ++k)
        add("C");
      for (std::size_t k = 0; k < 6; ++k)
        bond(first + k, first + (k + 1) % 6, k % 2 == 0 ? 2 : 1);
      bond(at, first, 1);
      break;
    }
    case 'O':
      bond(at, add("O"), 1);
      break;
    case 'N':
      bond(at, add("N"), 1);
      break;
    case 'K':
      bond(at, add("O"), 2);
      break;
    case 'E': {
      auto o = add("O");
      bond(at, o, 1);
      bond(o, add("C"), 1);
      break;
    }
    }
  }
  sdf::validate(g);
  return g;
}

std::string smiles_for(const Latent &latent) {
  Latent l = latent;
  normalize_latent(l);
  auto subs = substituents(l);
  std::string out;
  for (int i = 0; i < l.chain; ++i) {
    out += 'C';
    if (static_cast<std::size_t>(i) < subs.size()) {
      switch (subs[static_cast<std::size_t>(i)]) {
      case 'R':
        out += "(c1ccccc1)";
        break;
      case 'O':
        out += "(O)";
        break;
      case 'N':
        out += "(N)";
        break;
      case 'K':
        out += "(=O)";
        break;
      case 'E':
        out += "(OC)";
        break;
      }
    }
  }
  return out;
}

std::string pseudo_inchikey(std::string_view identifier) {
  std::uint64_t state = fnv1a(identifier);
  std::string key;
  auto letters = [&](int n) {
    for (int i = 0; i < n; ++i) {
      state = derive_seed(state, static_cast<std::uint64_t>(i));
      key += static_cast<char>('A' + state % 26);
    }
  };
  letters(14);
  key += '-';
  letters(8);
  key += "SA-N";
  return key;
}

void CorpusSpec::validate() const {
  if (sources < 1)
    throw Error("corpus: need at least one source");
  std::size_t pair_load = sources > 1 ? 2 * pairwise_overlap : 0;
  if (core + pair_load > records_per_source)
    throw Error("corpus: core plus pairwise overlap exceeds records per source");
  std::size_t unique = records_per_source - core - pair_load;
  if (collision_groups > 0 && collision_group_size < 2)
    throw Error("corpus: collision groups need at least two members");
  if (collision_groups * collision_group_size > unique * sources)
    throw Error("corpus: not enough unique records for the collision plants");
  if (!(missing_target_rate >= 0 && missing_target_rate <= 1))
    throw Error("corpus: missing_target_rate must lie in [0, 1]");
}

CorpusManifest generate_corpus(const CorpusSpec &spec, const fs::path &out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  Rng rng(spec.seed);
  CorpusManifest manifest;
  auto &mols = manifest.molecules;

  auto new_molecule = [&](std::vector<std::size_t> sources, bool core) {
    MoleculeTruth m;
    m.serial = mols.size();
    m.sources = std::move(sources);
    m.core = core;
    m.latent = sample_latent(rng, spec);
    m.mean = target_mean(m.latent);
    m.sd = target_sd(m.mean, spec.noise_base, spec.heteroskedasticity);
    m.eps = rng.normal();
    m.target = m.mean + m.sd * m.eps;
    m.has_target = rng.uniform() >= spec.missing_target_rate;
    mols.push_back(std::move(m));
  };

  std::vector<std::size_t> all_sources(spec.sources);
  std::iota(all_sources.begin(), all_sources.end(), 0);
  for (std::size_t i = 0; i < spec.core; ++i)
    new_molecule(all_sources, true);
  std::vector<std::size_t> per_source(spec.sources, spec.core);
  if (spec.sources > 1) {
    for (std::size_t s = 0; s + 1 < spec.sources; ++s)
      for (std::size_t i = 0; i < spec.pairwise_overlap; ++i)
        new_molecule({s, s + 1}, false);
    for (std::size_t s = 0; s + 1 < spec.sources; ++s) {
      per_source[s] += spec.pairwise_overlap;
      per_source[s + 1] += spec.pairwise_overlap;
    }
  }
  std::vector<std::vector<std::size_t>> unique(spec.sources);
  for (std::size_t s = 0; s < spec.sources; ++s)
    for (std::size_t i = per_source[s]; i < spec.records_per_source; ++i) {
      unique[s].push_back(mols.size());
      new_molecule({s}, false);
    }

  // Identifiers. Molfiles are built here so the formula reflects the final
  // (normalized) latent counts.
  std::vector<sdf::MolGraph> graphs;
  graphs.reserve(mols.size());
  for (auto &m : mols) {
    graphs.push_back(build_molecule(m.latent));
    m.inchi = "InChI=1S/" + hill_formula(graphs.back()) + "/c1-" +
              std::to_string(m.latent.chain) + "," + std::to_string(m.latent.rings) +
              "/s" + std::to_string(m.serial);
    m.inchikey = pseudo_inchikey(m.inchi);
    if (m.core)
      manifest.core_identifiers.insert(m.inchi);
  }

  // Collision plants: members come from the unique pools, round-robin over
  // sources, and share the first member's key.
  std::vector<std::size_t> cursor(spec.sources, 0);
  for (std::size_t g = 0; g < spec.collision_groups; ++g) {
    std::vector<std::size_t> members;
    for (std::size_t k = 0, s = g % spec.sources; members.size() < spec.collision_group_size;
         s = (s + 1) % spec.sources, ++k) {
      if (cursor[s] < unique[s].size())
        members.push_back(unique[s][cursor[s]++]);
      if (k > spec.collision_group_size * spec.sources * 4)
        throw Error("corpus: cannot place collision members");
    }
    std::string key = mols[members.front()].inchikey;
    std::vector<std::string> inchis;
    for (auto idx : members) {
      mols[idx].inchikey = key;
      mols[idx].collision_group = static_cast<int>(g);
      inchis.push_back(mols[idx].inchi);
    }
    std::sort(inchis.begin(), inchis.end());
    manifest.collisions.emplace_back(key, std::move(inchis));
  }

  std::vector<std::vector<std::size_t>> contents(spec.sources);
  for (const auto &m : mols)
    for (auto s : m.sources)
      contents[s].push_back(m.serial);
  for (std::size_t s = 0; s < spec.sources; ++s) {
    Rng order_rng(derive_seed(spec.seed, 1000 + s));
    order_rng.shuffle(contents[s]);
    fs::path path = out_dir / ("source_" + std::to_string(s) + ".sdf");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot create " + path.string());
    for (auto serial : contents[s]) {
      const auto &m = mols[serial];
      std::vector<sdf::PropertyField> props;
      props.push_back({spec.id_tag, std::to_string(m.serial)});
      props.push_back({spec.inchi_tag, m.inchi});
      props.push_back({spec.inchikey_tag, m.inchikey});
      if (m.has_target)
        props.push_back({spec.target_tag, descriptors::format_real(m.target)});
      props.push_back({spec.smiles_tag, smiles_for(m.latent)});
      out << sdf::format_record(graphs[serial], props, "SYN" + std::to_string(m.serial));
    }
    if (!out)
      throw IoError("failed writing " + path.string());
    manifest.files.push_back(path);
    manifest.records_per_file.push_back(contents[s].size());
  }

  std::ofstream truth(out_dir / "ground_truth.tsv", std::ios::binary | std::ios::trunc);
  if (!truth)
    throw IoError("cannot create ground truth manifest");
  write_ground_truth(manifest, truth);
  return manifest;
}

namespace {
constexpr std::string_view kTruthHeader =
    "serial\tinchi\tinchikey\tsources\tcore\tcollision_group\tchain\trings\t"
    "hydroxyls\tamines\tcarbonyls\tethers\tmean\tsd\teps\ttarget\thas_target";
}

void write_ground_truth(const CorpusManifest &manifest, std::ostream &out) {
  out << kTruthHeader << '\n';
  for (const auto &m : manifest.molecules) {
    std::string sources;
    for (auto s : m.sources)
      sources += (sources.empty() ? "" : ",") + std::to_string(s);
    const auto &l = m.latent;
    out << m.serial << '\t' << m.inchi << '\t' << m.inchikey << '\t' << sources << '\t'
        << (m.core ? 1 : 0) << '\t' << m.collision_group << '\t' << l.chain << '\t' << l.rings
        << '\t' << l.hydroxyls << '\t' << l.amines << '\t' << l.carbonyls << '\t' << l.ethers
        << '\t' << real17(m.mean) << '\t' << real17(m.sd) << '\t' << real17(m.eps) << '\t'
        << real17(m.target) << '\t' << (m.has_target ? 1 : 0) << '\n';
  }
}

std::vector<MoleculeTruth> read_ground_truth(std::istream &in) {
  std::string line;
  if (!std::getline(in, line) || detail::rtrim(line) != kTruthHeader)
    throw ParseError("ground truth: unexpected header", 1);
  std::vector<MoleculeTruth> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty())
      continue;
    auto f = detail::split(detail::rtrim(line), '\t');
    if (f.size() != 17)
      throw ParseError("ground truth: expected 17 fields", line_no);
    auto integer = [&](std::string_view s) {
      int v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError("ground truth: invalid integer", line_no);
      return v;
    };
    auto real = [&](std::string_view s) {
      auto v = detail::parse_double(s);
      if (!v)
        throw ParseError("ground truth: invalid number", line_no);
      return *v;
    };
    MoleculeTruth m;
    m.serial = static_cast<std::uint64_t>(integer(f[0]));
    m.inchi = std::string(f[1]);
    m.inchikey = std::string(f[2]);
    for (auto s : detail::split(f[3], ','))
      m.sources.push_back(static_cast<std::size_t>(integer(s)));
    m.core = integer(f[4]) != 0;
    m.collision_group = integer(f[5]);
    m.latent = {integer(f[6]), integer(f[7]), integer(f[8]),
                integer(f[9]), integer(f[10]), integer(f[11])};
    m.mean = real(f[12]);
    m.sd = real(f[13]);
    m.eps = real(f[14]);
    m.target = real(f[15]);
    m.has_target = integer(f[16]) != 0;
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------

models::Dataset heteroskedastic_regression(std::size_t n, std::uint64_t seed,
                                           double noise_base) {
  Rng rng(seed);
  models::Dataset d;
  d.feature_names = {"x1", "x2", "x3", "x4", "x5", "x6", "x7"};
  d.x.resize(static_cast<Eigen::Index>(n), 7);
  d.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    auto r = static_cast<Eigen::Index>(i);
    double x1 = rng.uniform(0, 2), x2 = rng.uniform(), x3 = rng.uniform();
    double x4 = rng.uniform(-1, 1), x5 = rng.uniform(-1, 1);
    double x6 = rng.normal(), x7 = rng.normal();
    double l = x4 - x5;
    double mean = 0.8 * std::exp(x1) + (x2 > 0.8 ? 3.0 : 0.0) + (x3 < 0.15 ? 2.5 : 0.0) + l +
                  1.5 * std::tanh(2 * x6);
    d.x.row(r) << x1, x2, x3, x4, x5, x6, x7;
    d.y(r) = mean + noise_base * (1 + 1.5 * std::abs(l)) * rng.normal();
    d.row_ids.push_back("r" + std::to_string(i + 1));
  }
  return d;
}

models::Dataset suppression_regression(std::size_t n, std::uint64_t seed, double rho,
                                       double beta1, double beta2, double sd) {
  if (!(rho > -1 && rho < 1))
    throw Error("suppression generator: rho must lie in (-1, 1)");
  Rng rng(seed);
  models::Dataset d;
  d.feature_names = {"x1", "x2", "x3", "x4", "x5"};
  d.x.resize(static_cast<Eigen::Index>(n), 5);
  d.y.resize(static_cast<Eigen::Index>(n));
  const double tail = std::sqrt(1 - rho * rho);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = static_cast<Eigen::Index>(i);
    double z1 = rng.normal(), z2 = rng.normal();
    double x1 = z1, x2 = rho * z1 + tail * z2;
    double x3 = rng.normal(), x4 = rng.normal(), x5 = rng.normal();
    d.x.row(r) << x1, x2, x3, x4, x5;
    d.y(r) = beta1 * x1 + beta2 * x2 + 0.6 * x3 + sd * rng.normal();
    d.row_ids.push_back("r" + std::to_string(i + 1));
  }
  return d;
}

} // namespace sdforge::synth
