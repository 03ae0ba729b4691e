#include "sdforge/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <queue>
#include <thread>

#include "sdforge/error.hpp"
#include "strings.hpp"

namespace sdforge::descriptors {

namespace {

bool is_hydrogen(std::string_view element) {
  return element == "H" || element == "D" || element == "T";
}

double bond_valence(int order) { return order == 4 ? 1.5 : order; }

std::vector<std::vector<std::pair<std::size_t, std::size_t>>>
adjacency(const MolGraph &graph) {
  // neighbour atom, bond index
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(
      graph.atoms.size());
  for (std::size_t i = 0; i < graph.bonds.size(); ++i) {
    const auto &b = graph.bonds[i];
    adj[b.a].emplace_back(b.b, i);
    adj[b.b].emplace_back(b.a, i);
  }
  return adj;
}

std::size_t count_components(std::size_t n,
                             const std::vector<std::vector<std::pair<std::size_t, std::size_t>>> &adj) {
  std::vector<bool> seen(n, false);
  std::size_t components = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (seen[s])
      continue;
    ++components;
    seen[s] = true;
    stack.push_back(s);
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto [w, e] : adj[v])
        if (!seen[w]) {
          seen[w] = true;
          stack.push_back(w);
        }
    }
  }
  return components;
}

using EdgeSet = std::vector<std::uint64_t>;

void set_bit(EdgeSet &bits, std::size_t i) { bits[i / 64] |= 1ULL << (i % 64); }

bool any_bit(const EdgeSet &bits) {
  return std::any_of(bits.begin(), bits.end(), [](auto w) { return w != 0; });
}

std::size_t lowest_bit(const EdgeSet &bits) {
  for (std::size_t w = 0; w < bits.size(); ++w)
    if (bits[w])
      return w * 64 + static_cast<std::size_t>(__builtin_ctzll(bits[w]));
  return bits.size() * 64;
}

bool test_bit(const EdgeSet &bits, std::size_t i) {
  return (bits[i / 64] >> (i % 64)) & 1ULL;
}

struct Candidate {
  Ring atoms;
  EdgeSet edges;
};

} // namespace

int default_valence(std::string_view element, int charge) {
  int base = -1;
  if (element == "C")
    base = 4;
  else if (element == "N" || element == "P")
    base = 3;
  else if (element == "O" || element == "S")
    base = 2;
  else if (element == "F" || element == "Cl" || element == "Br" ||
           element == "I" || is_hydrogen(element))
    base = 1;
  if (base < 0)
    return -1;
  // Pnictogens and chalcogens gain a bond per positive charge (N+ -> 4) and
  // lose one per negative charge (O- -> 1); other elements lose one per unit
  // of charge either way.
  bool shifts_with_charge = element == "N" || element == "P" || element == "O" ||
                            element == "S";
  int valence = shifts_with_charge ? base + charge : base - std::abs(charge);
  return std::max(valence, 0);
}

int implicit_hydrogens(const MolGraph &graph, std::size_t atom) {
  const auto &a = graph.atoms.at(atom);
  if (is_hydrogen(a.element))
    return 0;
  int valence = default_valence(a.element, a.charge);
  if (valence < 0)
    return 0;
  double used = 0;
  for (const auto &b : graph.bonds)
    if (b.a == atom || b.b == atom)
      used += bond_valence(b.order);
  return std::max(0, static_cast<int>(std::floor(valence - used + 1e-9)));
}

std::vector<Ring> perceive_rings(const MolGraph &graph) {
  const std::size_t n = graph.atoms.size();
  const std::size_t m = graph.bonds.size();
  auto adj = adjacency(graph);
  const std::size_t cyclomatic = m + count_components(n, adj) - n;
  if (cyclomatic == 0)
    return {};

  const std::size_t words = (m + 63) / 64;
  std::vector<Candidate> candidates;
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  // Horton candidates: for each root v and edge (x, y), the cycle formed by
  // the shortest paths v->x and v->y plus the edge, when the paths meet only
  // at v.
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::size_t> parent(n, kNone), parent_edge(n, kNone), dist(n, kNone);
    std::deque<std::size_t> queue{v};
    dist[v] = 0;
    while (!queue.empty()) {
      auto u = queue.front();
      queue.pop_front();
      for (auto [w, e] : adj[u])
        if (dist[w] == kNone) {
          dist[w] = dist[u] + 1;
          parent[w] = u;
          parent_edge[w] = e;
          queue.push_back(w);
        }
    }
    auto path_to_root = [&](std::size_t x) {
      std::vector<std::size_t> path;
      for (; x != v; x = parent[x])
        path.push_back(x);
      path.push_back(v);
      return path;  // x ... v
    };
    for (std::size_t e = 0; e < m; ++e) {
      auto x = graph.bonds[e].a, y = graph.bonds[e].b;
      if (dist[x] == kNone || parent_edge[x] == e || parent_edge[y] == e)
        continue;
      auto px = path_to_root(x);
      auto py = path_to_root(y);
      std::vector<std::size_t> sx(px.begin(), px.end() - 1), sy(py.begin(), py.end() - 1);
      std::sort(sx.begin(), sx.end());
      std::sort(sy.begin(), sy.end());
      std::vector<std::size_t> common;
      std::set_intersection(sx.begin(), sx.end(), sy.begin(), sy.end(),
                            std::back_inserter(common));
      if (!common.empty() || px.size() + py.size() - 1 < 3)
        continue;
      Candidate c;
      c.edges.assign(words, 0);
      // v ... x, then y ... (towards v, excluding v)
      c.atoms.assign(px.rbegin(), px.rend());
      c.atoms.insert(c.atoms.end(), py.begin(), py.end() - 1);
      for (auto a = x; a != v; a = parent[a])
        set_bit(c.edges, parent_edge[a]);
      for (auto a = y; a != v; a = parent[a])
        set_bit(c.edges, parent_edge[a]);
      set_bit(c.edges, e);
      candidates.push_back(std::move(c));
    }
  }

  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate &a, const Candidate &b) {
              if (a.atoms.size() != b.atoms.size())
                return a.atoms.size() < b.atoms.size();
              return a.edges < b.edges;
            });
  candidates.erase(std::unique(candidates.begin(), candidates.end(),
                               [](const Candidate &a, const Candidate &b) {
                                 return a.edges == b.edges;
                               }),
                   candidates.end());

  // Greedy selection of linearly independent cycles over GF(2).
  std::vector<std::pair<std::size_t, EdgeSet>> basis;  // pivot, reduced row
  std::vector<Ring> rings;
  for (auto &c : candidates) {
    EdgeSet reduced = c.edges;
    for (const auto &[pivot, row] : basis)
      if (test_bit(reduced, pivot))
        for (std::size_t w = 0; w < words; ++w)
          reduced[w] ^= row[w];
    if (!any_bit(reduced))
      continue;
    basis.emplace_back(lowest_bit(reduced), std::move(reduced));
    rings.push_back(std::move(c.atoms));
    if (rings.size() == cyclomatic)
      break;
  }
  return rings;
}

bool is_aromatic_ring(const MolGraph &graph, const Ring &ring) {
  const std::size_t k = ring.size();
  std::vector<int> orders;
  orders.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto a = ring[i], b = ring[(i + 1) % k];
    auto it = std::find_if(graph.bonds.begin(), graph.bonds.end(), [&](const auto &bond) {
      return (bond.a == a && bond.b == b) || (bond.a == b && bond.b == a);
    });
    if (it == graph.bonds.end())
      return false;
    orders.push_back(it->order);
  }
  if (std::all_of(orders.begin(), orders.end(), [](int o) { return o == 4; }))
    return true;
  if (k % 2 != 0)
    return false;
  for (auto atom : ring) {
    const auto &el = graph.atoms[atom].element;
    if (el != "C" && el != "N")
      return false;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (orders[i] != 1 && orders[i] != 2)
      return false;
    if (orders[i] == orders[(i + 1) % k])
      return false;
  }
  return true;
}

int perceive_aromatic_rings(const MolGraph &graph,
                            const std::vector<Ring> &rings) {
  return static_cast<int>(std::count_if(rings.begin(), rings.end(), [&](const Ring &r) {
    return is_aromatic_ring(graph, r);
  }));
}

// ---------------------------------------------------------------------------
// TPSA

PolarEnvironment polar_environment(const MolGraph &graph, std::size_t atom) {
  PolarEnvironment env;
  env.element = graph.atoms.at(atom).element;
  env.charge = graph.atoms[atom].charge;
  env.hydrogens = implicit_hydrogens(graph, atom);
  std::vector<int> orders;
  for (const auto &b : graph.bonds) {
    if (b.a != atom && b.b != atom)
      continue;
    auto other = b.a == atom ? b.b : b.a;
    if (b.order == 4)
      env.aromatic = true;
    if (is_hydrogen(graph.atoms[other].element))
      ++env.hydrogens;
    else
      orders.push_back(b.order);
  }
  std::sort(orders.begin(), orders.end());
  for (std::size_t i = 0; i < orders.size(); ++i) {
    if (i)
      env.bond_orders += ',';
    env.bond_orders += std::to_string(orders[i]);
  }
  return env;
}

void TpsaTable::set(PolarEnvironment env, double contribution) {
  if (!(contribution >= 0))
    throw Error("TPSA contributions must be non-negative");
  table_[std::move(env)] = contribution;
}

std::optional<double> TpsaTable::find(const PolarEnvironment &env) const {
  auto it = table_.find(env);
  if (it == table_.end())
    return std::nullopt;
  return it->second;
}

const TpsaTable &TpsaTable::builtin() {
  static const TpsaTable table = [] {
    struct Row {
      const char *element;
      int charge, hydrogens;
      const char *orders;
      bool aromatic;
      double value;
    };
    // Fragment contributions of Ertl, Rohde & Selzer (2000).
    static const Row rows[] = {
        {"N", 0, 0, "1,1,1", false, 3.24},  {"N", 0, 0, "1,2", false, 12.36},
        {"N", 0, 0, "3", false, 23.79},     {"N", 0, 0, "1,2,2", false, 11.68},
        {"N", 0, 0, "2,3", false, 13.60},   {"N", 0, 1, "1,1", false, 12.03},
        {"N", 0, 1, "2", false, 23.85},     {"N", 0, 2, "1", false, 26.02},
        {"N", 1, 0, "1,1,1,1", false, 0.00}, {"N", 1, 0, "1,1,2", false, 3.01},
        {"N", 1, 0, "1,3", false, 4.36},    {"N", 1, 1, "1,1,1", false, 4.44},
        {"N", 1, 1, "1,2", false, 13.97},   {"N", 1, 2, "1,1", false, 16.61},
        {"N", 1, 2, "2", false, 25.59},     {"N", 1, 3, "1", false, 27.64},
        {"N", 0, 0, "4,4", true, 12.89},    {"N", 0, 0, "4,4,4", true, 4.41},
        {"N", 0, 0, "1,4,4", true, 4.93},   {"N", 0, 0, "2,4,4", true, 8.39},
        {"N", 0, 1, "4,4", true, 15.79},    {"N", 1, 0, "4,4,4", true, 4.10},
        {"N", 1, 0, "1,4,4", true, 3.88},   {"N", 1, 1, "4,4", true, 14.14},
        {"O", 0, 0, "1,1", false, 9.23},    {"O", 0, 0, "2", false, 17.07},
        {"O", 0, 1, "1", false, 20.23},     {"O", -1, 0, "1", false, 23.06},
        {"O", 0, 0, "4,4", true, 13.14},
    };
    TpsaTable t;
    for (const auto &r : rows)
      t.set({r.element, r.charge, r.hydrogens, r.orders, r.aromatic}, r.value);
    return t;
  }();
  return table;
}

TpsaTable TpsaTable::parse(std::istream &in) {
  TpsaTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = detail::rtrim(line);
    if (text.empty() || text.front() == '#')
      continue;
    auto f = detail::split(text, '\t');
    if (f.size() != 6)
      throw ParseError("TPSA table needs 6 tab-separated fields", line_no);
    int charge = 0, hydrogens = 0;
    auto c = detail::parse_double(f[1]);
    auto h = detail::parse_double(f[2]);
    auto v = detail::parse_double(f[5]);
    if (!c || !h || !v || (f[4] != "0" && f[4] != "1"))
      throw ParseError("malformed TPSA table line", line_no);
    charge = static_cast<int>(*c);
    hydrogens = static_cast<int>(*h);
    if (*v < 0)
      throw ParseError("negative TPSA contribution", line_no);
    table.set({std::string(f[0]), charge, hydrogens, std::string(f[3]), f[4] == "1"},
              *v);
  }
  return table;
}

TpsaTable TpsaTable::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  return parse(in);
}

// ---------------------------------------------------------------------------

std::optional<double> atomic_weight(std::string_view element) {
  static const std::map<std::string, double, std::less<>> weights = {
      {"C", 12.011}, {"H", 1.008},   {"N", 14.007},  {"O", 15.999},
      {"S", 32.06},  {"P", 30.974},  {"F", 18.998},  {"Cl", 35.45},
      {"Br", 79.904}, {"I", 126.904},
  };
  auto it = weights.find(element);
  if (it == weights.end())
    return std::nullopt;
  return it->second;
}

DescriptorValues compute_descriptors(const MolGraph &graph,
                                     const TpsaTable &tpsa,
                                     std::vector<std::string> *warnings) {
  auto warn = [&](std::string msg) {
    if (warnings)
      warnings->push_back(std::move(msg));
  };
  const std::size_t n = graph.atoms.size();
  auto adj = adjacency(graph);
  auto rings = perceive_rings(graph);

  std::vector<bool> ring_bond(graph.bonds.size(), false);
  for (const auto &ring : rings)
    for (std::size_t i = 0; i < ring.size(); ++i) {
      auto a = ring[i], b = ring[(i + 1) % ring.size()];
      for (auto [w, e] : adj[a])
        if (w == b)
          ring_bond[e] = true;
    }

  std::vector<int> heavy_degree(n, 0);
  std::vector<int> attached_h(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (auto [w, e] : adj[i]) {
      if (is_hydrogen(graph.atoms[w].element))
        ++attached_h[i];
      else
        ++heavy_degree[i];
    }

  DescriptorValues out;
  int carbons = 0, sp3_carbons = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto &atom = graph.atoms[i];
    auto weight = atomic_weight(is_hydrogen(atom.element) ? "H" : atom.element);
    if (!weight)
      warn("unknown element '" + atom.element + "' contributes no weight");
    if (default_valence(atom.element, atom.charge) < 0)
      warn("unknown element '" + atom.element + "' given 0 implicit H");
    int implicit = implicit_hydrogens(graph, i);
    out.molwt += weight.value_or(0.0) + 1.008 * implicit;
    if (is_hydrogen(atom.element))
      continue;
    ++out.heavy_atom_count;

    if (atom.element == "N" || atom.element == "O") {
      ++out.num_h_acceptors;
      if (implicit + attached_h[i] > 0)
        ++out.num_h_donors;
      auto env = polar_environment(graph, i);
      if (auto c = tpsa.find(env))
        out.tpsa += *c;
      else
        warn("no TPSA contribution for " + env.element + " charge " +
             std::to_string(env.charge) + " H" + std::to_string(env.hydrogens) +
             " bonds [" + env.bond_orders + "]" + (env.aromatic ? " aromatic" : ""));
    }
    if (atom.element == "C") {
      ++carbons;
      bool saturated = std::all_of(adj[i].begin(), adj[i].end(), [&](auto nb) {
        return graph.bonds[nb.second].order == 1;
      });
      if (saturated)
        ++sp3_carbons;
    }
  }

  for (std::size_t e = 0; e < graph.bonds.size(); ++e) {
    const auto &b = graph.bonds[e];
    if (b.order == 1 && !ring_bond[e] && heavy_degree[b.a] >= 2 &&
        heavy_degree[b.b] >= 2 && !is_hydrogen(graph.atoms[b.a].element) &&
        !is_hydrogen(graph.atoms[b.b].element))
      ++out.num_rotatable_bonds;
  }
  out.num_aromatic_rings = perceive_aromatic_rings(graph, rings);
  out.fraction_csp3 = carbons ? static_cast<double>(sp3_carbons) / carbons : 0.0;
  return out;
}

LipinskiVerdict lipinski_check(double molwt, double logp, double donors,
                               double acceptors) {
  LipinskiVerdict v;
  v.passes_molwt = molwt <= 500.0;
  v.passes_logp = logp <= 5.0;
  v.passes_donors = donors <= 5.0;
  v.passes_acceptors = acceptors <= 10.0;
  v.compliant = v.passes_molwt && v.passes_logp && v.passes_donors &&
                v.passes_acceptors;
  return v;
}

// ---------------------------------------------------------------------------
// Dataset rows

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", value);
  std::string s(buf);
  auto dot = s.find('.');
  if (dot != std::string::npos) {
    while (s.back() == '0')
      s.pop_back();
    if (s.back() == '.')
      s.pop_back();
  }
  if (s == "-0")
    s = "0";
  return s;
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos)
    return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"')
      out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_row(const DescriptorRow &row) {
  const auto &v = row.values;
  std::string out;
  out += csv_field(row.inchikey);
  out += ',';
  out += csv_field(row.smiles);
  out += ',';
  out += csv_field(row.original_inchi);
  for (const auto &field :
       {format_real(row.logp_target), format_real(v.molwt), format_real(v.tpsa),
        std::to_string(v.num_h_donors), std::to_string(v.num_h_acceptors),
        std::to_string(v.num_rotatable_bonds),
        std::to_string(v.num_aromatic_rings), format_real(v.fraction_csp3),
        std::to_string(v.heavy_atom_count)}) {
    out += ',';
    out += field;
  }
  return out;
}

RecordOutcome process_block(std::string_view block,
                            const TransformOptions &options) {
  RecordOutcome outcome;
  std::vector<sdf::PropertyField> props;
  try {
    props = sdf::parse_properties(block);
  } catch (const ParseError &) {
    outcome.exclusion_reason = "malformed properties";
    return outcome;
  }
  auto target = sdf::get_property(props, options.target_tag);
  if (!target || detail::trim(*target).empty()) {
    outcome.exclusion_reason = "missing target";
    return outcome;
  }
  auto logp = detail::parse_double(*target);
  if (!logp) {
    outcome.exclusion_reason = "unparseable target";
    return outcome;
  }
  sdf::MolGraph graph;
  try {
    graph = sdf::parse_molfile(block);
  } catch (const UnsupportedFormat &) {
    outcome.exclusion_reason = "unsupported molfile version";
    return outcome;
  } catch (const ParseError &) {
    outcome.exclusion_reason = "malformed connection table";
    return outcome;
  }
  std::vector<std::string> warnings;
  auto values = compute_descriptors(
      graph, options.tpsa ? *options.tpsa : TpsaTable::builtin(), &warnings);
  outcome.warnings = warnings.size();
  if (values.heavy_atom_count < 1 || !(values.molwt > 0)) {
    outcome.exclusion_reason = "no heavy atoms";
    return outcome;
  }
  auto text = [&](const std::string &tag) {
    auto v = sdf::get_property(props, tag);
    return v ? std::string(detail::trim(*v)) : std::string();
  };
  outcome.row = DescriptorRow{text(options.inchikey_tag), text(options.smiles_tag),
                              text(options.inchi_tag), *logp, values};
  return outcome;
}

namespace {

void tally(TransformReport &report, const RecordOutcome &outcome,
           std::ostream &out) {
  ++report.records;
  report.warnings += outcome.warnings;
  if (outcome.row) {
    out << format_row(*outcome.row) << '\n';
    ++report.rows;
  } else {
    ++report.excluded;
    ++report.exclusion_reasons[outcome.exclusion_reason];
  }
}

} // namespace

TransformReport transform_dataset(std::istream &in, std::ostream &out,
                                  const TransformOptions &options) {
  TransformReport report;
  out << kDatasetHeader << '\n';
  sdf::BlockReader reader(in);

  if (options.workers <= 1) {
    while (auto block = reader.next())
      tally(report, process_block(block->bytes, options), out);
  } else {
    const std::size_t max_in_flight = 64 * options.workers;
    std::mutex mu;
    std::condition_variable cv;
    std::queue<std::pair<std::uint64_t, std::string>> pending;
    std::map<std::uint64_t, RecordOutcome> done;
    std::uint64_t produced = 0, written = 0;
    bool producer_finished = false, aborted = false;
    std::exception_ptr failure;

    std::jthread producer([&] {
      try {
        for (;;) {
          auto block = reader.next();
          std::unique_lock lock(mu);
          if (!block || aborted)
            break;
          cv.wait(lock, [&] { return aborted || produced - written < max_in_flight; });
          if (aborted)
            break;
          pending.emplace(produced++, std::move(block->bytes));
          cv.notify_all();
        }
      } catch (...) {
        std::lock_guard lock(mu);
        failure = std::current_exception();
        aborted = true;
      }
      std::lock_guard lock(mu);
      producer_finished = true;
      cv.notify_all();
    });

    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < options.workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::pair<std::uint64_t, std::string> job;
          {
            std::unique_lock lock(mu);
            cv.wait(lock, [&] { return aborted || !pending.empty() || producer_finished; });
            if (aborted || pending.empty())
              return;
            job = std::move(pending.front());
            pending.pop();
          }
          RecordOutcome outcome;
          try {
            outcome = process_block(job.second, options);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!failure)
              failure = std::current_exception();
            aborted = true;
            cv.notify_all();
            return;
          }
          std::lock_guard lock(mu);
          done.emplace(job.first, std::move(outcome));
          cv.notify_all();
        }
      });

    for (;;) {
      RecordOutcome outcome;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] {
          return aborted || done.count(written) ||
                 (producer_finished && written == produced);
        });
        if (aborted || !done.count(written))
          break;
        auto node = done.extract(written);
        outcome = std::move(node.mapped());
      }
      tally(report, outcome, out);
      std::lock_guard lock(mu);
      ++written;
      cv.notify_all();
    }
    {
      std::lock_guard lock(mu);
      if (failure)
        aborted = true;
      cv.notify_all();
    }
    producer.join();
    pool.clear();
    if (failure)
      std::rethrow_exception(failure);
  }

  if (reader.malformed_tail()) {
    ++report.records;
    ++report.excluded;
    ++report.exclusion_reasons["unterminated block"];
  }
  if (!out)
    throw IoError("failed writing dataset");
  return report;
}

TransformReport transform_dataset(const std::filesystem::path &input,
                                  const std::filesystem::path &output,
                                  const TransformOptions &options) {
  std::ifstream in(input, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + input.string());
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot create " + output.string());
  return transform_dataset(in, out, options);
}

} // namespace sdforge::descriptors
