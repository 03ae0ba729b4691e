#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <sstream>

#include "sdforge/descriptors.hpp"
#include "sdforge/error.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/synth.hpp"
#include "test_support.hpp"

using namespace sdforge;
using namespace sdforge::descriptors;
using testing_support::ethanol_block;
using testing_support::TempDir;

namespace {

MolGraph graph(std::vector<std::string> elements, std::vector<sdf::Bond> bonds) {
  MolGraph g;
  for (auto &e : elements)
    g.atoms.push_back({e, 0});
  g.bonds = std::move(bonds);
  return g;
}

MolGraph chain(int carbons) {
  MolGraph g = graph(std::vector<std::string>(carbons, "C"), {});
  for (int i = 1; i < carbons; ++i)
    g.bonds.push_back({std::size_t(i - 1), std::size_t(i), 1});
  return g;
}

// Kekule benzene on atoms [first, first + 6).
void add_benzene(MolGraph &g) {
  std::size_t first = g.atoms.size();
  for (int i = 0; i < 6; ++i)
    g.atoms.push_back({"C", 0});
  for (std::size_t i = 0; i < 6; ++i)
    g.bonds.push_back({first + i, first + (i + 1) % 6, i % 2 == 0 ? 2 : 1});
}

std::size_t components(const MolGraph &g) {
  std::vector<std::size_t> parent(g.atoms.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x)
      x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto &b : g.bonds)
    parent[find(b.a)] = find(b.b);
  std::size_t n = 0;
  for (std::size_t i = 0; i < parent.size(); ++i)
    n += find(i) == i;
  return n;
}

} // namespace

// Expected weights are hand sums of the standard atomic weights
// (C 12.011, H 1.008, N 14.007, O 15.999).

TEST(Descriptors, Ethanol) {
  auto v = compute_descriptors(graph({"C", "C", "O"}, {{0, 1, 1}, {1, 2, 1}}));
  EXPECT_NEAR(v.molwt, 46.069, 1e-9);
  EXPECT_NEAR(v.tpsa, 20.23, 1e-12);
  EXPECT_EQ(v.num_h_donors, 1);
  EXPECT_EQ(v.num_h_acceptors, 1);
  EXPECT_EQ(v.num_rotatable_bonds, 0);
  EXPECT_EQ(v.num_aromatic_rings, 0);
  EXPECT_DOUBLE_EQ(v.fraction_csp3, 1.0);
  EXPECT_EQ(v.heavy_atom_count, 3);
}

TEST(Descriptors, MethaneAndButane) {
  auto m = compute_descriptors(chain(1));
  EXPECT_NEAR(m.molwt, 16.043, 1e-9);
  EXPECT_EQ(m.heavy_atom_count, 1);
  auto b = compute_descriptors(chain(4));
  EXPECT_NEAR(b.molwt, 4 * 12.011 + 10 * 1.008, 1e-9);
  EXPECT_EQ(b.num_rotatable_bonds, 1);
  EXPECT_EQ(b.tpsa, 0);
}

TEST(Descriptors, Benzene) {
  MolGraph g;
  add_benzene(g);
  auto v = compute_descriptors(g);
  EXPECT_NEAR(v.molwt, 78.114, 1e-9);
  EXPECT_EQ(v.num_aromatic_rings, 1);
  EXPECT_EQ(v.fraction_csp3, 0);
  EXPECT_EQ(perceive_rings(g).size(), 1u);
}

TEST(Descriptors, AromaticFlaggedBenzeneMatchesKekule) {
  MolGraph g = graph(std::vector<std::string>(6, "C"), {});
  for (std::size_t i = 0; i < 6; ++i)
    g.bonds.push_back({i, (i + 1) % 6, 4});
  auto v = compute_descriptors(g);
  EXPECT_NEAR(v.molwt, 78.114, 1e-9);
  EXPECT_EQ(v.num_aromatic_rings, 1);
}

TEST(Descriptors, Naphthalene) {
  // Kekule form with the fusion bond double: both rings alternate.
  MolGraph g = graph(std::vector<std::string>(10, "C"),
                     {{3, 4, 2}, {4, 5, 1}, {5, 0, 2}, {0, 1, 1}, {1, 2, 2}, {2, 3, 1},
                      {4, 6, 1}, {6, 7, 2}, {7, 8, 1}, {8, 9, 2}, {9, 3, 1}});
  auto v = compute_descriptors(g);
  EXPECT_NEAR(v.molwt, 10 * 12.011 + 8 * 1.008, 1e-9);
  EXPECT_EQ(perceive_rings(g).size(), 2u);
  EXPECT_EQ(v.num_aromatic_rings, 2);
  EXPECT_EQ(v.num_rotatable_bonds, 0);
}

TEST(Descriptors, AceticAcid) {
  auto v = compute_descriptors(graph({"C", "C", "O", "O"}, {{0, 1, 1}, {1, 2, 2}, {1, 3, 1}}));
  EXPECT_NEAR(v.molwt, 60.052, 1e-9);
  EXPECT_NEAR(v.tpsa, 17.07 + 20.23, 1e-12);
  EXPECT_EQ(v.num_h_donors, 1);
  EXPECT_EQ(v.num_h_acceptors, 2);
  EXPECT_DOUBLE_EQ(v.fraction_csp3, 0.5);
}

TEST(Descriptors, AmineAndCharges) {
  // Methylamine and tetramethylammonium.
  auto a = compute_descriptors(graph({"C", "N"}, {{0, 1, 1}}));
  EXPECT_NEAR(a.tpsa, 26.02, 1e-12);
  EXPECT_EQ(a.num_h_donors, 1);
  MolGraph q = graph({"N", "C", "C", "C", "C"}, {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}, {0, 4, 1}});
  q.atoms[0].charge = 1;
  EXPECT_EQ(implicit_hydrogens(q, 0), 0);
  auto v = compute_descriptors(q);
  EXPECT_EQ(v.tpsa, 0);
  EXPECT_EQ(v.num_h_donors, 0);
}

TEST(Descriptors, UnknownElementWarns) {
  std::vector<std::string> warnings;
  auto v = compute_descriptors(graph({"C", "Xe"}, {{0, 1, 1}}), TpsaTable::builtin(), &warnings);
  EXPECT_FALSE(warnings.empty());
  EXPECT_EQ(v.heavy_atom_count, 2);
}

TEST(Rings, CountEqualsCyclomaticNumber) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 3 + rng.below(14);
    MolGraph g = graph(std::vector<std::string>(n, "C"), {});
    std::set<std::pair<std::size_t, std::size_t>> seen;
    std::size_t edges = rng.below(2 * n);
    for (std::size_t e = 0; e < edges; ++e) {
      std::size_t a = rng.below(n), b = rng.below(n);
      if (a == b)
        continue;
      if (!seen.insert({std::min(a, b), std::max(a, b)}).second)
        continue;
      g.bonds.push_back({a, b, 1});
    }
    auto rings = perceive_rings(g);
    ASSERT_EQ(rings.size() + n, g.bonds.size() + components(g)) << "trial " << trial;
    for (const auto &ring : rings) {
      ASSERT_GE(ring.size(), 3u);
      // Consecutive ring atoms must be bonded.
      for (std::size_t i = 0; i < ring.size(); ++i) {
        auto x = ring[i], y = ring[(i + 1) % ring.size()];
        ASSERT_TRUE(seen.count({std::min(x, y), std::max(x, y)}));
      }
    }
  }
}

TEST(Rings, FusedSystemsUseSmallestRings) {
  MolGraph g;
  add_benzene(g);
  add_benzene(g);
  g.bonds.push_back({0, 6, 1});  // biphenyl
  auto rings = perceive_rings(g);
  ASSERT_EQ(rings.size(), 2u);
  for (const auto &r : rings)
    EXPECT_EQ(r.size(), 6u);
  EXPECT_EQ(compute_descriptors(g).num_aromatic_rings, 2);
  EXPECT_EQ(compute_descriptors(g).num_rotatable_bonds, 1);
}

TEST(Lipinski, InclusiveBoundaries) {
  EXPECT_TRUE(lipinski_check(500, 5, 5, 10).compliant);
  EXPECT_FALSE(lipinski_check(500.0001, 5, 5, 10).compliant);
  EXPECT_FALSE(lipinski_check(500, 5.0001, 5, 10).compliant);
  EXPECT_FALSE(lipinski_check(500, 5, 6, 10).compliant);
  auto v = lipinski_check(100, 1, 1, 11);
  EXPECT_FALSE(v.compliant);
  EXPECT_TRUE(v.passes_molwt && v.passes_logp && v.passes_donors);
  EXPECT_FALSE(v.passes_acceptors);
}

TEST(Formatting, RealsAndCsvFields) {
  EXPECT_EQ(format_real(46.069), "46.069");
  EXPECT_EQ(format_real(1.0), "1");
  EXPECT_EQ(format_real(-0.0000001), "0");
  EXPECT_EQ(format_real(0.1234567), "0.123457");
  EXPECT_EQ(format_real(-2.5), "-2.5");
  EXPECT_EQ(csv_field("CCO"), "CCO");
  EXPECT_EQ(csv_field("InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3"), "\"InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3\"");
  EXPECT_EQ(csv_field("a\"b"), "\"a\"\"b\"");
}

TEST(Transform, RowAndExclusions) {
  TransformOptions opts;
  auto ok = process_block(ethanol_block("x"), opts);
  ASSERT_TRUE(ok.row);
  EXPECT_EQ(ok.row->smiles, "CCO");
  EXPECT_DOUBLE_EQ(ok.row->logp_target, -0.1);
  auto missing = process_block(ethanol_block("x", false), opts);
  EXPECT_FALSE(missing.row);
  EXPECT_EQ(missing.exclusion_reason, "missing target");
}

TEST(Transform, OutputIndependentOfWorkers) {
  TempDir dir;
  synth::CorpusSpec spec;
  spec.sources = 2;
  spec.records_per_source = 300;
  spec.core = 50;
  spec.pairwise_overlap = 10;
  spec.collision_groups = 0;
  spec.missing_target_rate = 0.05;
  spec.seed = 8;
  auto m = synth::generate_corpus(spec, dir.path());
  std::string reference;
  TransformReport first;
  for (std::size_t w : {1u, 3u, 8u}) {
    TransformOptions opts;
    opts.workers = w;
    std::ifstream in(m.files[0], std::ios::binary);
    std::ostringstream out;
    auto r = transform_dataset(in, out, opts);
    EXPECT_EQ(r.rows + r.excluded, r.records);
    if (reference.empty()) {
      reference = out.str();
      first = r;
    }
    EXPECT_EQ(out.str(), reference) << "workers " << w;
    EXPECT_EQ(r.exclusion_reasons, first.exclusion_reasons);
  }
  EXPECT_EQ(reference.substr(0, kDatasetHeader.size()), kDatasetHeader);
  EXPECT_GT(first.excluded, 0u);
}

TEST(Tpsa, ShippedTableMatchesBuiltin) {
  auto t = TpsaTable::load(std::filesystem::path(SDFORGE_SOURCE_DIR) / "data/tpsa_contributions.tsv");
  EXPECT_EQ(t.size(), TpsaTable::builtin().size());
  PolarEnvironment hydroxyl{"O", 0, 1, "1", false};
  EXPECT_EQ(t.find(hydroxyl), TpsaTable::builtin().find(hydroxyl));
}

TEST(Tpsa, ParseErrors) {
  std::istringstream few("O\t0\t1\t1\t0\n");
  EXPECT_THROW(TpsaTable::parse(few), ParseError);
  std::istringstream neg("O\t0\t1\t1\t0\t-3\n");
  EXPECT_THROW(TpsaTable::parse(neg), ParseError);
  std::istringstream ok("# comment\nO\t0\t1\t1\t0\t99\n");
  auto t = TpsaTable::parse(ok);
  EXPECT_EQ(*t.find({"O", 0, 1, "1", false}), 99);
}
