#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "sdforge/error.hpp"
#include "sdforge/sdf.hpp"
#include "sdforge/synth.hpp"
#include "test_support.hpp"

using namespace sdforge;
using testing_support::read_file;
using testing_support::TempDir;

namespace {

synth::CorpusSpec small_spec(std::uint64_t seed) {
  synth::CorpusSpec spec;
  spec.sources = 4;
  spec.records_per_source = 250;
  spec.core = 60;
  spec.pairwise_overlap = 20;
  spec.collision_groups = 2;
  spec.missing_target_rate = 0.1;
  spec.seed = seed;
  return spec;
}

} // namespace

TEST(Synth, ManifestCountsMatchFiles) {
  TempDir dir;
  auto spec = small_spec(1);
  auto m = synth::generate_corpus(spec, dir.path());
  ASSERT_EQ(m.files.size(), 4u);
  std::map<std::string, std::size_t> appearances;
  for (std::size_t s = 0; s < m.files.size(); ++s) {
    std::ifstream in(m.files[s], std::ios::binary);
    sdf::BlockReader reader(in);
    std::size_t n = 0;
    while (auto b = reader.next()) {
      auto props = sdf::parse_properties(b->bytes);
      ++appearances[*sdf::get_property(props, spec.inchi_tag)];
      ++n;
    }
    EXPECT_EQ(n, spec.records_per_source);
    EXPECT_EQ(m.records_per_file[s], n);
  }
  std::size_t core = 0;
  for (const auto &mol : m.molecules) {
    EXPECT_EQ(appearances[mol.inchi], mol.sources.size()) << mol.inchi;
    core += mol.core;
    if (mol.core) {
      EXPECT_EQ(mol.sources.size(), 4u);
    }
  }
  EXPECT_EQ(core, spec.core);
  EXPECT_EQ(m.core_identifiers.size(), spec.core);
  EXPECT_EQ(m.collisions.size(), spec.collision_groups);
  for (const auto &[key, members] : m.collisions) {
    EXPECT_EQ(members.size(), spec.collision_group_size);
    EXPECT_EQ(key.size(), 27u);
  }
}

TEST(Synth, TargetFollowsTheStatedFormula) {
  TempDir dir;
  auto spec = small_spec(2);
  auto m = synth::generate_corpus(spec, dir.path());
  std::size_t missing = 0;
  for (const auto &mol : m.molecules) {
    const auto &l = mol.latent;
    double c = l.chain, r = l.rings, h = l.hydroxyls;
    double mean = 0.2 + 0.48 * c - 0.006 * c * c + 1.7 * r - 1.05 * h - 1.15 * l.amines -
                  0.55 * l.carbonyls - 0.25 * l.ethers + 0.3 * r * h;
    double sd = spec.noise_base * (1 + spec.heteroskedasticity * std::abs(mean - 3) / 3);
    EXPECT_NEAR(mol.mean, mean, 1e-12);
    EXPECT_NEAR(mol.sd, sd, 1e-12);
    EXPECT_NEAR(mol.target, mean + sd * mol.eps, 1e-12);
    missing += !mol.has_target;
  }
  EXPECT_GT(missing, 0u);
}

TEST(Synth, GroundTruthRoundTripAndDeterminism) {
  TempDir a, b;
  auto m1 = synth::generate_corpus(small_spec(3), a.path());
  auto m2 = synth::generate_corpus(small_spec(3), b.path());
  for (std::size_t s = 0; s < m1.files.size(); ++s)
    EXPECT_EQ(read_file(m1.files[s]), read_file(m2.files[s]));
  std::ifstream in(a / "ground_truth.tsv");
  auto back = synth::read_ground_truth(in);
  ASSERT_EQ(back.size(), m1.molecules.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].inchi, m1.molecules[i].inchi);
    EXPECT_EQ(back[i].target, m1.molecules[i].target);
    EXPECT_EQ(back[i].sources, m1.molecules[i].sources);
  }
}

TEST(Synth, RecordsParseAndFormulasAgreeWithGraphs) {
  TempDir dir;
  auto m = synth::generate_corpus(small_spec(4), dir.path());
  std::ifstream in(m.files[0], std::ios::binary);
  sdf::BlockReader reader(in);
  while (auto b = reader.next()) {
    auto rec = sdf::parse_record(b->bytes, true);
    ASSERT_TRUE(rec.graph);
    std::size_t carbons = 0;
    for (const auto &atom : rec.graph->atoms)
      carbons += atom.element == "C";
    // The InChI formula layer starts with C<count>.
    auto inchi = *sdf::get_property(rec, "PUBCHEM_IUPAC_INCHI");
    auto formula = inchi.substr(9, inchi.find('/', 9) - 9);
    EXPECT_EQ(formula.substr(0, formula.find('H')), "C" + std::to_string(carbons)) << inchi;
  }
}

TEST(Synth, SpecValidation) {
  auto spec = small_spec(5);
  spec.core = spec.records_per_source + 1;
  EXPECT_THROW(spec.validate(), Error);
  spec = small_spec(5);
  spec.sources = 0;
  EXPECT_THROW(spec.validate(), Error);
}

TEST(Synth, RegressionGenerators) {
  auto h = synth::heteroskedastic_regression(500, 1);
  EXPECT_EQ(h.cols(), 7u);
  EXPECT_EQ(h.feature_names.front(), "x1");
  EXPECT_EQ(h.row_ids.size(), 500u);
  auto s = synth::suppression_regression(5000, 2, 0.7);
  EXPECT_EQ(s.cols(), 5u);
  double r = ((s.x.col(0).array() - s.x.col(0).mean()) * (s.x.col(1).array() - s.x.col(1).mean())).mean() /
             std::sqrt((s.x.col(0).array() - s.x.col(0).mean()).square().mean() *
                       (s.x.col(1).array() - s.x.col(1).mean()).square().mean());
  EXPECT_NEAR(r, 0.7, 0.03);
}
