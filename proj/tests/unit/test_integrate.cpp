#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "sdforge/error.hpp"
#include "sdforge/index.hpp"
#include "sdforge/integrate.hpp"
#include "sdforge/sdf.hpp"
#include "sdforge/synth.hpp"
#include "test_support.hpp"

using namespace sdforge;
using testing_support::ethanol_block;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

constexpr const char *kInchi = "PUBCHEM_IUPAC_INCHI";
constexpr const char *kKey = "PUBCHEM_IUPAC_INCHIKEY";

synth::CorpusManifest corpus(const TempDir &dir, std::uint64_t seed) {
  synth::CorpusSpec spec;
  spec.sources = 3;
  spec.records_per_source = 300;
  spec.core = 80;
  spec.pairwise_overlap = 25;
  spec.collision_groups = 3;
  spec.seed = seed;
  return synth::generate_corpus(spec, dir.path());
}

std::multiset<std::string> blocks_of(const std::string &bytes) {
  std::istringstream in(bytes);
  sdf::BlockReader reader(in);
  std::multiset<std::string> out;
  while (auto b = reader.next())
    out.insert(b->bytes);
  return out;
}

} // namespace

TEST(Intersect, AllAndThreshold) {
  std::vector<std::set<std::string>> sets = {{"a", "b", "c"}, {"b", "c", "d"}, {"c", "d", "e"}};
  EXPECT_EQ(integrate::intersect(sets), (std::set<std::string>{"c"}));
  EXPECT_EQ(integrate::intersect(sets, 2), (std::set<std::string>{"b", "c", "d"}));
  EXPECT_THROW(integrate::intersect(std::vector<std::set<std::string>>{{"a"}}), Error);
}

TEST(Intersect, PlantedCoreRecovered) {
  TempDir dir;
  auto m = corpus(dir, 11);
  std::vector<integrate::IdentifierSet> sets;
  for (const auto &f : m.files)
    sets.push_back(integrate::extract_identifiers({f}, kInchi));
  EXPECT_EQ(integrate::intersect(sets), m.core_identifiers);
  for (const auto &s : sets) {
    EXPECT_EQ(s.scanned, 300u);
    EXPECT_EQ(s.identifiers.size(), 300u);
  }
}

TEST(Audit, FindsExactlyThePlantedCollisions) {
  TempDir dir;
  auto m = corpus(dir, 12);
  auto report = integrate::audit_collisions(m.files, kKey, kInchi);
  ASSERT_EQ(report.findings.size(), m.collisions.size());
  std::map<std::string, std::vector<std::string>> planted(m.collisions.begin(), m.collisions.end());
  for (const auto &f : report.findings) {
    ASSERT_TRUE(planted.count(f.short_key)) << f.short_key;
    EXPECT_EQ(f.distinct_full_ids, planted[f.short_key]);
    EXPECT_GE(f.locations.size(), f.distinct_full_ids.size());
  }
  EXPECT_EQ(report.scanned, 900u);
}

TEST(Audit, SameStructureInTwoSourcesIsNotACollision) {
  TempDir dir;
  write_file(dir / "a.sdf", ethanol_block("x"));
  write_file(dir / "b.sdf", ethanol_block("x"));
  auto report = integrate::audit_collisions({dir / "a.sdf", dir / "b.sdf"}, kKey, kInchi);
  EXPECT_TRUE(report.findings.empty());
  write_file(dir / "c.sdf", ethanol_block("y"));
  report = integrate::audit_collisions({dir / "a.sdf", dir / "c.sdf"}, kKey, kInchi);
  ASSERT_EQ(report.findings.size(), 1u);
  EXPECT_EQ(report.findings[0].distinct_full_ids.size(), 2u);
}

TEST(Extract, IndexedEqualsNestedLoop) {
  TempDir dir;
  auto m = corpus(dir, 13);
  auto idx = index::build_index(m.files, kInchi, 2);
  std::set<std::string> targets;
  for (std::size_t i = 0; i < m.molecules.size(); i += 7)
    targets.insert(m.molecules[i].inchi);
  targets.insert("InChI=absent");

  auto plan = integrate::plan_extraction(idx, targets);
  EXPECT_EQ(plan.missing, std::vector<std::string>{"InChI=absent"});
  for (const auto &f : plan.files)
    for (std::size_t i = 1; i < f.records.size(); ++i)
      EXPECT_LT(f.records[i - 1].offset, f.records[i].offset);

  std::ostringstream indexed, nested;
  auto a = integrate::extract_records(plan, indexed, std::string(kInchi));
  auto b = integrate::nested_loop_extract(m.files, targets, kInchi, nested);
  EXPECT_EQ(a.written, targets.size() - 1);
  EXPECT_EQ(b.written, a.written);
  EXPECT_EQ(b.not_found, std::vector<std::string>{"InChI=absent"});
  EXPECT_TRUE(a.verification_failures.empty());
  EXPECT_EQ(blocks_of(indexed.str()), blocks_of(nested.str()));

  // Seeks only move forward within a file.
  for (std::size_t i = 1; i < a.seek_log.size(); ++i) {
    if (a.seek_log[i].file_id == a.seek_log[i - 1].file_id) {
      EXPECT_GT(a.seek_log[i].position, a.seek_log[i - 1].position);
    }
  }
}

TEST(Extract, StaleIndexIsCaughtByVerification) {
  TempDir dir;
  write_file(dir / "a.sdf", ethanol_block("x") + ethanol_block("y"));
  auto idx = index::build_index({dir / "a.sdf"}, kInchi, 1);
  // Same sizes, different identifiers: offsets still land on block starts.
  write_file(dir / "a.sdf", ethanol_block("y") + ethanol_block("x"));
  std::set<std::string> targets = {"InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3/x"};
  std::ostringstream out;
  auto r = integrate::extract_records(integrate::plan_extraction(idx, targets), out,
                                      std::string(kInchi));
  EXPECT_EQ(r.written, 0u);
  EXPECT_EQ(r.verification_failures.size(), 1u);
}

TEST(Extract, IdentifierListRoundTrip) {
  TempDir dir;
  std::set<std::string> ids = {"b", "a", "InChI=1S/x,y"};
  integrate::write_identifier_list(dir / "ids.txt", ids);
  auto back = integrate::read_identifier_list(dir / "ids.txt");
  EXPECT_EQ(std::set<std::string>(back.begin(), back.end()), ids);
}
