#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "sdforge/error.hpp"
#include "sdforge/index.hpp"
#include "sdforge/sdf.hpp"
#include "sdforge/synth.hpp"
#include "test_support.hpp"

using namespace sdforge;
using testing_support::ethanol_block;
using testing_support::read_file;
using testing_support::TempDir;
using testing_support::write_file;

namespace {

synth::CorpusManifest small_corpus(const TempDir &dir, std::uint64_t seed) {
  synth::CorpusSpec spec;
  spec.sources = 3;
  spec.records_per_source = 400;
  spec.core = 100;
  spec.pairwise_overlap = 30;
  spec.collision_groups = 2;
  spec.seed = seed;
  return synth::generate_corpus(spec, dir.path());
}

} // namespace

TEST(Index, SingleFileEntriesPointAtBlocks) {
  TempDir dir;
  std::string bytes = ethanol_block("a") + ethanol_block("b") + ethanol_block("c");
  write_file(dir / "f.sdf", bytes);
  auto part = index::index_file(dir / "f.sdf", "PUBCHEM_IUPAC_INCHI");
  ASSERT_EQ(part.entries.size(), 3u);
  EXPECT_EQ(part.bytes_read, bytes.size());
  for (const auto &e : part.entries)
    EXPECT_EQ(sdf::get_property(sdf::parse_properties(bytes.substr(e.offset, e.length)),
                                "PUBCHEM_IUPAC_INCHI"),
              e.identifier);
}

TEST(Index, MissingKeyAndMalformedBlocksAreSkipped) {
  std::string no_key = "x\n\n\n  0  0  0  0  0  0  0  0  0  0999 V2000\nM  END\n> <OTHER>\n1\n\n$$$$\n";
  std::string bad = "x\n\n\n  0  0  0  0  0  0  0  0  0  0999 V2000\nM  END\n> <A>\n1\n\n> <A>\n2\n\n$$$$\n";
  std::istringstream in(ethanol_block("a") + no_key + bad + ethanol_block("b"));
  auto part = index::index_stream(in, "PUBCHEM_IUPAC_INCHI");
  EXPECT_EQ(part.blocks, 4u);
  EXPECT_EQ(part.entries.size(), 2u);
  EXPECT_EQ(part.skipped_missing_key, 1u);
  EXPECT_EQ(part.skipped_malformed, 1u);
}

TEST(Index, FirstOccurrenceWinsAcrossFiles) {
  TempDir dir;
  write_file(dir / "a.sdf", ethanol_block("x") + ethanol_block("y"));
  write_file(dir / "b.sdf", ethanol_block("y") + ethanol_block("z"));
  auto idx = index::build_index({dir / "a.sdf", dir / "b.sdf"}, "PUBCHEM_IUPAC_INCHI", 2);
  EXPECT_EQ(idx.size(), 3u);
  const auto *y = idx.find("InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3/y");
  ASSERT_TRUE(y);
  EXPECT_EQ(y->file_id, 0u);
  EXPECT_EQ(idx.duplicate_log().size(), 1u);
}

TEST(Index, RoundTripAndSeek) {
  TempDir dir;
  auto manifest = small_corpus(dir, 3);
  index::BuildStats stats;
  auto idx = index::build_index(manifest.files, "PUBCHEM_IUPAC_INCHI", 3, &stats);
  std::uint64_t total = 0;
  for (const auto &f : manifest.files)
    total += std::filesystem::file_size(f);
  EXPECT_EQ(stats.bytes_read(), total);
  EXPECT_EQ(stats.blocks(), 1200u);
  EXPECT_EQ(idx.size(), manifest.molecules.size());

  index::write_index(idx, dir / "index.tsv");
  auto back = index::read_index(dir / "index.tsv");
  EXPECT_TRUE(back == idx);

  for (const auto &m : manifest.molecules) {
    const auto *e = back.find(m.inchi);
    ASSERT_TRUE(e) << m.inchi;
    std::ifstream in(back.file_table()[e->file_id], std::ios::binary);
    in.seekg(static_cast<std::streamoff>(e->offset));
    std::string block(e->length, '\0');
    in.read(block.data(), static_cast<std::streamsize>(e->length));
    EXPECT_EQ(sdf::get_property(sdf::parse_properties(block), "PUBCHEM_IUPAC_INCHI"), m.inchi);
  }
}

TEST(Index, OutputIndependentOfWorkers) {
  TempDir dir;
  auto manifest = small_corpus(dir, 4);
  std::string reference;
  for (std::size_t w : {1u, 2u, 8u}) {
    auto idx = index::build_index(manifest.files, "PUBCHEM_IUPAC_INCHI", w);
    std::ostringstream out;
    index::write_index(idx, out);
    if (reference.empty())
      reference = out.str();
    EXPECT_EQ(out.str(), reference) << "workers " << w;
  }
}

TEST(Index, ReadRejectsCorruptFiles) {
  std::istringstream wrong_magic("#not-an-index\n");
  EXPECT_THROW(index::read_index(wrong_magic), Error);
  std::istringstream bad_file_id("#sdforge-index v1\n#files\t1\nf\t0\ta.sdf\nid\t3\t0\t10\n");
  EXPECT_THROW(index::read_index(bad_file_id), ParseError);
  std::istringstream dup("#sdforge-index v1\n#files\t1\nf\t0\ta.sdf\nid\t0\t0\t10\nid\t0\t10\t10\n");
  EXPECT_THROW(index::read_index(dup), ParseError);
}

TEST(Index, MissingFileNamesThePath) {
  TempDir dir;
  try {
    index::build_index({dir / "nope.sdf"}, "PUBCHEM_IUPAC_INCHI", 1);
    FAIL() << "expected IoError";
  } catch (const IoError &e) {
    EXPECT_NE(std::string(e.what()).find("nope.sdf"), std::string::npos);
  }
}

TEST(Index, LookupAndNormalization) {
  TempDir dir;
  write_file(dir / "a.sdf", ethanol_block("x"));
  auto idx = index::build_index({dir / "a.sdf"}, "PUBCHEM_IUPAC_INCHI", 1);
  auto hits = index::lookup(idx, {"InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3/x", "absent"});
  EXPECT_TRUE(hits["InChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3/x"]);
  EXPECT_FALSE(hits["absent"]);
  EXPECT_EQ(index::normalize_identifier("abc \r\n"), "abc");
}
