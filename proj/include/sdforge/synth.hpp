#pragma once

// Synthetic data generators: multi-source SDF corpora with planted overlaps
// and identifier collisions, and regression datasets used to exercise the
// modeling and explanation code.
//
// Corpus target model. Each molecule is built from latent counts: chain
// carbons c, benzene rings r, hydroxyls h, amines a, carbonyls k, methoxy
// ethers e. The target is
//   mean = 0.2 + 0.48 c - 0.006 c^2 + 1.7 r - 1.05 h - 1.15 a - 0.55 k
//          - 0.25 e + 0.3 r h
//   sd   = noise_base * (1 + heteroskedasticity * |mean - 3| / 3)
//   target = mean + sd * eps,  eps ~ N(0, 1)
// and all of c, r, h, a, k, e, mean, sd, eps are written to the ground-truth
// manifest.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "sdforge/models.hpp"
#include "sdforge/sdf.hpp"

namespace sdforge::synth {

struct Latent {
  int chain = 1;
  int rings = 0;
  int hydroxyls = 0;
  int amines = 0;
  int carbonyls = 0;
  int ethers = 0;
};

double target_mean(const Latent &latent);
double target_sd(double mean, double noise_base, double heteroskedasticity);

// Chain with substituents on distinct chain carbons; rings are kekulized
// benzene. Raises the chain length if there are more substituents than
// chain carbons.
sdf::MolGraph build_molecule(Latent &latent);
std::string smiles_for(const Latent &latent);

// 27-character InChIKey-shaped hash of an identifier string.
std::string pseudo_inchikey(std::string_view identifier);

struct CorpusSpec {
  std::size_t sources = 3;
  std::size_t records_per_source = 5000;
  std::size_t core = 1200;  // present in every source
  // Molecules shared by consecutive source pairs (s, s+1) only.
  std::size_t pairwise_overlap = 300;
  std::size_t collision_groups = 3;
  std::size_t collision_group_size = 3;
  double missing_target_rate = 0.02;
  double extreme_fraction = 0.2;  // half large lipophilic, half small polar
  double noise_base = 0.35;
  double heteroskedasticity = 1.0;
  bool compact = false;  // 1-3 heavy atoms per record
  std::uint64_t seed = 0;

  std::string id_tag = "SYNTH_ID";
  std::string inchi_tag = "PUBCHEM_IUPAC_INCHI";
  std::string inchikey_tag = "PUBCHEM_IUPAC_INCHIKEY";
  std::string target_tag = "PUBCHEM_XLOGP3";
  std::string smiles_tag = "PUBCHEM_SMILES";

  void validate() const;
};

struct MoleculeTruth {
  std::uint64_t serial = 0;
  std::string inchi;
  std::string inchikey;
  std::vector<std::size_t> sources;  // ascending
  bool core = false;
  int collision_group = -1;
  Latent latent;
  double mean = 0;
  double sd = 0;
  double eps = 0;
  double target = 0;
  bool has_target = true;
};

struct CorpusManifest {
  std::vector<std::filesystem::path> files;  // source_0.sdf, ...
  std::vector<MoleculeTruth> molecules;      // ascending serial
  std::set<std::string> core_identifiers;    // InChI strings
  // Per collision group, the shared key and member InChIs (sorted).
  std::vector<std::pair<std::string, std::vector<std::string>>> collisions;
  std::vector<std::uint64_t> records_per_file;
};

// Writes source_<k>.sdf files and ground_truth.tsv into out_dir.
CorpusManifest generate_corpus(const CorpusSpec &spec, const std::filesystem::path &out_dir);

void write_ground_truth(const CorpusManifest &manifest, std::ostream &out);
std::vector<MoleculeTruth> read_ground_truth(std::istream &in);

// ---------------------------------------------------------------------------
// Regression generators (features named x1, x2, ...).

// Nonlinear truth with noise whose scale grows with the distance of a
// symmetric component from its median:
//   x1 ~ U(0,2); x2, x3 ~ U(0,1); x4, x5 ~ U(-1,1); x6, x7 ~ N(0,1)
//   L    = x4 - x5
//   mean = 0.8 exp(x1) + 3 [x2 > 0.8] + 2.5 [x3 < 0.15] + L + 1.5 tanh(2 x6)
//   y    = mean + noise_base (1 + 1.5 |L|) eps
models::Dataset heteroskedastic_regression(std::size_t n, std::uint64_t seed,
                                           double noise_base = 0.3);

// Two correlated predictors with opposite-signed effects:
//   x1, x2 standard normal with correlation rho; x3..x5 independent N(0,1)
//   y = beta1 x1 + beta2 x2 + 0.6 x3 + sd eps
models::Dataset suppression_regression(std::size_t n, std::uint64_t seed,
                                       double rho = 0.7, double beta1 = 1.0,
                                       double beta2 = -0.8, double sd = 0.5);

} // namespace sdforge::synth
