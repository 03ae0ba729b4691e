#pragma once

// 2D descriptors over a MolGraph, Lipinski classification, and the parallel
// SDF -> CSV dataset transform.
//
// Definitions used here (no toolkit parity is attempted):
//   MolWt             heavy-atom weights + explicit H atoms + 1.008 per implicit H
//   HeavyAtomCount    atoms other than H
//   NumHDonors        N or O atoms carrying at least one H
//   NumHAcceptors     all N and O atoms
//   NumRotatableBonds single non-ring bonds whose ends both have >= 2 heavy
//                     neighbours (no amide exclusion)
//   NumAromaticRings  rings of the minimum cycle basis that are aromatic (all
//                     bonds flagged aromatic, or a C/N ring with strictly
//                     alternating single/double bonds)
//   FractionCSP3      carbons with only single, non-aromatic bonds / carbons
//   TPSA              sum of table contributions over N and O environments

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sdforge/sdf.hpp"

namespace sdforge::descriptors {

using sdf::MolGraph;

int default_valence(std::string_view element, int charge);

// Implicit hydrogens: default valence minus the explicit bond-order sum
// (aromatic bonds count 1.5), floored at zero. Unknown elements get 0.
int implicit_hydrogens(const MolGraph &graph, std::size_t atom);

// Minimum cycle basis; each ring lists atom indices in cycle order. The number
// of rings equals bonds - atoms + connected components.
using Ring = std::vector<std::size_t>;
std::vector<Ring> perceive_rings(const MolGraph &graph);

bool is_aromatic_ring(const MolGraph &graph, const Ring &ring);
int perceive_aromatic_rings(const MolGraph &graph, const std::vector<Ring> &rings);

// Polar atom environment used as the TPSA lookup key. bond_orders lists the
// orders of bonds to heavy atoms in ascending order, e.g. "1,2" or "4,4".
struct PolarEnvironment {
  std::string element;
  int charge = 0;
  int hydrogens = 0;
  std::string bond_orders;
  bool aromatic = false;

  auto key() const {
    return std::tie(element, charge, hydrogens, bond_orders, aromatic);
  }
  friend bool operator<(const PolarEnvironment &a, const PolarEnvironment &b) {
    return a.key() < b.key();
  }
  friend bool operator==(const PolarEnvironment &a, const PolarEnvironment &b) {
    return a.key() == b.key();
  }
};

PolarEnvironment polar_environment(const MolGraph &graph, std::size_t atom);

class TpsaTable {
public:
  TpsaTable() = default;

  void set(PolarEnvironment env, double contribution);
  std::optional<double> find(const PolarEnvironment &env) const;
  std::size_t size() const { return table_.size(); }

  // Contributions for common neutral and charged N/O environments.
  static const TpsaTable &builtin();

  // TSV: element, charge, numH, bond_orders, aromatic (0/1), contribution.
  // Lines starting with '#' are comments.
  static TpsaTable load(const std::filesystem::path &path);
  static TpsaTable parse(std::istream &in);

private:
  std::map<PolarEnvironment, double> table_;
};

// Atomic weights for C H N O S P F Cl Br I.
std::optional<double> atomic_weight(std::string_view element);

struct DescriptorValues {
  double molwt = 0;
  double tpsa = 0;
  int num_h_donors = 0;
  int num_h_acceptors = 0;
  int num_rotatable_bonds = 0;
  int num_aromatic_rings = 0;
  double fraction_csp3 = 0;
  int heavy_atom_count = 0;
};

// Unknown elements and unmatched polar environments are reported through
// `warnings` when non-null.
DescriptorValues compute_descriptors(const MolGraph &graph,
                                     const TpsaTable &tpsa = TpsaTable::builtin(),
                                     std::vector<std::string> *warnings = nullptr);

struct LipinskiVerdict {
  bool passes_molwt = false;
  bool passes_logp = false;
  bool passes_donors = false;
  bool passes_acceptors = false;
  bool compliant = false;
};

// Inclusive thresholds: MolWt <= 500, logP <= 5, donors <= 5, acceptors <= 10.
LipinskiVerdict lipinski_check(double molwt, double logp, double donors,
                               double acceptors);

struct DescriptorRow {
  std::string inchikey;
  std::string smiles;
  std::string original_inchi;
  double logp_target = 0;
  DescriptorValues values;
};

inline constexpr std::string_view kDatasetHeader =
    "InChIKey,SMILES,Original_InChI,logP_target,MolWt,TPSA,NumHDonors,"
    "NumHAcceptors,NumRotatableBonds,NumAromaticRings,FractionCSP3,"
    "HeavyAtomCount";

// Fixed-point with at most six decimals, trailing zeros removed.
std::string format_real(double value);

// RFC 4180 quoting when the field contains a comma, quote, or line break.
std::string csv_field(std::string_view value);

std::string format_row(const DescriptorRow &row);

struct TransformOptions {
  std::string target_tag = "PUBCHEM_XLOGP3";
  std::string inchikey_tag = "PUBCHEM_IUPAC_INCHIKEY";
  std::string inchi_tag = "PUBCHEM_IUPAC_INCHI";
  std::string smiles_tag = "PUBCHEM_SMILES";
  std::size_t workers = 1;
  const TpsaTable *tpsa = nullptr;  // builtin when null
};

struct TransformReport {
  std::uint64_t records = 0;
  std::uint64_t rows = 0;
  std::uint64_t excluded = 0;
  std::map<std::string, std::uint64_t> exclusion_reasons;
  std::uint64_t warnings = 0;
};

// One block -> one row, or an exclusion reason.
struct RecordOutcome {
  std::optional<DescriptorRow> row;
  std::string exclusion_reason;
  std::size_t warnings = 0;
};
RecordOutcome process_block(std::string_view block, const TransformOptions &options);

// Producer thread reads blocks, `workers` threads compute rows, and the
// calling thread writes them back in input order.
TransformReport transform_dataset(std::istream &in, std::ostream &out,
                                  const TransformOptions &options);
TransformReport transform_dataset(const std::filesystem::path &input,
                                  const std::filesystem::path &output,
                                  const TransformOptions &options);

} // namespace sdforge::descriptors
