#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    std::random_device rd;
    auto name = "sdforge-test-" + std::to_string(rd()) + std::to_string(rd());
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bytes;
}

inline std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Ethanol, hydrogens implicit.
inline std::string ethanol_block(const std::string &id = "ETH", bool with_target = true) {
  std::string b = "ethanol\n  test\n\n"
                  "  3  2  0  0  0  0  0  0  0  0999 V2000\n"
                  "    0.0000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0\n"
                  "    1.5000    0.0000    0.0000 C   0  0  0  0  0  0  0  0  0  0  0  0\n"
                  "    2.0000    1.2000    0.0000 O   0  0  0  0  0  0  0  0  0  0  0  0\n"
                  "  1  2  1  0\n"
                  "  2  3  1  0\n"
                  "M  END\n"
                  "> <PUBCHEM_IUPAC_INCHI>\nInChI=1S/C2H6O/c1-2-3/h3H,2H2,1H3/" + id + "\n\n"
                  "> <PUBCHEM_IUPAC_INCHIKEY>\nLFQSCWFLJHTTHZ-UHFFFAOYSA-N\n\n";
  if (with_target)
    b += "> <PUBCHEM_XLOGP3>\n-0.1\n\n";
  b += "> <PUBCHEM_SMILES>\nCCO\n\n$$$$\n";
  return b;
}

} // namespace testing_support
