#pragma once

// Streaming SDF (V2000) reading and writing.
//
// A file is treated as a byte stream of blocks, each ending with a `$$$$`
// line. Offsets and lengths are byte positions in the (uncompressed) stream;
// line endings are never normalized, so a block written back out is
// byte-identical to the block that was read.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sdforge::sdf {

struct Atom {
  std::string element;
  int charge = 0;

  friend bool operator==(const Atom &, const Atom &) = default;
};

// order: 1 single, 2 double, 3 triple, 4 aromatic.
struct Bond {
  std::size_t a = 0;
  std::size_t b = 0;
  int order = 1;

  friend bool operator==(const Bond &, const Bond &) = default;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;

  friend bool operator==(const MolGraph &, const MolGraph &) = default;
};

// Throws ParseError when a bond has an out-of-range or repeated endpoint, or
// the same atom pair is bonded twice.
void validate(const MolGraph &graph);

struct PropertyField {
  std::string tag;
  std::string value;

  friend bool operator==(const PropertyField &, const PropertyField &) = default;
};

struct SdfRecord {
  std::string raw;  // whole block including the terminator line; may be empty
  std::vector<PropertyField> properties;  // file order, unique tags
  std::optional<MolGraph> graph;
};

struct Block {
  std::uint64_t offset = 0;
  std::string bytes;

  std::uint64_t length() const { return bytes.size(); }
};

// Single-pass block segmentation over a byte stream. Holds at most one block
// in memory plus a fixed-size read buffer.
class BlockReader {
public:
  explicit BlockReader(std::istream &in, std::size_t chunk_size = 1 << 16);

  std::optional<Block> next();

  // Bytes pulled from the underlying stream so far.
  std::uint64_t bytes_read() const { return bytes_read_; }

  // Bytes after the last terminator (whitespace-only tail or an
  // unterminated final block). Valid once next() returned nullopt.
  std::uint64_t trailing_bytes() const { return trailing_bytes_; }
  bool malformed_tail() const { return malformed_tail_; }

  const std::vector<std::string> &diagnostics() const { return diagnostics_; }

  // Largest block buffer held at any time, in bytes.
  std::size_t peak_block_bytes() const { return peak_block_bytes_; }

private:
  bool refill();

  std::istream &in_;
  std::vector<char> chunk_;
  std::size_t chunk_pos_ = 0;
  std::size_t chunk_end_ = 0;
  std::string block_;
  std::uint64_t bytes_read_ = 0;
  std::uint64_t next_offset_ = 0;
  std::uint64_t trailing_bytes_ = 0;
  bool malformed_tail_ = false;
  bool eof_ = false;
  std::size_t peak_block_bytes_ = 0;
  std::vector<std::string> diagnostics_;
};

// True when the line (without its newline) is a record terminator.
bool is_terminator_line(std::string_view line);

// Property sections after `M  END`. Throws ParseError on duplicate or empty
// tags.
std::vector<PropertyField> parse_properties(std::string_view block);

// Connection table of a V2000 molfile. Throws UnsupportedFormat for V3000 and
// ParseError for malformed counts, atom, or bond lines.
MolGraph parse_molfile(std::string_view block);

SdfRecord parse_record(std::string block, bool with_graph = false);

std::optional<std::string> get_property(const SdfRecord &record,
                                        std::string_view tag);
std::optional<std::string>
get_property(const std::vector<PropertyField> &properties,
             std::string_view tag);

// Renders a V2000 block (zero coordinates) with the given properties and a
// trailing `$$$$` line. LF line endings.
std::string format_record(const MolGraph &graph,
                          const std::vector<PropertyField> &properties,
                          std::string_view name = {});

// Writes raw bytes when present, otherwise the formatted graph and
// properties. Returns bytes written; throws IoError if the sink fails.
std::size_t write_record(const SdfRecord &record, std::ostream &sink);

} // namespace sdforge::sdf
