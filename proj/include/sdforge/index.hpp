#pragma once

// Byte-offset index: identifier -> (file, offset, length) of its SDF block.
//
// Each source file is scanned once; afterwards any record is reachable with a
// single seek and read.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sdforge::index {

struct IndexEntry {
  std::string identifier;
  std::uint32_t file_id = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const IndexEntry &, const IndexEntry &) = default;
};

// Result of scanning one file. file_id of the entries is 0 until merged.
struct PartialIndex {
  std::vector<IndexEntry> entries;
  std::uint64_t blocks = 0;
  std::uint64_t skipped_missing_key = 0;
  std::uint64_t skipped_malformed = 0;
  std::uint64_t bytes_read = 0;
  std::vector<std::string> diagnostics;

  std::uint64_t skipped() const { return skipped_missing_key + skipped_malformed; }
};

PartialIndex index_stream(std::istream &in, std::string_view key_tag);
PartialIndex index_file(const std::filesystem::path &path,
                        std::string_view key_tag);

class OffsetIndex {
public:
  OffsetIndex() = default;

  const std::vector<std::string> &file_table() const { return files_; }
  const std::vector<std::string> &duplicate_log() const { return duplicates_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const IndexEntry *find(const std::string &identifier) const;

  // Entries ordered by (file_id, offset).
  std::vector<const IndexEntry *> sorted_entries() const;

  std::uint32_t add_file(std::string path);

  // First occurrence wins; a repeated identifier is logged and dropped.
  // Returns false for a duplicate.
  bool insert(IndexEntry entry);

  // Compares file table and entries; the duplicate log is build-time only.
  friend bool operator==(const OffsetIndex &a, const OffsetIndex &b) {
    return a.files_ == b.files_ && a.entries_ == b.entries_;
  }

private:
  std::vector<std::string> files_;
  std::unordered_map<std::string, IndexEntry> entries_;
  std::vector<std::string> duplicates_;
};

struct BuildStats {
  std::vector<PartialIndex> per_file;  // entries cleared after merge

  std::uint64_t blocks() const;
  std::uint64_t skipped() const;
  std::uint64_t bytes_read() const;
};

// Scans each path once (one file per worker) and merges in path order, so the
// result does not depend on `workers`. Per-file failures are rethrown as
// IoError naming the file.
OffsetIndex build_index(const std::vector<std::filesystem::path> &paths,
                        std::string_view key_tag, std::size_t workers,
                        BuildStats *stats = nullptr);

// Text format, LF line endings:
//   #sdforge-index v1
//   #files<TAB>n
//   f<TAB>id<TAB>path              (n lines)
//   identifier<TAB>file_id<TAB>offset<TAB>length
void write_index(const OffsetIndex &index, std::ostream &out);
void write_index(const OffsetIndex &index, const std::filesystem::path &path);
OffsetIndex read_index(std::istream &in);
OffsetIndex read_index(const std::filesystem::path &path);

std::map<std::string, std::optional<IndexEntry>>
lookup(const OffsetIndex &index, const std::vector<std::string> &identifiers);

// Trailing whitespace is not part of an identifier.
std::string normalize_identifier(std::string_view raw);

} // namespace sdforge::index
