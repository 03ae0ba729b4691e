#pragma once

// Multi-source identifier extraction, intersection, hash-collision audit, and
// index-driven record extraction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sdforge/index.hpp"

namespace sdforge::integrate {

using Paths = std::vector<std::filesystem::path>;

struct IdentifierSet {
  std::string source_name;
  std::set<std::string> identifiers;
  std::uint64_t scanned = 0;
  std::uint64_t missing = 0;
  std::uint64_t malformed = 0;
};

IdentifierSet extract_identifiers(const Paths &paths, std::string_view key_tag,
                                  std::string source_name = {});

// Identifiers present in at least `min_sources` of the sets (all of them by
// default). Requires two or more sets.
std::set<std::string> intersect(const std::vector<IdentifierSet> &sets,
                                std::optional<std::size_t> min_sources = {});
std::set<std::string>
intersect(const std::vector<std::set<std::string>> &sets,
          std::optional<std::size_t> min_sources = {});

struct SourceLocation {
  std::string path;
  std::uint64_t offset = 0;
  std::string full_id;
};

struct CollisionFinding {
  std::string short_key;
  std::vector<std::string> distinct_full_ids;  // sorted, >= 2
  std::vector<SourceLocation> locations;
};

struct AuditReport {
  std::vector<CollisionFinding> findings;  // sorted by short_key
  std::uint64_t scanned = 0;
  std::uint64_t missing_short = 0;
  std::uint64_t missing_full = 0;
  std::uint64_t malformed = 0;
};

AuditReport audit_collisions(const Paths &paths, std::string_view short_tag,
                             std::string_view full_tag);

struct PlannedRecord {
  std::string identifier;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

struct FilePlan {
  std::uint32_t file_id = 0;
  std::string path;
  std::vector<PlannedRecord> records;  // strictly ascending offsets
};

struct ExtractionPlan {
  std::vector<FilePlan> files;  // ascending file_id
  std::vector<std::string> missing;  // sorted

  std::size_t planned() const;
};

ExtractionPlan plan_extraction(const index::OffsetIndex &index,
                               const std::set<std::string> &targets);

struct SeekEvent {
  std::uint32_t file_id = 0;
  std::uint64_t position = 0;
};

struct ExtractionReport {
  std::uint64_t written = 0;
  std::uint64_t bytes_written = 0;
  std::vector<std::string> verification_failures;  // "identifier: reason"
  std::vector<SeekEvent> seek_log;
};

// Writes every planned block byte-for-byte, in (file_id, offset) order. With
// verify_tag set, a block whose tag value differs from its planned identifier
// is excluded and reported.
ExtractionReport extract_records(const ExtractionPlan &plan, std::ostream &sink,
                                 const std::optional<std::string> &verify_tag);

struct NestedLoopReport {
  std::uint64_t written = 0;
  std::uint64_t blocks_scanned = 0;
  std::vector<std::string> not_found;
};

// Baseline: for each target, scan the files in order until its block is
// found. O(targets x corpus).
NestedLoopReport nested_loop_extract(const Paths &paths,
                                     const std::set<std::string> &targets,
                                     std::string_view key_tag,
                                     std::ostream &sink);

// One identifier per line, LF.
std::vector<std::string> read_identifier_list(const std::filesystem::path &path);
void write_identifier_list(const std::filesystem::path &path,
                           const std::set<std::string> &identifiers);

} // namespace sdforge::integrate
