#include "sdforge/index.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "sdforge/error.hpp"
#include "sdforge/parallel.hpp"
#include "sdforge/sdf.hpp"
#include "strings.hpp"

namespace sdforge::index {

namespace {
constexpr std::string_view kMagic = "#sdforge-index v1";
} // namespace

std::string normalize_identifier(std::string_view raw) {
  return std::string(detail::rtrim(raw));
}

PartialIndex index_stream(std::istream &in, std::string_view key_tag) {
  PartialIndex out;
  sdf::BlockReader reader(in);
  while (auto block = reader.next()) {
    ++out.blocks;
    std::optional<std::string> key;
    try {
      key = sdf::get_property(sdf::parse_properties(block->bytes), key_tag);
    } catch (const ParseError &e) {
      ++out.skipped_malformed;
      out.diagnostics.push_back("block at offset " +
                                std::to_string(block->offset) + ": " + e.what());
      continue;
    }
    std::string id = key ? normalize_identifier(*key) : std::string();
    if (id.empty()) {
      ++out.skipped_missing_key;
      continue;
    }
    if (id.find_first_of("\t\n") != std::string::npos) {
      ++out.skipped_malformed;
      out.diagnostics.push_back("block at offset " +
                                std::to_string(block->offset) +
                                ": identifier contains a tab or newline");
      continue;
    }
    out.entries.push_back({std::move(id), 0, block->offset, block->length()});
  }
  if (reader.malformed_tail())
    ++out.skipped_malformed;
  for (const auto &d : reader.diagnostics())
    out.diagnostics.push_back(d);
  out.bytes_read = reader.bytes_read();
  return out;
}

PartialIndex index_file(const std::filesystem::path &path,
                        std::string_view key_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  auto partial = index_stream(in, key_tag);
  if (in.bad())
    throw IoError("read failure on " + path.string());
  return partial;
}

// ---------------------------------------------------------------------------

const IndexEntry *OffsetIndex::find(const std::string &identifier) const {
  auto it = entries_.find(identifier);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<const IndexEntry *> OffsetIndex::sorted_entries() const {
  std::vector<const IndexEntry *> out;
  out.reserve(entries_.size());
  for (const auto &[id, entry] : entries_)
    out.push_back(&entry);
  std::sort(out.begin(), out.end(), [](const IndexEntry *a, const IndexEntry *b) {
    return std::tie(a->file_id, a->offset) < std::tie(b->file_id, b->offset);
  });
  return out;
}

std::uint32_t OffsetIndex::add_file(std::string path) {
  files_.push_back(std::move(path));
  return static_cast<std::uint32_t>(files_.size() - 1);
}

bool OffsetIndex::insert(IndexEntry entry) {
  if (entry.file_id >= files_.size())
    throw Error("index entry refers to unknown file id " +
                std::to_string(entry.file_id));
  auto [it, inserted] = entries_.try_emplace(entry.identifier, entry);
  if (!inserted)
    duplicates_.push_back(std::move(entry.identifier));
  return inserted;
}

std::uint64_t BuildStats::blocks() const {
  std::uint64_t n = 0;
  for (const auto &p : per_file)
    n += p.blocks;
  return n;
}

std::uint64_t BuildStats::skipped() const {
  std::uint64_t n = 0;
  for (const auto &p : per_file)
    n += p.skipped();
  return n;
}

std::uint64_t BuildStats::bytes_read() const {
  std::uint64_t n = 0;
  for (const auto &p : per_file)
    n += p.bytes_read;
  return n;
}

OffsetIndex build_index(const std::vector<std::filesystem::path> &paths,
                        std::string_view key_tag, std::size_t workers,
                        BuildStats *stats) {
  std::set<std::filesystem::path> distinct(paths.begin(), paths.end());
  if (distinct.size() != paths.size())
    throw Error("build_index: input paths must be distinct");

  std::vector<PartialIndex> partials(paths.size());
  parallel_for(paths.size(), workers, [&](std::size_t i) {
    try {
      partials[i] = index_file(paths[i], key_tag);
    } catch (const std::exception &e) {
      throw IoError(paths[i].string() + ": " + e.what());
    }
  });

  OffsetIndex index;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    auto file_id = index.add_file(paths[i].string());
    for (auto &entry : partials[i].entries) {
      entry.file_id = file_id;
      index.insert(std::move(entry));
    }
    partials[i].entries.clear();
  }
  if (stats)
    stats->per_file = std::move(partials);
  return index;
}

// ---------------------------------------------------------------------------
// Persistence

void write_index(const OffsetIndex &index, std::ostream &out) {
  out << kMagic << '\n';
  out << "#files\t" << index.file_table().size() << '\n';
  for (std::size_t i = 0; i < index.file_table().size(); ++i)
    out << "f\t" << i << '\t' << index.file_table()[i] << '\n';
  for (const auto *entry : index.sorted_entries())
    out << entry->identifier << '\t' << entry->file_id << '\t' << entry->offset
        << '\t' << entry->length << '\n';
  if (!out)
    throw IoError("failed writing index");
}

void write_index(const OffsetIndex &index, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot create " + path.string());
  write_index(index, out);
}

OffsetIndex read_index(std::istream &in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&](bool required) {
    if (!std::getline(in, line)) {
      if (required)
        throw ParseError("index file truncated", line_no + 1);
      return false;
    }
    ++line_no;
    if (in.eof())
      throw ParseError("index file truncated: last line has no newline",
                       line_no);
    return true;
  };

  if (!std::getline(in, line) || line != kMagic)
    throw UnsupportedFormat("not an sdforge v1 index (bad header)");
  ++line_no;
  if (in.eof())
    throw ParseError("index file truncated", line_no);

  next_line(true);
  auto header = detail::split(line, '\t');
  std::optional<std::uint64_t> nfiles;
  if (header.size() == 2 && header[0] == "#files")
    nfiles = detail::parse_u64(header[1]);
  if (!nfiles)
    throw ParseError("malformed #files line", line_no);

  OffsetIndex index;
  for (std::uint64_t i = 0; i < *nfiles; ++i) {
    next_line(true);
    auto parts = detail::split(line, '\t');
    if (parts.size() != 3 || parts[0] != "f" ||
        detail::parse_u64(parts[1]) != std::optional<std::uint64_t>(i))
      throw ParseError("malformed file table line", line_no);
    index.add_file(std::string(parts[2]));
  }

  while (next_line(false)) {
    auto parts = detail::split(line, '\t');
    if (parts.size() != 4 || parts[0].empty())
      throw ParseError("malformed index entry", line_no);
    auto file_id = detail::parse_u64(parts[1]);
    auto offset = detail::parse_u64(parts[2]);
    auto length = detail::parse_u64(parts[3]);
    if (!file_id || !offset || !length || *length == 0)
      throw ParseError("malformed index entry", line_no);
    if (*file_id >= index.file_table().size())
      throw ParseError("index entry refers to unknown file", line_no);
    if (!index.insert({std::string(parts[0]),
                       static_cast<std::uint32_t>(*file_id), *offset, *length}))
      throw ParseError("duplicate identifier in index", line_no);
  }
  return index;
}

OffsetIndex read_index(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return read_index(in);
}

std::map<std::string, std::optional<IndexEntry>>
lookup(const OffsetIndex &index, const std::vector<std::string> &identifiers) {
  std::map<std::string, std::optional<IndexEntry>> out;
  for (const auto &id : identifiers) {
    const auto *entry = index.find(id);
    out.emplace(id, entry ? std::optional<IndexEntry>(*entry) : std::nullopt);
  }
  return out;
}

} // namespace sdforge::index
