#include "sdforge/integrate.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>

#include "sdforge/error.hpp"
#include "sdforge/sdf.hpp"
#include "strings.hpp"

namespace sdforge::integrate {

namespace {

std::ifstream open_input(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return in;
}

// Calls fn(block, properties) for each well-formed block; returns the number
// of malformed blocks.
template <class Fn>
std::uint64_t for_each_record(const std::filesystem::path &path, Fn &&fn) {
  auto in = open_input(path);
  sdf::BlockReader reader(in);
  std::uint64_t malformed = 0;
  while (auto block = reader.next()) {
    std::vector<sdf::PropertyField> props;
    try {
      props = sdf::parse_properties(block->bytes);
    } catch (const ParseError &) {
      ++malformed;
      continue;
    }
    fn(*block, props);
  }
  if (reader.malformed_tail())
    ++malformed;
  return malformed;
}

std::optional<std::string> key_of(const std::vector<sdf::PropertyField> &props,
                                  std::string_view tag) {
  auto value = sdf::get_property(props, tag);
  if (!value)
    return std::nullopt;
  auto id = index::normalize_identifier(*value);
  if (id.empty())
    return std::nullopt;
  return id;
}

} // namespace

IdentifierSet extract_identifiers(const Paths &paths, std::string_view key_tag,
                                  std::string source_name) {
  IdentifierSet out;
  out.source_name = std::move(source_name);
  for (const auto &path : paths) {
    try {
      out.malformed += for_each_record(path, [&](const sdf::Block &,
                                                 const auto &props) {
        ++out.scanned;
        if (auto id = key_of(props, key_tag))
          out.identifiers.insert(std::move(*id));
        else
          ++out.missing;
      });
    } catch (const IoError &e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  return out;
}

std::set<std::string>
intersect(const std::vector<std::set<std::string>> &sets,
          std::optional<std::size_t> min_sources) {
  if (sets.size() < 2)
    throw Error("intersect needs at least two identifier sets");
  std::size_t need = min_sources.value_or(sets.size());
  if (need < 1 || need > sets.size())
    throw Error("min_sources must be between 1 and the number of sets");

  std::map<std::string_view, std::size_t> counts;
  for (const auto &set : sets)
    for (const auto &id : set)
      ++counts[id];
  std::set<std::string> out;
  for (const auto &[id, n] : counts)
    if (n >= need)
      out.emplace(id);
  return out;
}

std::set<std::string> intersect(const std::vector<IdentifierSet> &sets,
                                std::optional<std::size_t> min_sources) {
  std::vector<std::set<std::string>> raw;
  raw.reserve(sets.size());
  for (const auto &s : sets)
    raw.push_back(s.identifiers);
  return intersect(raw, min_sources);
}

AuditReport audit_collisions(const Paths &paths, std::string_view short_tag,
                             std::string_view full_tag) {
  AuditReport report;
  std::map<std::string, std::vector<SourceLocation>> by_short;
  for (const auto &path : paths) {
    report.malformed += for_each_record(path, [&](const sdf::Block &block,
                                                  const auto &props) {
      ++report.scanned;
      auto short_key = key_of(props, short_tag);
      auto full_id = key_of(props, full_tag);
      if (!short_key)
        ++report.missing_short;
      if (!full_id)
        ++report.missing_full;
      if (!short_key || !full_id)
        return;
      by_short[*short_key].push_back({path.string(), block.offset, *full_id});
    });
  }

  for (auto &[key, locations] : by_short) {
    std::set<std::string> distinct;
    for (const auto &loc : locations)
      distinct.insert(loc.full_id);
    if (distinct.size() < 2)
      continue;
    report.findings.push_back(
        {key, {distinct.begin(), distinct.end()}, std::move(locations)});
  }
  return report;
}

std::size_t ExtractionPlan::planned() const {
  std::size_t n = 0;
  for (const auto &f : files)
    n += f.records.size();
  return n;
}

ExtractionPlan plan_extraction(const index::OffsetIndex &index,
                               const std::set<std::string> &targets) {
  std::map<std::uint32_t, std::vector<PlannedRecord>> grouped;
  ExtractionPlan plan;
  for (const auto &id : targets) {
    const auto *entry = index.find(id);
    if (!entry) {
      plan.missing.push_back(id);
      continue;
    }
    grouped[entry->file_id].push_back({id, entry->offset, entry->length});
  }
  for (auto &[file_id, records] : grouped) {
    std::sort(records.begin(), records.end(),
              [](const auto &a, const auto &b) { return a.offset < b.offset; });
    plan.files.push_back(
        {file_id, index.file_table().at(file_id), std::move(records)});
  }
  return plan;
}

ExtractionReport extract_records(const ExtractionPlan &plan, std::ostream &sink,
                                 const std::optional<std::string> &verify_tag) {
  ExtractionReport report;
  std::string buffer;
  for (const auto &file : plan.files) {
    auto in = open_input(file.path);
    for (const auto &rec : file.records) {
      report.seek_log.push_back({file.file_id, rec.offset});
      buffer.resize(rec.length);
      in.clear();
      in.seekg(static_cast<std::streamoff>(rec.offset));
      in.read(buffer.data(), static_cast<std::streamsize>(rec.length));
      if (static_cast<std::uint64_t>(in.gcount()) != rec.length) {
        report.verification_failures.push_back(rec.identifier +
                                               ": short read at offset " +
                                               std::to_string(rec.offset));
        continue;
      }
      auto body = std::string_view(buffer);
      auto last_nl = body.rfind('\n', body.size() >= 2 ? body.size() - 2 : 0);
      auto last_line = last_nl == std::string_view::npos
                           ? body
                           : body.substr(last_nl + 1);
      if (!sdf::is_terminator_line(last_line)) {
        report.verification_failures.push_back(
            rec.identifier + ": slice does not end with a record terminator");
        continue;
      }
      if (verify_tag) {
        std::optional<std::string> found;
        try {
          found = key_of(sdf::parse_properties(body), *verify_tag);
        } catch (const ParseError &e) {
          report.verification_failures.push_back(rec.identifier +
                                                 ": unparseable slice: " +
                                                 e.what());
          continue;
        }
        if (found != rec.identifier) {
          report.verification_failures.push_back(
              rec.identifier + ": " + *verify_tag + " is '" +
              found.value_or("") + "'");
          continue;
        }
      }
      sink.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
      if (!sink)
        throw IoError("failed writing extracted records");
      ++report.written;
      report.bytes_written += buffer.size();
    }
  }
  return report;
}

NestedLoopReport nested_loop_extract(const Paths &paths,
                                     const std::set<std::string> &targets,
                                     std::string_view key_tag,
                                     std::ostream &sink) {
  NestedLoopReport report;
  for (const auto &target : targets) {
    bool found = false;
    for (const auto &path : paths) {
      auto in = open_input(path);
      sdf::BlockReader reader(in);
      while (auto block = reader.next()) {
        ++report.blocks_scanned;
        std::optional<std::string> id;
        try {
          id = key_of(sdf::parse_properties(block->bytes), key_tag);
        } catch (const ParseError &) {
          continue;
        }
        if (id == target) {
          sink.write(block->bytes.data(),
                     static_cast<std::streamsize>(block->bytes.size()));
          ++report.written;
          found = true;
          break;
        }
      }
      if (found)
        break;
    }
    if (!found)
      report.not_found.push_back(target);
  }
  if (!sink)
    throw IoError("failed writing extracted records");
  return report;
}

std::vector<std::string>
read_identifier_list(const std::filesystem::path &path) {
  auto in = open_input(path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    auto id = index::normalize_identifier(line);
    if (!id.empty())
      ids.push_back(std::move(id));
  }
  return ids;
}

void write_identifier_list(const std::filesystem::path &path,
                           const std::set<std::string> &identifiers) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot create " + path.string());
  for (const auto &id : identifiers)
    out << id << '\n';
  if (!out)
    throw IoError("failed writing " + path.string());
}

} // namespace sdforge::integrate
