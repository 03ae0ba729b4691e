#include "sdforge/sdf.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <set>
#include <utility>

#include "sdforge/error.hpp"
#include "strings.hpp"

namespace sdforge::sdf {

namespace {

// Iterates the lines of a buffer; the returned view excludes '\n' but keeps
// any '\r'.
class LineCursor {
public:
  explicit LineCursor(std::string_view text) : text_(text) {}

  bool next(std::string_view &line) {
    if (pos_ >= text_.size())
      return false;
    auto nl = text_.find('\n', pos_);
    if (nl == std::string_view::npos) {
      line = text_.substr(pos_);
      pos_ = text_.size();
    } else {
      line = text_.substr(pos_, nl - pos_);
      pos_ = nl + 1;
    }
    ++line_no_;
    return true;
  }

  std::size_t line_no() const { return line_no_; }

private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

std::string_view column(std::string_view line, std::size_t start,
                        std::size_t width) {
  if (start >= line.size())
    return {};
  return line.substr(start, std::min(width, line.size() - start));
}

bool parse_int(std::string_view field, int &out) {
  field = detail::trim(field);
  if (field.empty())
    return false;
  if (field.front() == '+')
    field.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

int charge_from_column(int code) {
  switch (code) {
  case 1: return 3;
  case 2: return 2;
  case 3: return 1;
  case 5: return -1;
  case 6: return -2;
  case 7: return -3;
  default: return 0;
  }
}

bool is_m_end(std::string_view line) {
  return detail::rtrim(line) == "M  END";
}

} // namespace

bool is_terminator_line(std::string_view line) {
  return detail::rtrim(line) == "$$$$";
}

void validate(const MolGraph &graph) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto &bond : graph.bonds) {
    if (bond.a >= graph.atoms.size() || bond.b >= graph.atoms.size())
      throw ParseError("bond endpoint out of range");
    if (bond.a == bond.b)
      throw ParseError("bond joins an atom to itself");
    if (bond.order < 1 || bond.order > 4)
      throw ParseError("unsupported bond order " + std::to_string(bond.order));
    auto key = std::minmax(bond.a, bond.b);
    if (!seen.insert(key).second)
      throw ParseError("duplicate bond between atoms " +
                       std::to_string(key.first + 1) + " and " +
                       std::to_string(key.second + 1));
  }
}

// ---------------------------------------------------------------------------
// BlockReader

BlockReader::BlockReader(std::istream &in, std::size_t chunk_size)
    : in_(in), chunk_(chunk_size) {}

bool BlockReader::refill() {
  if (eof_)
    return false;
  in_.read(chunk_.data(), static_cast<std::streamsize>(chunk_.size()));
  auto got = static_cast<std::size_t>(in_.gcount());
  bytes_read_ += got;
  chunk_pos_ = 0;
  chunk_end_ = got;
  if (got == 0) {
    eof_ = true;
    return false;
  }
  return true;
}

std::optional<Block> BlockReader::next() {
  block_.clear();
  std::size_t line_start = 0;

  for (;;) {
    if (chunk_pos_ == chunk_end_ && !refill())
      break;
    const char *begin = chunk_.data() + chunk_pos_;
    const char *nl = static_cast<const char *>(
        std::memchr(begin, '\n', chunk_end_ - chunk_pos_));
    if (!nl) {
      block_.append(begin, chunk_end_ - chunk_pos_);
      chunk_pos_ = chunk_end_;
      continue;
    }
    std::size_t n = static_cast<std::size_t>(nl - begin) + 1;
    block_.append(begin, n);
    chunk_pos_ += n;
    std::string_view line(block_.data() + line_start,
                          block_.size() - line_start - 1);
    if (is_terminator_line(line)) {
      peak_block_bytes_ = std::max(peak_block_bytes_, block_.size());
      Block out{next_offset_, std::move(block_)};
      next_offset_ += out.bytes.size();
      block_ = std::string();
      return out;
    }
    line_start = block_.size();
  }

  // End of stream; the final line may lack a newline.
  peak_block_bytes_ = std::max(peak_block_bytes_, block_.size());
  if (block_.empty())
    return std::nullopt;
  if (is_terminator_line(std::string_view(block_).substr(line_start))) {
    Block out{next_offset_, std::move(block_)};
    next_offset_ += out.bytes.size();
    block_ = std::string();
    return out;
  }
  trailing_bytes_ = block_.size();
  if (detail::trim(block_).empty()) {
    diagnostics_.push_back("ignored " + std::to_string(block_.size()) +
                           " trailing whitespace bytes at offset " +
                           std::to_string(next_offset_));
  } else {
    malformed_tail_ = true;
    diagnostics_.push_back("unterminated final block at offset " +
                           std::to_string(next_offset_) + " (" +
                           std::to_string(block_.size()) + " bytes)");
  }
  next_offset_ += block_.size();
  block_.clear();
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Parsing

std::vector<PropertyField> parse_properties(std::string_view block) {
  LineCursor cursor(block);
  std::string_view line;
  bool in_data = false;
  while (cursor.next(line)) {
    if (is_m_end(line)) {
      in_data = true;
      break;
    }
  }
  std::vector<PropertyField> fields;
  if (!in_data)
    return fields;

  std::set<std::string, std::less<>> tags;
  while (cursor.next(line)) {
    auto stripped = detail::rtrim(line);
    if (is_terminator_line(stripped))
      break;
    if (stripped.empty())
      continue;
    if (stripped.front() != '>')
      throw ParseError("expected a data header", cursor.line_no());
    auto open = stripped.find('<');
    auto close = open == std::string_view::npos ? open : stripped.find('>', open);
    if (close == std::string_view::npos)
      throw ParseError("data header without <TAG>", cursor.line_no());
    std::string tag(stripped.substr(open + 1, close - open - 1));
    if (tag.empty() || tag.find('<') != std::string::npos)
      throw ParseError("empty or invalid property tag", cursor.line_no());
    if (!tags.insert(tag).second)
      throw ParseError("duplicate property tag <" + tag + ">", cursor.line_no());

    std::string value;
    bool first = true;
    while (cursor.next(line)) {
      auto content = line;
      if (!content.empty() && content.back() == '\r')
        content.remove_suffix(1);
      if (content.empty())
        break;
      if (is_terminator_line(content)) {
        // Value ran into the terminator without a blank separator line.
        fields.push_back({std::move(tag), std::move(value)});
        return fields;
      }
      if (!first)
        value += '\n';
      value.append(content);
      first = false;
    }
    fields.push_back({std::move(tag), std::move(value)});
  }
  return fields;
}

MolGraph parse_molfile(std::string_view block) {
  LineCursor cursor(block);
  std::string_view line;
  for (int i = 0; i < 3; ++i)
    if (!cursor.next(line))
      throw ParseError("molfile header truncated", cursor.line_no());
  if (!cursor.next(line))
    throw ParseError("missing counts line", cursor.line_no() + 1);

  auto counts = detail::rtrim(line);
  if (counts.find("V3000") != std::string_view::npos)
    throw UnsupportedFormat("V3000 molfiles are not supported");
  if (counts.size() < 6 ||
      counts.substr(counts.size() >= 5 ? counts.size() - 5 : 0) != "V2000")
    throw ParseError("counts line is not V2000", cursor.line_no());
  int natoms = 0, nbonds = 0;
  if (!parse_int(column(counts, 0, 3), natoms) ||
      !parse_int(column(counts, 3, 3), nbonds) || natoms < 0 || nbonds < 0)
    throw ParseError("malformed counts line", cursor.line_no());

  MolGraph graph;
  graph.atoms.reserve(static_cast<std::size_t>(natoms));
  for (int i = 0; i < natoms; ++i) {
    if (!cursor.next(line) || is_m_end(line))
      throw ParseError("atom block shorter than counts line", cursor.line_no());
    auto symbol = detail::trim(column(line, 31, 3));
    if (symbol.empty())
      throw ParseError("atom line without element symbol", cursor.line_no());
    int code = 0;
    auto charge_field = column(line, 36, 3);
    if (!detail::trim(charge_field).empty() && !parse_int(charge_field, code))
      throw ParseError("malformed atom charge field", cursor.line_no());
    graph.atoms.push_back({std::string(symbol), charge_from_column(code)});
  }

  graph.bonds.reserve(static_cast<std::size_t>(nbonds));
  for (int i = 0; i < nbonds; ++i) {
    if (!cursor.next(line) || is_m_end(line))
      throw ParseError("bond block shorter than counts line", cursor.line_no());
    int a = 0, b = 0, type = 0;
    if (!parse_int(column(line, 0, 3), a) || !parse_int(column(line, 3, 3), b) ||
        !parse_int(column(line, 6, 3), type))
      throw ParseError("malformed bond line", cursor.line_no());
    if (a < 1 || b < 1 || a > natoms || b > natoms)
      throw ParseError("bond atom index out of range", cursor.line_no());
    if (type < 1 || type > 4)
      throw ParseError("unsupported bond type " + std::to_string(type),
                       cursor.line_no());
    graph.bonds.push_back({static_cast<std::size_t>(a - 1),
                           static_cast<std::size_t>(b - 1), type});
  }

  // Properties block. Any M  CHG line supersedes the atom-block charges.
  bool saw_chg = false;
  bool saw_end = false;
  while (cursor.next(line)) {
    if (is_m_end(line)) {
      saw_end = true;
      break;
    }
    if (line.substr(0, 6) != "M  CHG")
      continue;
    if (!saw_chg) {
      for (auto &atom : graph.atoms)
        atom.charge = 0;
      saw_chg = true;
    }
    int count = 0;
    if (!parse_int(column(line, 6, 3), count) || count < 0 || count > 8)
      throw ParseError("malformed M  CHG line", cursor.line_no());
    for (int k = 0; k < count; ++k) {
      int idx = 0, chg = 0;
      if (!parse_int(column(line, 9 + 8 * k, 4), idx) ||
          !parse_int(column(line, 13 + 8 * k, 4), chg))
        throw ParseError("malformed M  CHG entry", cursor.line_no());
      if (idx < 1 || idx > natoms)
        throw ParseError("M  CHG atom index out of range", cursor.line_no());
      graph.atoms[static_cast<std::size_t>(idx - 1)].charge = chg;
    }
  }
  if (!saw_end)
    throw ParseError("missing M  END line", cursor.line_no());

  validate(graph);
  return graph;
}

SdfRecord parse_record(std::string block, bool with_graph) {
  SdfRecord record;
  record.properties = parse_properties(block);
  if (with_graph)
    record.graph = parse_molfile(block);
  record.raw = std::move(block);
  return record;
}

std::optional<std::string>
get_property(const std::vector<PropertyField> &properties,
             std::string_view tag) {
  for (const auto &field : properties)
    if (field.tag == tag)
      return field.value;
  return std::nullopt;
}

std::optional<std::string> get_property(const SdfRecord &record,
                                        std::string_view tag) {
  return get_property(record.properties, tag);
}

// ---------------------------------------------------------------------------
// Writing

std::string format_record(const MolGraph &graph,
                          const std::vector<PropertyField> &properties,
                          std::string_view name) {
  validate(graph);
  if (graph.atoms.size() > 999 || graph.bonds.size() > 999)
    throw Error("V2000 cannot hold more than 999 atoms or bonds");

  std::string out;
  out.reserve(96 + 70 * graph.atoms.size() + 22 * graph.bonds.size());
  out.append(name);
  out += "\n  sdforge\n\n";

  char buf[96];
  std::snprintf(buf, sizeof buf, "%3zu%3zu  0  0  0  0  0  0  0  0999 V2000\n",
                graph.atoms.size(), graph.bonds.size());
  out += buf;
  for (const auto &atom : graph.atoms) {
    std::snprintf(buf, sizeof buf,
                  "    0.0000    0.0000    0.0000 %-3s 0  0  0  0  0  0  0  0  0  0  0  0\n",
                  atom.element.c_str());
    out += buf;
  }
  for (const auto &bond : graph.bonds) {
    std::snprintf(buf, sizeof buf, "%3zu%3zu%3d  0\n", bond.a + 1, bond.b + 1,
                  bond.order);
    out += buf;
  }

  std::vector<std::pair<std::size_t, int>> charged;
  for (std::size_t i = 0; i < graph.atoms.size(); ++i)
    if (graph.atoms[i].charge != 0)
      charged.emplace_back(i + 1, graph.atoms[i].charge);
  for (std::size_t start = 0; start < charged.size(); start += 8) {
    auto count = std::min<std::size_t>(8, charged.size() - start);
    std::snprintf(buf, sizeof buf, "M  CHG%3zu", count);
    out += buf;
    for (std::size_t k = start; k < start + count; ++k) {
      std::snprintf(buf, sizeof buf, " %3zu %3d", charged[k].first,
                    charged[k].second);
      out += buf;
    }
    out += '\n';
  }
  out += "M  END\n";

  for (const auto &field : properties) {
    if (field.tag.empty() || field.tag.find_first_of("<>") != std::string::npos)
      throw Error("invalid property tag '" + field.tag + "'");
    out += "> <";
    out += field.tag;
    out += ">\n";
    out += field.value;
    out += "\n\n";
  }
  out += "$$$$\n";
  return out;
}

std::size_t write_record(const SdfRecord &record, std::ostream &sink) {
  std::string rendered;
  std::string_view bytes = record.raw;
  if (bytes.empty()) {
    if (!record.graph)
      throw Error("record has neither raw bytes nor a graph");
    rendered = format_record(*record.graph, record.properties);
    bytes = rendered;
  }
  sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!sink)
    throw IoError("failed writing SDF record");
  return bytes.size();
}

} // namespace sdforge::sdf
