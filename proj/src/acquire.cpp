#include "sdforge/acquire.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <regex>
#include <set>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "sdforge/error.hpp"
#include "sdforge/parallel.hpp"
#include "sdforge/rng.hpp"
#include "strings.hpp"

namespace sdforge::acquire {

namespace fs = std::filesystem;

namespace {

bool is_lower_hex(std::string_view s) {
  return s.size() == 32 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

bool safe_relative(const fs::path &p) {
  if (p.empty() || p.is_absolute() || p.has_root_name() || p.has_root_directory())
    return false;
  for (const auto &part : p)
    if (part == "..")
      return false;
  return true;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto &c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

class Md5 {
public:
  Md5() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_md5(), nullptr) != 1)
      throw Error("md5: digest initialisation failed");
  }
  void update(const char *data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1)
      throw Error("md5: digest update failed");
  }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest, &len) != 1)
      throw Error("md5: digest finalisation failed");
    static const char *digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[digest[i] >> 4];
      out += digits[digest[i] & 15];
    }
    return out;
  }

private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

} // namespace

std::vector<ManifestEntry> parse_manifest(std::istream &in) {
  std::vector<ManifestEntry> entries;
  std::set<fs::path> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto text = detail::rtrim(line);
    if (detail::trim(text).empty() || text.front() == '#')
      continue;
    auto fields = detail::split(text, '\t');
    if (fields.size() != 4)
      throw ParseError("manifest: expected 4 tab-separated fields", line_no);
    ManifestEntry e;
    e.url = std::string(detail::trim(fields[0]));
    if (e.url.empty())
      throw ParseError("manifest: empty url", line_no);
    e.expected_checksum = lower(detail::trim(fields[1]));
    if (!is_lower_hex(e.expected_checksum))
      throw ParseError("manifest: checksum must be 32 hex digits", line_no);
    auto size = detail::trim(fields[2]);
    if (size != "-") {
      auto v = detail::parse_u64(size);
      if (!v)
        throw ParseError("manifest: invalid size", line_no);
      e.expected_size = *v;
    }
    e.dest_path = fs::path(std::string(detail::trim(fields[3]))).lexically_normal();
    if (!safe_relative(e.dest_path))
      throw ParseError("manifest: destination must be a relative path without '..'", line_no);
    if (!seen.insert(e.dest_path).second)
      throw ParseError("manifest: duplicate destination " + e.dest_path.string(), line_no);
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> load_manifest(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

void write_manifest(std::ostream &out, const std::vector<ManifestEntry> &entries) {
  for (const auto &e : entries)
    out << e.url << '\t' << e.expected_checksum << '\t'
        << (e.expected_size ? std::to_string(*e.expected_size) : std::string("-")) << '\t'
        << e.dest_path.generic_string() << '\n';
}

std::string md5_hex(std::string_view bytes) {
  Md5 md5;
  md5.update(bytes.data(), bytes.size());
  return md5.hex();
}

std::string md5_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot read " + path.string());
  Md5 md5;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    md5.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  if (in.bad())
    throw IoError("read error on " + path.string());
  return md5.hex();
}

bool verify_checksum(const fs::path &path, std::string_view expected) {
  return md5_file(path) == lower(expected);
}

TransferOutcome HttpFetcher::get(const std::string &url, std::uint64_t offset,
                                 const std::function<void(bool)> &start,
                                 const std::function<bool(const char *, std::size_t)> &write) {
  static const std::regex pattern(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern))
    return {false, "unsupported url " + url};
  std::string path = m[2].matched ? m[2].str() : "/";

  httplib::Client client(m[1].str());
  auto secs = static_cast<time_t>(timeout_);
  auto usecs = static_cast<time_t>((timeout_ - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);

  httplib::Headers headers;
  if (offset > 0)
    headers.emplace("Range", "bytes=" + std::to_string(offset) + "-");
  int status = 0;
  bool started = false;
  auto result = client.Get(
      path, headers,
      [&](const httplib::Response &res) {
        status = res.status;
        if (status == 206 && offset > 0) {
          start(true);
        } else if (status == 200) {
          start(false);
        } else {
          return false;
        }
        started = true;
        return true;
      },
      [&](const char *data, std::size_t n) { return write(data, n); });
  if (!result) {
    if (!started && status != 0)
      return {false, "HTTP status " + std::to_string(status)};
    return {false, httplib::to_string(result.error())};
  }
  if (!started)
    return {false, "HTTP status " + std::to_string(result->status)};
  return {true, {}};
}

std::string to_string(FetchStatus status) {
  switch (status) {
  case FetchStatus::ok:
    return "ok";
  case FetchStatus::checksum_mismatch:
    return "checksum_mismatch";
  case FetchStatus::failed_after_retries:
    return "failed_after_retries";
  }
  return "?";
}

std::size_t FetchReport::count(FetchStatus status) const {
  return static_cast<std::size_t>(std::count_if(
      results.begin(), results.end(), [&](const FetchResult &r) { return r.status == status; }));
}

std::vector<double> backoff_schedule(const BackoffPolicy &policy, std::size_t retries,
                                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> delays;
  double previous = 0;
  for (std::size_t k = 0; k < retries; ++k) {
    double nominal = policy.base_seconds * std::pow(policy.factor, static_cast<double>(k));
    double jittered = nominal * (1.0 + policy.jitter * rng.uniform(-1.0, 1.0));
    double delay = std::max(previous, std::min(policy.cap_seconds, jittered));
    delays.push_back(delay);
    previous = delay;
  }
  return delays;
}

namespace {

std::uint64_t file_size_or_zero(const fs::path &path) {
  std::error_code ec;
  auto size = fs::file_size(path, ec);
  return ec ? 0 : size;
}

FetchResult fetch_one(const ManifestEntry &entry, const fs::path &out_dir, Fetcher &fetcher,
                      const FetchOptions &options, std::uint64_t seed) {
  FetchResult result;
  const fs::path path = out_dir / entry.dest_path;
  fs::create_directories(path.parent_path());

  // Already complete from an earlier run.
  if (fs::exists(path)) {
    auto size = file_size_or_zero(path);
    bool plausible = !entry.expected_size || size == *entry.expected_size;
    if (plausible && verify_checksum(path, entry.expected_checksum)) {
      result.status = FetchStatus::ok;
      result.skipped = true;
      return result;
    }
    if (entry.expected_size && size >= *entry.expected_size)
      fs::remove(path);
  }

  const auto retries = static_cast<std::size_t>(std::max(0, options.max_retries));
  auto delays = backoff_schedule(options.backoff, retries, seed);
  bool last_was_mismatch = false;
  for (std::size_t attempt = 0; attempt <= retries; ++attempt) {
    if (attempt > 0) {
      double delay = delays[attempt - 1];
      result.delays.push_back(delay);
      if (options.sleep)
        options.sleep(delay);
      else
        std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    ++result.attempts;
    const std::uint64_t offset = file_size_or_zero(path);
    std::ofstream out;
    std::uint64_t written = 0;
    std::uint64_t kept_before = offset;
    bool opened = false;
    bool open_failed = false;
    auto start = [&](bool resumed) {
      if (resumed) {
        out.open(path, std::ios::binary | std::ios::app);
        result.resumed = true;
      } else {
        out.open(path, std::ios::binary | std::ios::trunc);
        kept_before = 0;
        result.bytes_transferred = 0;
      }
      opened = static_cast<bool>(out);
      open_failed = !opened;
    };
    auto write = [&](const char *data, std::size_t n) {
      if (!opened)
        return false;
      if (entry.expected_size && kept_before + written + n > *entry.expected_size)
        return false;
      out.write(data, static_cast<std::streamsize>(n));
      written += n;
      result.bytes_received += n;
      return static_cast<bool>(out);
    };
    auto outcome = fetcher.get(entry.url, offset, start, write);
    out.close();
    result.bytes_transferred += written;
    if (!outcome.ok) {
      result.last_error = outcome.error.empty() ? "transfer failed" : outcome.error;
      if (open_failed)
        result.last_error = "cannot write " + path.string();
      last_was_mismatch = false;
      continue;
    }
    if (verify_checksum(path, entry.expected_checksum)) {
      result.status = FetchStatus::ok;
      result.last_error.clear();
      return result;
    }
    result.last_error = "checksum mismatch";
    last_was_mismatch = true;
    fs::remove(path);
    result.bytes_transferred = 0;
  }
  result.status =
      last_was_mismatch ? FetchStatus::checksum_mismatch : FetchStatus::failed_after_retries;
  return result;
}

} // namespace

FetchReport fetch_all(const std::vector<ManifestEntry> &entries, const fs::path &out_dir,
                      Fetcher &fetcher, const FetchOptions &options) {
  FetchReport report;
  report.results.resize(entries.size());
  parallel_for(entries.size(), std::max<std::size_t>(1, options.workers), [&](std::size_t i) {
    try {
      report.results[i] =
          fetch_one(entries[i], out_dir, fetcher, options, derive_seed(options.seed, i));
    } catch (const std::exception &e) {
      auto &r = report.results[i];
      r.status = FetchStatus::failed_after_retries;
      r.last_error = e.what();
      if (r.attempts == 0)
        r.attempts = 1;
    }
  });
  return report;
}

} // namespace sdforge::acquire
