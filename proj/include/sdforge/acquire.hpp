#pragma once

// Manifest-driven file acquisition with MD5 verification, resume, and retry.
//
// Manifest: one entry per line, TAB-separated
//   url  md5  size|-  dest_path
// Blank lines and lines starting with '#' are ignored.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sdforge::acquire {

struct ManifestEntry {
  std::string url;
  std::string expected_checksum;  // lowercase hex, 32 chars
  std::optional<std::uint64_t> expected_size;
  std::filesystem::path dest_path;  // relative, no ".." components

  bool operator==(const ManifestEntry &) const = default;
};

std::vector<ManifestEntry> parse_manifest(std::istream &in);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path &path);
void write_manifest(std::ostream &out, const std::vector<ManifestEntry> &entries);

std::string md5_hex(std::string_view bytes);
// Throws IoError if the file cannot be read.
std::string md5_file(const std::filesystem::path &path);
// Case-insensitive digest comparison.
bool verify_checksum(const std::filesystem::path &path, std::string_view expected);

struct TransferOutcome {
  bool ok = false;  // body received completely
  std::string error;
};

// Transport abstraction. get() requests `url` from byte `offset`, calls
// start(resumed) once before any data (resumed is false when the server
// ignored the range and is sending from byte 0), then write() per chunk.
// A write() returning false cancels the transfer.
class Fetcher {
public:
  virtual ~Fetcher() = default;
  virtual TransferOutcome get(const std::string &url, std::uint64_t offset,
                              const std::function<void(bool resumed)> &start,
                              const std::function<bool(const char *, std::size_t)> &write) = 0;
};

// Plain HTTP via cpp-httplib, with Range requests for resume.
class HttpFetcher : public Fetcher {
public:
  explicit HttpFetcher(double timeout_seconds = 30.0) : timeout_(timeout_seconds) {}
  TransferOutcome get(const std::string &url, std::uint64_t offset,
                      const std::function<void(bool)> &start,
                      const std::function<bool(const char *, std::size_t)> &write) override;

private:
  double timeout_;
};

enum class FetchStatus { ok, checksum_mismatch, failed_after_retries };

std::string to_string(FetchStatus status);

struct FetchResult {
  FetchStatus status = FetchStatus::failed_after_retries;
  int attempts = 0;
  // Network bytes kept in the final file (excludes bytes already on disk
  // before this call).
  std::uint64_t bytes_transferred = 0;
  // All network bytes received, including discarded attempts.
  std::uint64_t bytes_received = 0;
  bool resumed = false;
  bool skipped = false;  // already present and verified; attempts == 0
  std::vector<double> delays;  // seconds slept before attempts 2, 3, ...
  std::string last_error;
};

struct FetchReport {
  std::vector<FetchResult> results;  // manifest order

  std::size_t count(FetchStatus status) const;
  bool all_ok() const { return count(FetchStatus::ok) == results.size(); }
};

struct BackoffPolicy {
  double base_seconds = 0.5;
  double factor = 2.0;
  double jitter = 0.2;  // +/- fraction
  double cap_seconds = 30.0;
};

// Delays before retries 1..n for one entry: base * factor^(k-1) with jitter,
// capped, and forced non-decreasing.
std::vector<double> backoff_schedule(const BackoffPolicy &policy, std::size_t retries,
                                     std::uint64_t seed);

struct FetchOptions {
  std::size_t workers = 4;
  int max_retries = 3;
  BackoffPolicy backoff;
  std::uint64_t seed = 0;
  // Replaced in tests to avoid real sleeps.
  std::function<void(double seconds)> sleep;
};

FetchReport fetch_all(const std::vector<ManifestEntry> &entries,
                      const std::filesystem::path &out_dir, Fetcher &fetcher,
                      const FetchOptions &options = {});

} // namespace sdforge::acquire
