#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace byteshield {

struct YearMonth {
  int year = 0;
  int month = 0;  // 1..12

  // Strict "YYYY-MM"; throws Errc::kInvalidArgument.
  static YearMonth parse(std::string_view text);
  std::string to_string() const;
  YearMonth plus(int months) const;
  int serial() const noexcept { return year * 12 + (month - 1); }

  friend auto operator<=>(const YearMonth&, const YearMonth&) = default;
};

// ---- synthetic corpus -----------------------------------------------------

struct SynthSpec {
  std::size_t count_per_class = 100;
  std::size_t min_size = 4096;
  std::size_t max_size = 16384;
  std::size_t signature_count = 64;   // distinct malicious signatures
  std::size_t signature_length = 16;
  std::size_t marker_count = 32;      // distinct benign markers
  std::size_t marker_length = 16;
  std::size_t marker_spacing = 320;   // mean gap between planted markers
  std::size_t signature_spacing = 768;
  // Timestamps: files are spread round-robin over `months` months from
  // `start`. Zero months leaves timestamps empty.
  int months = 0;
  std::string start = "2019-09";
  // Fraction of a month's files whose planted patterns come from the
  // drifted pools grows by this much per month (capped at 1).
  double drift_rate = 0.0;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

// Smallest file the template can produce: headers plus two sections.
inline constexpr std::size_t kMinSynthSize = 0x400 + 2 * 0x200;

struct SynthFile {
  std::string name;
  int label = 0;  // 1 = malicious
  std::optional<YearMonth> month;
  std::string family;
  bool drifted = false;
  std::vector<std::uint8_t> bytes;
};

struct SynthCorpus {
  SynthSpec spec;
  std::vector<std::vector<std::uint8_t>> signatures, markers;
  std::vector<std::vector<std::uint8_t>> drifted_signatures, drifted_markers;
  std::vector<SynthFile> files;  // benign and malicious interleaved
};

SynthCorpus gen_synthetic(const SynthSpec& spec);

// True if any pattern occurs in bytes (plain substring search).
bool contains_any(std::span<const std::uint8_t> bytes, const std::vector<std::vector<std::uint8_t>>& patterns);

// ---- manifests ------------------------------------------------------------

struct ManifestRecord {
  std::string path;
  int label = 0;
  std::optional<YearMonth> timestamp;
  std::string family;
};

// CSV with header path,label,timestamp,family (timestamp, family optional
// columns). Relative paths resolve against root. Errors name the line.
std::vector<ManifestRecord> load_manifest(std::string_view csv, const std::filesystem::path& root,
                                          bool check_files = true);
std::vector<ManifestRecord> load_manifest_file(const std::filesystem::path& path, bool check_files = true);

// Canonical form: fixed header, one row per record, quoting only when needed.
std::string write_manifest(const std::vector<ManifestRecord>& records);

std::filesystem::path resolve(const ManifestRecord& r, const std::filesystem::path& root);

// Record indices grouped by month, ascending. Untimestamped rows are skipped.
std::map<YearMonth, std::vector<std::size_t>> bucket_by_month(const std::vector<ManifestRecord>& records);

// Writes every file, manifest.csv and corpus.json (spec echo) under dir.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

std::string label_name(int label);

}  // namespace byteshield
