#include "byteshield/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "byteshield/errors.hpp"
#include "byteshield/io.hpp"
#include "byteshield/pe.hpp"
#include "parallel.hpp"

namespace byteshield {

// ---- YearMonth ------------------------------------------------------------------

YearMonth YearMonth::parse(std::string_view text) {
  auto digits = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (text.size() != 7 || text[4] != '-' || !digits(text.substr(0, 4)) || !digits(text.substr(5, 2))) {
    throw Error(Errc::kInvalidArgument, "timestamp '" + std::string(text) + "' is not YYYY-MM");
  }
  YearMonth ym;
  ym.year = std::stoi(std::string(text.substr(0, 4)));
  ym.month = std::stoi(std::string(text.substr(5, 2)));
  if (ym.month < 1 || ym.month > 12) {
    throw Error(Errc::kInvalidArgument, "timestamp '" + std::string(text) + "' has month outside 01..12");
  }
  return ym;
}

std::string YearMonth::to_string() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

YearMonth YearMonth::plus(int months) const {
  const int s = serial() + months;
  return {s / 12, s % 12 + 1};
}

std::string label_name(int label) { return label == 1 ? "malicious" : "benign"; }

// ---- synthetic generation -------------------------------------------------------

void SynthSpec::validate() const {
  if (count_per_class == 0) throw Error(Errc::kInvalidArgument, "count per class must be >= 1");
  if (min_size < kMinSynthSize) {
    throw Error(Errc::kInvalidArgument,
                "minimum size " + std::to_string(min_size) + " is below the smallest PE template (" +
                    std::to_string(kMinSynthSize) + " bytes)");
  }
  if (max_size < min_size) throw Error(Errc::kInvalidArgument, "size range is empty (max < min)");
  if (signature_count == 0 || marker_count == 0) {
    throw Error(Errc::kInvalidArgument, "need at least one signature and one marker");
  }
  if (signature_length < 8 || marker_length < 8) {
    throw Error(Errc::kInvalidArgument, "patterns must be at least 8 bytes long");
  }
  if (signature_length + 64 > min_size - 0x400 || marker_length + 64 > min_size - 0x400) {
    throw Error(Errc::kInvalidArgument, "patterns do not fit the smallest file");
  }
  if (marker_spacing == 0 || signature_spacing == 0) throw Error(Errc::kInvalidArgument, "spacing must be >= 1");
  if (months < 0) throw Error(Errc::kInvalidArgument, "months must be >= 0");
  if (!(drift_rate >= 0 && drift_rate <= 1)) throw Error(Errc::kInvalidArgument, "drift rate must be in [0, 1]");
  if (months > 0) YearMonth::parse(start);
}

nlohmann::json SynthSpec::to_json() const {
  return {{"count_per_class", count_per_class},
          {"min_size", min_size},
          {"max_size", max_size},
          {"signature_count", signature_count},
          {"signature_length", signature_length},
          {"marker_count", marker_count},
          {"marker_length", marker_length},
          {"marker_spacing", marker_spacing},
          {"signature_spacing", signature_spacing},
          {"months", months},
          {"start", start},
          {"drift_rate", drift_rate},
          {"seed", seed}};
}

namespace {

// Marker bytes come from small reserved alphabets that the background
// generator never emits in long runs. Drifted markers use a disjoint set.
constexpr std::uint8_t kMarkerAlphabet[] = {0x8A, 0x93, 0x9C, 0xA5, 0xAE, 0xB7, 0xC0, 0xC9};
constexpr std::uint8_t kDriftAlphabet[] = {0xD2, 0xDB, 0xE4, 0xED, 0xF6, 0x8F, 0x98, 0xA1};
// Fixed pool seed so separately generated splits share their patterns.
constexpr std::uint64_t kPatternSeed = 0x5EEDBA5Eull;
constexpr std::size_t kFamilies = 8;

std::vector<std::vector<std::uint8_t>> make_patterns(std::size_t count, std::size_t length,
                                                     std::span<const std::uint8_t> alphabet,
                                                     std::mt19937_64& rng) {
  std::set<std::vector<std::uint8_t>> seen;
  std::vector<std::vector<std::uint8_t>> out;
  while (out.size() < count) {
    std::vector<std::uint8_t> p(length);
    for (auto& b : p) {
      b = alphabet.empty() ? static_cast<std::uint8_t>(rng() & 0xFF) : alphabet[rng() % alphabet.size()];
    }
    if (seen.insert(p).second) out.push_back(std::move(p));
  }
  return out;
}

void fill_background(std::span<std::uint8_t> out, std::mt19937_64& rng) {
  static constexpr std::uint8_t kCodeLike[] = {0x00, 0x01, 0x04, 0x08, 0x0F, 0x24, 0x48, 0x4C, 0x50, 0x55,
                                               0x5D, 0x74, 0x75, 0x83, 0x85, 0x89, 0x8B, 0xC3, 0xCC, 0xE8,
                                               0xE9, 0xEB, 0xFF, 0x10, 0x20, 0x45, 0x5B, 0x5E, 0x31, 0xC7};
  static constexpr char kText[] = "abcdefghijklmnopqrstuvwxyz      ETAOINSHRDLU.,0123456789";
  std::size_t i = 0;
  while (i < out.size()) {
    const std::size_t len = std::min<std::size_t>(out.size() - i, 32 + rng() % 225);
    const unsigned kind = static_cast<unsigned>(rng() % 10);
    for (std::size_t j = 0; j < len; ++j) {
      std::uint8_t b;
      if (kind < 5) {
        b = static_cast<std::uint8_t>(rng() & 0xFF);
      } else if (kind < 7) {
        b = 0;
      } else if (kind < 9) {
        b = static_cast<std::uint8_t>(kText[rng() % (sizeof kText - 1)]);
      } else {
        b = kCodeLike[rng() % sizeof kCodeLike];
      }
      out[i + j] = b;
    }
    i += len;
  }
}

// Drops `pattern` at roughly `spacing`-byte intervals across the live part
// of every section. Returns the number planted.
std::size_t plant(pe::PEImage& img, const std::vector<std::vector<std::uint8_t>>& pool,
                  std::span<const std::size_t> choices, std::size_t spacing, std::mt19937_64& rng) {
  std::size_t planted = 0;
  for (auto& sec : img.sections) {
    const std::size_t live = std::min<std::size_t>(sec.header.virtual_size, sec.data.size());
    std::size_t cursor = rng() % (spacing / 2 + 1);
    while (true) {
      const auto& p = pool[choices[rng() % choices.size()]];
      if (cursor + p.size() > live) break;
      std::copy(p.begin(), p.end(), sec.data.begin() + static_cast<std::ptrdiff_t>(cursor));
      ++planted;
      cursor += p.size() + spacing / 2 + rng() % (spacing + 1);
    }
  }
  if (planted == 0) {
    // Small file: force one occurrence at the start of the largest section.
    auto it = std::max_element(img.sections.begin(), img.sections.end(), [](const auto& a, const auto& b) {
      return a.header.virtual_size < b.header.virtual_size;
    });
    const auto& p = pool[choices[0]];
    std::copy(p.begin(), p.end(), it->data.begin());
    planted = 1;
  }
  return planted;
}

pe::PEImage template_image(std::size_t target, std::mt19937_64& rng) {
  static constexpr const char* kNames[] = {".text", ".rdata", ".data", ".rsrc"};
  static constexpr std::uint32_t kFlags[] = {0x60000020, 0x40000040, 0xC0000040, 0x40000040};
  constexpr std::uint32_t kFileAlign = 0x200, kSectAlign = 0x1000, kHeaders = 0x400;

  pe::PEImage img;
  img.dos_header[0] = 'M';
  img.dos_header[1] = 'Z';
  img.e_lfanew = 0x80;
  img.dos_stub.assign(0x80 - pe::kDosHeaderSize, 0);
  static constexpr char kStub[] = "This program cannot be run in DOS mode.\r\r\n$";
  std::copy(std::begin(kStub), std::end(kStub) - 1, img.dos_stub.begin() + 14);
  img.coff.machine = 0x14C;
  img.coff.time_date_stamp = static_cast<std::uint32_t>(0x5C000000 + rng() % 0x4000000);
  img.coff.size_of_optional_header = 224;
  img.coff.characteristics = 0x0102;
  img.optional.raw.assign(224, 0);
  img.optional.magic = pe::kPe32Magic;
  img.optional.section_alignment = kSectAlign;
  img.optional.file_alignment = kFileAlign;
  img.optional.size_of_headers = kHeaders;
  img.optional.address_of_entry_point = 0x1000;
  // Subsystem (GUI/console) and NumberOfRvaAndSizes, for realism only.
  img.optional.raw[68] = static_cast<std::uint8_t>(2 + rng() % 2);
  img.optional.raw[92] = 16;

  const std::size_t blocks = (target - kHeaders) / kFileAlign;
  const std::size_t nsec = std::min<std::size_t>(2 + rng() % 3, blocks);
  // Every section gets one block, the rest are dealt at random.
  std::vector<std::size_t> share(nsec, 1);
  for (std::size_t b = nsec; b < blocks; ++b) ++share[rng() % nsec];

  std::uint32_t raw = kHeaders, va = kSectAlign;
  for (std::size_t i = 0; i < nsec; ++i) {
    pe::Section s;
    const std::string name = kNames[i];
    std::copy(name.begin(), name.end(), s.header.name.begin());
    const std::uint32_t size = static_cast<std::uint32_t>(share[i] * kFileAlign);
    s.header.size_of_raw_data = size;
    s.header.virtual_size = size - static_cast<std::uint32_t>(rng() % 0x180);
    s.header.virtual_address = va;
    s.header.pointer_to_raw_data = raw;
    s.header.characteristics = kFlags[i];
    s.data.assign(size, 0);
    fill_background(std::span<std::uint8_t>(s.data).first(s.header.virtual_size), rng);
    raw += size;
    va += static_cast<std::uint32_t>(pe::align_up(size, kSectAlign));
    img.sections.push_back(std::move(s));
  }
  img.coff.number_of_sections = static_cast<std::uint16_t>(nsec);
  img.optional.size_of_image = va;
  img.overlay.resize(target - raw);
  fill_background(img.overlay, rng);
  // Header padding between the section table and the first section.
  img.gaps.push_back({static_cast<std::uint32_t>(img.section_table_end()),
                      std::vector<std::uint8_t>(kHeaders - img.section_table_end(), 0)});
  return img;
}

bool has_marker_run(std::span<const std::uint8_t> bytes) {
  // Eight consecutive marker-alphabet bytes.
  std::size_t run = 0;
  for (const std::uint8_t b : bytes) {
    const bool in = std::find(std::begin(kMarkerAlphabet), std::end(kMarkerAlphabet), b) != std::end(kMarkerAlphabet) ||
                    std::find(std::begin(kDriftAlphabet), std::end(kDriftAlphabet), b) != std::end(kDriftAlphabet);
    run = in ? run + 1 : 0;
    if (run >= 8) return true;
  }
  return false;
}

}  // namespace

bool contains_any(std::span<const std::uint8_t> bytes, const std::vector<std::vector<std::uint8_t>>& patterns) {
  for (const auto& p : patterns) {
    if (std::search(bytes.begin(), bytes.end(), std::boyer_moore_horspool_searcher(p.begin(), p.end())) !=
        bytes.end()) {
      return true;
    }
  }
  return false;
}

SynthCorpus gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  SynthCorpus c;
  c.spec = spec;
  std::mt19937_64 prng(kPatternSeed);
  c.signatures = make_patterns(spec.signature_count, spec.signature_length, {}, prng);
  c.markers = make_patterns(spec.marker_count, spec.marker_length, kMarkerAlphabet, prng);
  c.drifted_signatures = make_patterns(spec.signature_count, spec.signature_length, {}, prng);
  c.drifted_markers = make_patterns(spec.marker_count, spec.marker_length, kDriftAlphabet, prng);
  for (const auto* pool : {&c.signatures, &c.drifted_signatures}) {
    for (const auto& p : *pool) {
      if (has_marker_run(p)) throw Error(Errc::kInvalidArgument, "signature pool collides with markers");
    }
  }

  const std::size_t n = spec.count_per_class;
  const YearMonth start = spec.months > 0 ? YearMonth::parse(spec.start) : YearMonth{};
  c.files.resize(2 * n);
  detail::parallel_for(2 * n, spec.jobs, [&](std::size_t k) {
    const int label = static_cast<int>(k % 2);
    const std::size_t i = k / 2;
    SynthFile& f = c.files[k];
    f.label = label;
    char name[64];
    std::snprintf(name, sizeof name, "%s_%05zu.exe", label ? "malicious" : "benign", i);
    f.name = name;

    if (spec.months > 0) {
      const std::size_t m = i % static_cast<std::size_t>(spec.months);
      const std::size_t rank = i / static_cast<std::size_t>(spec.months);
      const std::size_t in_month = n / spec.months + (m < n % spec.months ? 1 : 0);
      const double frac = std::min(1.0, spec.drift_rate * static_cast<double>(m));
      f.month = start.plus(static_cast<int>(m));
      f.drifted = static_cast<double>(rank) < std::round(frac * static_cast<double>(in_month));
    }

    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(seq);
    const std::size_t target = spec.min_size + rng() % (spec.max_size - spec.min_size + 1);
    const auto& own = label ? (f.drifted ? c.drifted_signatures : c.signatures)
                            : (f.drifted ? c.drifted_markers : c.markers);
    // Each malicious family draws from its own slice of the signature pool.
    std::vector<std::size_t> choices;
    const std::size_t family = rng() % kFamilies;
    for (std::size_t j = 0; j < own.size(); ++j) {
      if (!label || own.size() < kFamilies || j % kFamilies == family) choices.push_back(j);
    }
    if (label) f.family = "fam" + std::to_string(family) + (f.drifted ? "-v2" : "");

    for (int attempt = 0;; ++attempt) {
      pe::PEImage img = template_image(target, rng);
      plant(img, own, choices, label ? spec.signature_spacing : spec.marker_spacing, rng);
      f.bytes = pe::serialize_pe(img);
      const bool ok = label ? !has_marker_run(f.bytes)
                            : !contains_any(f.bytes, c.signatures) && !contains_any(f.bytes, c.drifted_signatures);
      if (ok) break;
      if (attempt == 16) throw Error(Errc::kInvalidArgument, "could not generate a clean " + f.name);
    }
  });
  return c;
}

// ---- manifests ------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(std::string_view line, std::size_t lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"' && cur.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
      was_quoted = false;
    } else if (was_quoted) {
      throw Error(Errc::kManifest, "line " + std::to_string(lineno) + ": text after closing quote");
    } else {
      cur.push_back(ch);
    }
  }
  if (quoted) throw Error(Errc::kManifest, "line " + std::to_string(lineno) + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::filesystem::path resolve(const ManifestRecord& r, const std::filesystem::path& root) {
  const std::filesystem::path p(r.path);
  return p.is_absolute() ? p : root / p;
}

std::vector<ManifestRecord> load_manifest(std::string_view csv, const std::filesystem::path& root,
                                          bool check_files) {
  std::vector<ManifestRecord> out;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t lineno = 0;
  int col_path = -1, col_label = -1, col_time = -1, col_family = -1;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line, lineno);
    for (auto& f : fields) f = trim(f);
    if (!header) {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        const int idx = static_cast<int>(i);
        if (fields[i] == "path") col_path = idx;
        else if (fields[i] == "label") col_label = idx;
        else if (fields[i] == "timestamp") col_time = idx;
        else if (fields[i] == "family") col_family = idx;
        else throw Error(Errc::kManifest, "line " + std::to_string(lineno) + ": unknown column '" + fields[i] + "'");
      }
      if (col_path < 0 || col_label < 0) {
        throw Error(Errc::kManifest, "line " + std::to_string(lineno) + ": header must name path and label columns");
      }
      header = true;
      continue;
    }
    const std::string where = "line " + std::to_string(lineno) + ": ";
    auto field = [&](int col) -> std::string {
      return col >= 0 && static_cast<std::size_t>(col) < fields.size() ? fields[static_cast<std::size_t>(col)] : "";
    };
    if (fields.size() > static_cast<std::size_t>(std::max({col_path, col_label, col_time, col_family})) + 1) {
      throw Error(Errc::kManifest, where + "too many fields");
    }
    ManifestRecord r;
    r.path = field(col_path);
    if (r.path.empty()) throw Error(Errc::kManifest, where + "empty path");
    const std::string label = field(col_label);
    if (label == "malicious") r.label = 1;
    else if (label == "benign") r.label = 0;
    else throw Error(Errc::kManifest, where + "bad label '" + label + "' (expected benign or malicious)");
    const std::string ts = field(col_time);
    if (!ts.empty()) {
      try {
        r.timestamp = YearMonth::parse(ts);
      } catch (const Error& e) {
        throw Error(Errc::kManifest, where + e.what());
      }
    }
    r.family = field(col_family);
    if (check_files && !std::filesystem::is_regular_file(resolve(r, root))) {
      throw Error(Errc::kManifest, where + "missing file " + resolve(r, root).string());
    }
    out.push_back(std::move(r));
  }
  if (!header) throw Error(Errc::kManifest, "manifest has no header row");
  return out;
}

std::vector<ManifestRecord> load_manifest_file(const std::filesystem::path& path, bool check_files) {
  return load_manifest(read_text_file(path.string()), path.parent_path(), check_files);
}

std::string write_manifest(const std::vector<ManifestRecord>& records) {
  std::string out = "path,label,timestamp,family\n";
  for (const auto& r : records) {
    out += quote_csv(r.path) + "," + label_name(r.label) + "," + (r.timestamp ? r.timestamp->to_string() : "") +
           "," + quote_csv(r.family) + "\n";
  }
  return out;
}

std::map<YearMonth, std::vector<std::size_t>> bucket_by_month(const std::vector<ManifestRecord>& records) {
  std::map<YearMonth, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].timestamp) out[*records[i].timestamp].push_back(i);
  }
  return out;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRecord> records;
  records.reserve(corpus.files.size());
  for (const auto& f : corpus.files) {
    write_file_atomic((dir / f.name).string(), f.bytes);
    records.push_back({f.name, f.label, f.month, f.family});
  }
  write_text_atomic((dir / "manifest.csv").string(), write_manifest(records));
  nlohmann::json meta = {{"spec", corpus.spec.to_json()}, {"files", corpus.files.size()}};
  write_text_atomic((dir / "corpus.json").string(), meta.dump(2) + "\n");
}

}  // namespace byteshield
