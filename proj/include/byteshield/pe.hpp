#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "byteshield/errors.hpp"

// Minimal Portable Executable model. Only the fields the payload-placement
// transforms touch are interpreted; everything else is carried verbatim so
// that serialize(parse(bytes)) == bytes.
namespace byteshield::pe {

enum class PeErrc {
  kMissingMz,
  kLfanewOutOfBounds,
  kMissingPeSignature,
  kTruncatedHeaders,
  kBadOptionalHeader,
  kTruncatedSectionTable,
  kTooManySections,
  kInvalidAlignment,
  kMisalignedSection,
  kSectionOutOfBounds,
  kOverlappingSections,
  kSectionCountMismatch,
  kLayoutHole,
  kTooManyNewSections,
  kTooManyCaves,
  kAddressSpaceExhausted,
  kAlignmentOverflow,
  kBadArgument,
};

const char* to_string(PeErrc code);

class PeError : public Error {
 public:
  PeError(PeErrc code, const std::string& detail);
  PeErrc pe_code() const noexcept { return pe_code_; }

 private:
  PeErrc pe_code_;
};

inline constexpr std::size_t kDosHeaderSize = 64;
inline constexpr std::size_t kCoffHeaderSize = 20;
inline constexpr std::size_t kSectionHeaderSize = 40;
inline constexpr std::size_t kMaxSections = 96;
inline constexpr std::size_t kMaxNewSections = 5;
inline constexpr std::uint16_t kPe32Magic = 0x10b;
inline constexpr std::uint16_t kPe32PlusMagic = 0x20b;

// IMAGE_SCN_CNT_INITIALIZED_DATA | IMAGE_SCN_MEM_READ
inline constexpr std::uint32_t kInertSectionFlags = 0x40000040;

struct CoffHeader {
  std::uint16_t machine = 0;
  std::uint16_t number_of_sections = 0;
  std::uint32_t time_date_stamp = 0;
  std::uint32_t pointer_to_symbol_table = 0;
  std::uint32_t number_of_symbols = 0;
  std::uint16_t size_of_optional_header = 0;
  std::uint16_t characteristics = 0;
};

// Modeled optional-header fields. The same offsets hold for PE32 and PE32+.
struct OptionalHeader {
  std::uint16_t magic = 0;                     // +0
  std::uint32_t address_of_entry_point = 0;    // +16
  std::uint32_t section_alignment = 0;         // +32
  std::uint32_t file_alignment = 0;            // +36
  std::uint32_t size_of_image = 0;             // +56
  std::uint32_t size_of_headers = 0;           // +60
  std::vector<std::uint8_t> raw;               // full optional header, re-emitted with the fields above patched
};

struct SectionHeader {
  std::array<std::uint8_t, 8> name{};
  std::uint32_t virtual_size = 0;
  std::uint32_t virtual_address = 0;
  std::uint32_t size_of_raw_data = 0;
  std::uint32_t pointer_to_raw_data = 0;
  std::uint32_t pointer_to_relocations = 0;
  std::uint32_t pointer_to_linenumbers = 0;
  std::uint16_t number_of_relocations = 0;
  std::uint16_t number_of_linenumbers = 0;
  std::uint32_t characteristics = 0;

  std::string name_string() const;
  bool has_raw_data() const noexcept { return size_of_raw_data != 0; }
  std::uint64_t raw_end() const noexcept { return std::uint64_t{pointer_to_raw_data} + size_of_raw_data; }
};

struct Section {
  SectionHeader header;
  std::vector<std::uint8_t> data;  // exactly size_of_raw_data bytes
};

// Bytes between structures (header padding, inter-section filler).
struct Gap {
  std::uint32_t offset = 0;
  std::vector<std::uint8_t> bytes;
};

struct ByteRange {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::uint64_t end() const noexcept { return offset + length; }
  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct PEImage {
  std::array<std::uint8_t, kDosHeaderSize> dos_header{};  // e_lfanew patched on write
  std::uint32_t e_lfanew = 0;
  std::vector<std::uint8_t> dos_stub;                     // [64, e_lfanew)
  CoffHeader coff;
  OptionalHeader optional;
  std::vector<Section> sections;  // section-table order
  std::vector<Gap> gaps;          // sorted by offset
  std::vector<std::uint8_t> overlay;

  bool is_pe32_plus() const noexcept { return optional.magic == kPe32PlusMagic; }
  std::uint64_t section_table_offset() const noexcept;
  std::uint64_t section_table_end() const noexcept;
  // End of the last structure; the overlay starts here.
  std::uint64_t overlay_offset() const;
  std::uint64_t file_size() const;
};

PEImage parse_pe(std::span<const std::uint8_t> bytes);

// Checks every structural invariant; throws PeError on the first violation.
void validate(const PEImage& img);

std::vector<std::uint8_t> serialize_pe(const PEImage& img);

std::uint64_t align_up(std::uint64_t value, std::uint64_t alignment);

struct Transformed {
  PEImage image;
  std::vector<ByteRange> injected;  // file order, pairwise disjoint
};

PEImage append_overlay(const PEImage& img, std::span<const std::uint8_t> payload);

// Inserts align_up(gap, file_alignment) zero bytes before the first
// section's raw data and fixes up every raw pointer and SizeOfHeaders.
Transformed shift_insert(const PEImage& img, std::uint64_t gap);

// Appends an aligned zero cave after the raw data of the i-th section (file
// order) for each requested size; later sections move down.
Transformed carve_caves(const PEImage& img, std::span<const std::uint64_t> cave_sizes);

// Appends up to five new inert sections after the existing ones. Shifts the
// headers first when the section table has no room for the new entries.
Transformed inject_sections(const PEImage& img, std::span<const std::uint64_t> sizes,
                            std::span<const std::string> names);

// Alignment slack inside sections (virtual_size < size_of_raw_data) and
// filler between sections. Sorted, pairwise disjoint.
std::vector<ByteRange> slack_regions(const PEImage& img);

// Sections with raw data, ordered by file offset (indices into sections).
std::vector<std::size_t> file_order(const PEImage& img);

// Fields needed by tooling and tests.
std::string describe(const PEImage& img);

}  // namespace byteshield::pe
