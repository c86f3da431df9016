#include "byteshield/pe.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

namespace byteshield::pe {

const char* to_string(PeErrc code) {
  switch (code) {
    case PeErrc::kMissingMz: return "missing MZ magic";
    case PeErrc::kLfanewOutOfBounds: return "e_lfanew out of bounds";
    case PeErrc::kMissingPeSignature: return "missing PE signature";
    case PeErrc::kTruncatedHeaders: return "truncated headers";
    case PeErrc::kBadOptionalHeader: return "bad optional header";
    case PeErrc::kTruncatedSectionTable: return "truncated section table";
    case PeErrc::kTooManySections: return "too many sections";
    case PeErrc::kInvalidAlignment: return "invalid alignment";
    case PeErrc::kMisalignedSection: return "misaligned section";
    case PeErrc::kSectionOutOfBounds: return "section data out of bounds";
    case PeErrc::kOverlappingSections: return "overlapping sections";
    case PeErrc::kSectionCountMismatch: return "section count mismatch";
    case PeErrc::kLayoutHole: return "layout hole";
    case PeErrc::kTooManyNewSections: return "too many new sections";
    case PeErrc::kTooManyCaves: return "more caves than sections";
    case PeErrc::kAddressSpaceExhausted: return "virtual address space exhausted";
    case PeErrc::kAlignmentOverflow: return "alignment overflow";
    case PeErrc::kBadArgument: return "bad argument";
  }
  return "pe error";
}

PeError::PeError(PeErrc code, const std::string& detail)
    : Error(Errc::kPeFormat, std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)),
      pe_code_(code) {}

namespace {

constexpr std::uint64_t kU32Max = std::numeric_limits<std::uint32_t>::max();

std::uint16_t rd16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

std::uint32_t rd32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void wr16(std::span<std::uint8_t> b, std::size_t off, std::uint16_t v) {
  b[off] = static_cast<std::uint8_t>(v);
  b[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

void wr32(std::span<std::uint8_t> b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

bool power_of_two(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::uint32_t to_u32(std::uint64_t v, PeErrc code, const char* what) {
  if (v > kU32Max) throw PeError(code, what);
  return static_cast<std::uint32_t>(v);
}

SectionHeader read_section_header(std::span<const std::uint8_t> b, std::size_t off) {
  SectionHeader h;
  std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(off), 8, h.name.begin());
  h.virtual_size = rd32(b, off + 8);
  h.virtual_address = rd32(b, off + 12);
  h.size_of_raw_data = rd32(b, off + 16);
  h.pointer_to_raw_data = rd32(b, off + 20);
  h.pointer_to_relocations = rd32(b, off + 24);
  h.pointer_to_linenumbers = rd32(b, off + 28);
  h.number_of_relocations = rd16(b, off + 32);
  h.number_of_linenumbers = rd16(b, off + 34);
  h.characteristics = rd32(b, off + 36);
  return h;
}

void write_section_header(std::span<std::uint8_t> b, std::size_t off, const SectionHeader& h) {
  std::copy(h.name.begin(), h.name.end(), b.begin() + static_cast<std::ptrdiff_t>(off));
  wr32(b, off + 8, h.virtual_size);
  wr32(b, off + 12, h.virtual_address);
  wr32(b, off + 16, h.size_of_raw_data);
  wr32(b, off + 20, h.pointer_to_raw_data);
  wr32(b, off + 24, h.pointer_to_relocations);
  wr32(b, off + 28, h.pointer_to_linenumbers);
  wr16(b, off + 32, h.number_of_relocations);
  wr16(b, off + 34, h.number_of_linenumbers);
  wr32(b, off + 36, h.characteristics);
}

// Shifts every section pointer and gap at or beyond `from` by `delta`,
// skipping section `except`.
void shift_from(PEImage& img, std::uint64_t from, std::uint64_t delta,
                std::size_t except = static_cast<std::size_t>(-1)) {
  for (std::size_t i = 0; i < img.sections.size(); ++i) {
    SectionHeader& h = img.sections[i].header;
    if (i == except || !h.has_raw_data() || h.pointer_to_raw_data < from) continue;
    h.pointer_to_raw_data = to_u32(h.pointer_to_raw_data + delta, PeErrc::kAlignmentOverflow, "raw pointer");
  }
  for (Gap& g : img.gaps) {
    if (g.offset >= from) g.offset = to_u32(g.offset + delta, PeErrc::kAlignmentOverflow, "gap offset");
  }
}

void sort_gaps(PEImage& img) {
  std::stable_sort(img.gaps.begin(), img.gaps.end(),
                   [](const Gap& a, const Gap& b) { return a.offset < b.offset; });
}

void insert_gap(PEImage& img, std::uint64_t offset, std::uint64_t length) {
  img.gaps.push_back({to_u32(offset, PeErrc::kAlignmentOverflow, "gap offset"),
                      std::vector<std::uint8_t>(length, 0)});
  sort_gaps(img);
}

}  // namespace

std::string SectionHeader::name_string() const {
  std::string s;
  for (const std::uint8_t c : name) {
    if (c == 0) break;
    s.push_back(static_cast<char>(c));
  }
  return s;
}

std::uint64_t PEImage::section_table_offset() const noexcept {
  return std::uint64_t{e_lfanew} + 4 + kCoffHeaderSize + coff.size_of_optional_header;
}

std::uint64_t PEImage::section_table_end() const noexcept {
  return section_table_offset() + kSectionHeaderSize * sections.size();
}

std::uint64_t PEImage::overlay_offset() const {
  std::uint64_t end = section_table_end();
  for (const Section& s : sections) {
    if (s.header.has_raw_data()) end = std::max(end, s.header.raw_end());
  }
  for (const Gap& g : gaps) end = std::max<std::uint64_t>(end, g.offset + g.bytes.size());
  return end;
}

std::uint64_t PEImage::file_size() const { return overlay_offset() + overlay.size(); }

std::uint64_t align_up(std::uint64_t value, std::uint64_t alignment) {
  if (alignment == 0) throw PeError(PeErrc::kInvalidAlignment, "zero alignment");
  const std::uint64_t r = value % alignment;
  if (r == 0) return value;
  if (value > std::numeric_limits<std::uint64_t>::max() - (alignment - r)) {
    throw PeError(PeErrc::kAlignmentOverflow, "align_up");
  }
  return value + (alignment - r);
}

std::vector<std::size_t> file_order(const PEImage& img) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < img.sections.size(); ++i) {
    if (img.sections[i].header.has_raw_data()) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return img.sections[a].header.pointer_to_raw_data < img.sections[b].header.pointer_to_raw_data;
  });
  return order;
}

PEImage parse_pe(std::span<const std::uint8_t> bytes) {
  PEImage img;
  if (bytes.size() < kDosHeaderSize || bytes[0] != 'M' || bytes[1] != 'Z') {
    throw PeError(PeErrc::kMissingMz, "");
  }
  std::copy_n(bytes.begin(), kDosHeaderSize, img.dos_header.begin());
  img.e_lfanew = rd32(bytes, 0x3C);
  if (img.e_lfanew < kDosHeaderSize || std::uint64_t{img.e_lfanew} + 4 > bytes.size()) {
    throw PeError(PeErrc::kLfanewOutOfBounds, "e_lfanew=" + std::to_string(img.e_lfanew));
  }
  img.dos_stub.assign(bytes.begin() + kDosHeaderSize, bytes.begin() + img.e_lfanew);
  const std::size_t sig = img.e_lfanew;
  if (bytes[sig] != 'P' || bytes[sig + 1] != 'E' || bytes[sig + 2] != 0 || bytes[sig + 3] != 0) {
    throw PeError(PeErrc::kMissingPeSignature, "");
  }
  const std::size_t coff_off = sig + 4;
  if (coff_off + kCoffHeaderSize > bytes.size()) throw PeError(PeErrc::kTruncatedHeaders, "COFF header");
  CoffHeader& c = img.coff;
  c.machine = rd16(bytes, coff_off);
  c.number_of_sections = rd16(bytes, coff_off + 2);
  c.time_date_stamp = rd32(bytes, coff_off + 4);
  c.pointer_to_symbol_table = rd32(bytes, coff_off + 8);
  c.number_of_symbols = rd32(bytes, coff_off + 12);
  c.size_of_optional_header = rd16(bytes, coff_off + 16);
  c.characteristics = rd16(bytes, coff_off + 18);

  const std::size_t opt_off = coff_off + kCoffHeaderSize;
  if (c.size_of_optional_header < 64) {
    throw PeError(PeErrc::kBadOptionalHeader, "optional header smaller than 64 bytes");
  }
  if (opt_off + c.size_of_optional_header > bytes.size()) {
    throw PeError(PeErrc::kTruncatedHeaders, "optional header");
  }
  OptionalHeader& o = img.optional;
  o.raw.assign(bytes.begin() + static_cast<std::ptrdiff_t>(opt_off),
               bytes.begin() + static_cast<std::ptrdiff_t>(opt_off + c.size_of_optional_header));
  o.magic = rd16(bytes, opt_off);
  if (o.magic != kPe32Magic && o.magic != kPe32PlusMagic) {
    throw PeError(PeErrc::kBadOptionalHeader, "unknown magic");
  }
  o.address_of_entry_point = rd32(bytes, opt_off + 16);
  o.section_alignment = rd32(bytes, opt_off + 32);
  o.file_alignment = rd32(bytes, opt_off + 36);
  o.size_of_image = rd32(bytes, opt_off + 56);
  o.size_of_headers = rd32(bytes, opt_off + 60);

  if (c.number_of_sections > kMaxSections) {
    throw PeError(PeErrc::kTooManySections, std::to_string(c.number_of_sections));
  }
  const std::size_t table_off = opt_off + c.size_of_optional_header;
  if (table_off + kSectionHeaderSize * c.number_of_sections > bytes.size()) {
    throw PeError(PeErrc::kTruncatedSectionTable, "");
  }
  if (!power_of_two(o.file_alignment) || !power_of_two(o.section_alignment)) {
    throw PeError(PeErrc::kInvalidAlignment, "file/section alignment must be powers of two");
  }
  for (std::size_t i = 0; i < c.number_of_sections; ++i) {
    Section s;
    s.header = read_section_header(bytes, table_off + i * kSectionHeaderSize);
    const SectionHeader& h = s.header;
    if (h.has_raw_data()) {
      if (h.raw_end() > bytes.size()) {
        throw PeError(PeErrc::kSectionOutOfBounds, "section " + std::to_string(i));
      }
      s.data.assign(bytes.begin() + h.pointer_to_raw_data, bytes.begin() + static_cast<std::ptrdiff_t>(h.raw_end()));
    }
    img.sections.push_back(std::move(s));
  }

  // Walk the raw layout in file order, recording filler between structures.
  std::uint64_t cursor = img.section_table_end();
  for (const std::size_t i : file_order(img)) {
    const SectionHeader& h = img.sections[i].header;
    if (h.pointer_to_raw_data < cursor) {
      throw PeError(PeErrc::kOverlappingSections, "section " + std::to_string(i) + " overlaps preceding data");
    }
    if (h.pointer_to_raw_data > cursor) {
      img.gaps.push_back({static_cast<std::uint32_t>(cursor),
                          std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(cursor),
                                                    bytes.begin() + h.pointer_to_raw_data)});
    }
    cursor = h.raw_end();
  }
  img.overlay.assign(bytes.begin() + static_cast<std::ptrdiff_t>(cursor), bytes.end());
  validate(img);
  return img;
}

void validate(const PEImage& img) {
  const OptionalHeader& o = img.optional;
  if (img.coff.number_of_sections != img.sections.size()) {
    throw PeError(PeErrc::kSectionCountMismatch,
                  "header says " + std::to_string(img.coff.number_of_sections) + ", table has " +
                      std::to_string(img.sections.size()));
  }
  if (img.sections.size() > kMaxSections) throw PeError(PeErrc::kTooManySections, "");
  if (img.e_lfanew < kDosHeaderSize || img.dos_stub.size() != img.e_lfanew - kDosHeaderSize) {
    throw PeError(PeErrc::kLfanewOutOfBounds, "DOS stub does not end at e_lfanew");
  }
  if (o.raw.size() != img.coff.size_of_optional_header || o.raw.size() < 64) {
    throw PeError(PeErrc::kBadOptionalHeader, "optional header size mismatch");
  }
  if (!power_of_two(o.file_alignment) || !power_of_two(o.section_alignment)) {
    throw PeError(PeErrc::kInvalidAlignment, "");
  }
  for (std::size_t i = 0; i < img.sections.size(); ++i) {
    const SectionHeader& h = img.sections[i].header;
    if (h.virtual_address % o.section_alignment != 0) {
      throw PeError(PeErrc::kMisalignedSection, "virtual address of section " + std::to_string(i));
    }
    if (!h.has_raw_data()) continue;
    if (h.pointer_to_raw_data % o.file_alignment != 0) {
      throw PeError(PeErrc::kMisalignedSection, "raw pointer of section " + std::to_string(i));
    }
    if (img.sections[i].data.size() != h.size_of_raw_data) {
      throw PeError(PeErrc::kSectionOutOfBounds, "section " + std::to_string(i) + " data size mismatch");
    }
  }
  // Sections and gaps must tile [table_end, overlay_offset) exactly.
  struct Piece {
    std::uint64_t offset, length;
  };
  std::vector<Piece> pieces;
  for (const std::size_t i : file_order(img)) {
    pieces.push_back({img.sections[i].header.pointer_to_raw_data, img.sections[i].header.size_of_raw_data});
  }
  for (const Gap& g : img.gaps) {
    if (!g.bytes.empty()) pieces.push_back({g.offset, g.bytes.size()});
  }
  std::stable_sort(pieces.begin(), pieces.end(), [](const Piece& a, const Piece& b) { return a.offset < b.offset; });
  std::uint64_t cursor = img.section_table_end();
  for (const Piece& p : pieces) {
    if (p.offset < cursor) throw PeError(PeErrc::kOverlappingSections, "at offset " + std::to_string(p.offset));
    if (p.offset > cursor) throw PeError(PeErrc::kLayoutHole, "at offset " + std::to_string(cursor));
    cursor = p.offset + p.length;
  }
  if (cursor > kU32Max) throw PeError(PeErrc::kAlignmentOverflow, "image larger than 4 GiB");
}

std::vector<std::uint8_t> serialize_pe(const PEImage& img) {
  validate(img);
  std::vector<std::uint8_t> out(img.file_size(), 0);
  std::span<std::uint8_t> b(out);
  std::copy(img.dos_header.begin(), img.dos_header.end(), out.begin());
  wr32(b, 0x3C, img.e_lfanew);
  std::copy(img.dos_stub.begin(), img.dos_stub.end(), out.begin() + kDosHeaderSize);
  const std::size_t sig = img.e_lfanew;
  out[sig] = 'P';
  out[sig + 1] = 'E';
  out[sig + 2] = 0;
  out[sig + 3] = 0;
  const std::size_t coff_off = sig + 4;
  const CoffHeader& c = img.coff;
  wr16(b, coff_off, c.machine);
  wr16(b, coff_off + 2, c.number_of_sections);
  wr32(b, coff_off + 4, c.time_date_stamp);
  wr32(b, coff_off + 8, c.pointer_to_symbol_table);
  wr32(b, coff_off + 12, c.number_of_symbols);
  wr16(b, coff_off + 16, c.size_of_optional_header);
  wr16(b, coff_off + 18, c.characteristics);
  const std::size_t opt_off = coff_off + kCoffHeaderSize;
  const OptionalHeader& o = img.optional;
  std::copy(o.raw.begin(), o.raw.end(), out.begin() + static_cast<std::ptrdiff_t>(opt_off));
  wr16(b, opt_off, o.magic);
  wr32(b, opt_off + 16, o.address_of_entry_point);
  wr32(b, opt_off + 32, o.section_alignment);
  wr32(b, opt_off + 36, o.file_alignment);
  wr32(b, opt_off + 56, o.size_of_image);
  wr32(b, opt_off + 60, o.size_of_headers);
  const std::size_t table_off = static_cast<std::size_t>(img.section_table_offset());
  for (std::size_t i = 0; i < img.sections.size(); ++i) {
    write_section_header(b, table_off + i * kSectionHeaderSize, img.sections[i].header);
  }
  for (const Section& s : img.sections) {
    if (s.header.has_raw_data()) {
      std::copy(s.data.begin(), s.data.end(), out.begin() + s.header.pointer_to_raw_data);
    }
  }
  for (const Gap& g : img.gaps) std::copy(g.bytes.begin(), g.bytes.end(), out.begin() + g.offset);
  std::copy(img.overlay.begin(), img.overlay.end(),
            out.begin() + static_cast<std::ptrdiff_t>(img.overlay_offset()));
  return out;
}

PEImage append_overlay(const PEImage& img, std::span<const std::uint8_t> payload) {
  if (payload.empty()) throw PeError(PeErrc::kBadArgument, "empty overlay payload");
  PEImage out = img;
  out.overlay.insert(out.overlay.end(), payload.begin(), payload.end());
  return out;
}

Transformed shift_insert(const PEImage& img, std::uint64_t gap) {
  if (gap == 0) throw PeError(PeErrc::kBadArgument, "shift gap must be >= 1");
  const auto order = file_order(img);
  if (order.empty()) throw PeError(PeErrc::kBadArgument, "image has no section data to shift");
  const std::uint64_t shift = align_up(gap, img.optional.file_alignment);
  if (shift > kU32Max) throw PeError(PeErrc::kAlignmentOverflow, "shift larger than 4 GiB");
  Transformed t{img, {}};
  PEImage& out = t.image;
  const std::uint64_t at = img.sections[order.front()].header.pointer_to_raw_data;
  shift_from(out, at, shift);
  insert_gap(out, at, shift);
  out.optional.size_of_headers =
      to_u32(out.optional.size_of_headers + shift, PeErrc::kAlignmentOverflow, "SizeOfHeaders");
  t.injected.push_back({at, shift});
  validate(out);
  return t;
}

Transformed carve_caves(const PEImage& img, std::span<const std::uint64_t> cave_sizes) {
  const auto order = file_order(img);
  if (cave_sizes.size() > order.size()) {
    throw PeError(PeErrc::kTooManyCaves, std::to_string(cave_sizes.size()) + " caves for " +
                                             std::to_string(order.size()) + " sections");
  }
  Transformed t{img, {}};
  PEImage& out = t.image;
  for (std::size_t c = 0; c < cave_sizes.size(); ++c) {
    const std::uint64_t cave = align_up(cave_sizes[c], out.optional.file_alignment);
    if (cave == 0) continue;
    Section& s = out.sections[order[c]];
    const std::uint64_t at = s.header.raw_end();
    shift_from(out, at, cave, order[c]);
    if (s.header.virtual_size == 0) s.header.virtual_size = s.header.size_of_raw_data;
    s.header.size_of_raw_data = to_u32(s.header.size_of_raw_data + cave, PeErrc::kAlignmentOverflow, "raw size");
    s.data.resize(s.header.size_of_raw_data, 0);
    t.injected.push_back({at, cave});
  }
  validate(out);
  return t;
}

Transformed inject_sections(const PEImage& img, std::span<const std::uint64_t> sizes,
                            std::span<const std::string> names) {
  if (sizes.empty()) throw PeError(PeErrc::kBadArgument, "no sections requested");
  if (sizes.size() > kMaxNewSections) {
    throw PeError(PeErrc::kTooManyNewSections, std::to_string(sizes.size()) + " requested, limit " +
                                                   std::to_string(kMaxNewSections));
  }
  if (img.sections.size() + sizes.size() > kMaxSections) throw PeError(PeErrc::kTooManySections, "");
  if (!names.empty() && names.size() != sizes.size()) {
    throw PeError(PeErrc::kBadArgument, "names and sizes differ in length");
  }
  for (const std::uint64_t s : sizes) {
    if (s == 0) throw PeError(PeErrc::kBadArgument, "new section size must be >= 1");
  }

  Transformed t{img, {}};
  PEImage& out = t.image;
  const std::uint64_t need = kSectionHeaderSize * sizes.size();

  // Room for the new table entries must come from the filler right after
  // the table. Shift the headers when it is not there.
  auto header_room = [&]() -> std::uint64_t {
    const std::uint64_t end = out.section_table_end();
    if (out.gaps.empty() || out.gaps.front().offset != end) return 0;
    return out.gaps.front().bytes.size();
  };
  if (header_room() < need) {
    if (file_order(out).empty()) {
      insert_gap(out, out.section_table_end(), align_up(need, out.optional.file_alignment));
    } else {
      out = shift_insert(out, need).image;
    }
    // Adjacent filler pieces merge so the table can grow into them.
    if (out.gaps.size() >= 2 && out.gaps[0].offset + out.gaps[0].bytes.size() == out.gaps[1].offset) {
      out.gaps[0].bytes.insert(out.gaps[0].bytes.end(), out.gaps[1].bytes.begin(), out.gaps[1].bytes.end());
      out.gaps.erase(out.gaps.begin() + 1);
    }
  }
  const std::uint64_t table_end_new = out.section_table_end() + need;
  if (!out.gaps.empty() && out.gaps.front().offset == out.section_table_end()) {
    Gap& g = out.gaps.front();
    g.bytes.erase(g.bytes.begin(), g.bytes.begin() + static_cast<std::ptrdiff_t>(need));
    g.offset = static_cast<std::uint32_t>(table_end_new);
    if (g.bytes.empty()) out.gaps.erase(out.gaps.begin());
  }
  if (out.optional.size_of_headers < table_end_new) {
    out.optional.size_of_headers =
        to_u32(align_up(table_end_new, out.optional.file_alignment), PeErrc::kAlignmentOverflow, "SizeOfHeaders");
  }

  const std::uint32_t fa = out.optional.file_alignment;
  const std::uint32_t sa = out.optional.section_alignment;
  std::uint64_t raw_end = table_end_new;
  std::uint64_t va_end = align_up(out.optional.size_of_headers, sa);
  for (const Section& s : out.sections) {
    if (s.header.has_raw_data()) raw_end = std::max(raw_end, s.header.raw_end());
    const std::uint64_t span = std::max(s.header.virtual_size, s.header.size_of_raw_data);
    va_end = std::max(va_end, std::uint64_t{s.header.virtual_address} + span);
  }
  for (const Gap& g : out.gaps) raw_end = std::max<std::uint64_t>(raw_end, g.offset + g.bytes.size());
  const std::uint64_t aligned_raw = align_up(raw_end, fa);
  if (aligned_raw > raw_end) insert_gap(out, raw_end, aligned_raw - raw_end);
  raw_end = aligned_raw;
  va_end = align_up(va_end, sa);

  for (std::size_t i = 0; i < sizes.size(); ++i) {
    Section s;
    const std::string name = names.empty() ? ".bsi" + std::to_string(i) : names[i];
    std::copy_n(name.begin(), std::min<std::size_t>(name.size(), 8), s.header.name.begin());
    s.header.virtual_size = to_u32(sizes[i], PeErrc::kAddressSpaceExhausted, "section size");
    s.header.virtual_address = to_u32(va_end, PeErrc::kAddressSpaceExhausted, "virtual address");
    s.header.size_of_raw_data = to_u32(align_up(sizes[i], fa), PeErrc::kAlignmentOverflow, "raw size");
    s.header.pointer_to_raw_data = to_u32(raw_end, PeErrc::kAlignmentOverflow, "raw pointer");
    s.header.characteristics = kInertSectionFlags;
    s.data.assign(s.header.size_of_raw_data, 0);
    t.injected.push_back({raw_end, sizes[i]});
    raw_end += s.header.size_of_raw_data;
    va_end = align_up(va_end + sizes[i], sa);
    if (va_end > kU32Max) throw PeError(PeErrc::kAddressSpaceExhausted, "");
    out.sections.push_back(std::move(s));
  }
  out.coff.number_of_sections = static_cast<std::uint16_t>(out.sections.size());
  out.optional.size_of_image = std::max(out.optional.size_of_image,
                                        to_u32(va_end, PeErrc::kAddressSpaceExhausted, "SizeOfImage"));
  validate(out);
  return t;
}

std::vector<ByteRange> slack_regions(const PEImage& img) {
  std::vector<ByteRange> out;
  const auto order = file_order(img);
  for (const std::size_t i : order) {
    const SectionHeader& h = img.sections[i].header;
    if (h.virtual_size != 0 && h.virtual_size < h.size_of_raw_data) {
      out.push_back({std::uint64_t{h.pointer_to_raw_data} + h.virtual_size, h.size_of_raw_data - h.virtual_size});
    }
  }
  if (!order.empty()) {
    const std::uint64_t first = img.sections[order.front()].header.pointer_to_raw_data;
    for (const Gap& g : img.gaps) {
      if (g.offset >= first && !g.bytes.empty()) out.push_back({g.offset, g.bytes.size()});
    }
  }
  std::sort(out.begin(), out.end(), [](const ByteRange& a, const ByteRange& b) { return a.offset < b.offset; });
  return out;
}

std::string describe(const PEImage& img) {
  std::ostringstream os;
  os << (img.is_pe32_plus() ? "PE32+" : "PE32") << " machine=0x" << std::hex << img.coff.machine << std::dec
     << " sections=" << img.coff.number_of_sections << " file_alignment=" << img.optional.file_alignment
     << " section_alignment=" << img.optional.section_alignment
     << " size_of_headers=" << img.optional.size_of_headers << " size_of_image=" << img.optional.size_of_image
     << " overlay=" << img.overlay.size() << "\n";
  for (const Section& s : img.sections) {
    const SectionHeader& h = s.header;
    os << "  " << h.name_string() << " va=0x" << std::hex << h.virtual_address << " vsize=0x" << h.virtual_size
       << " raw=0x" << h.pointer_to_raw_data << "+0x" << h.size_of_raw_data << " flags=0x" << h.characteristics
       << std::dec << "\n";
  }
  return os.str();
}

}  // namespace byteshield::pe
