#include <doctest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "byteshield/pe.hpp"
#include "fixtures.hpp"

using namespace byteshield;
using namespace byteshield::pe;

namespace {

PeErrc parse_error(const std::vector<std::uint8_t>& bytes) {
  try {
    parse_pe(bytes);
  } catch (const PeError& e) {
    return e.pe_code();
  }
  FAIL("parse succeeded");
  return PeErrc::kBadArgument;
}

void put32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

// Ranges are sorted, disjoint, nonempty and inside the file.
void check_ranges(const std::vector<ByteRange>& r, std::uint64_t file_size) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(r[i].length > 0);
    CHECK(r[i].end() <= file_size);
    if (i > 0) CHECK(r[i - 1].end() <= r[i].offset);
  }
}

// Content survives a transform: every old section keeps its bytes as a
// prefix, the overlay and stub are unchanged, and injected bytes are zero.
void check_preserved(const PEImage& before, const Transformed& t) {
  const auto bytes = serialize_pe(t.image);
  const PEImage after = parse_pe(bytes);
  CHECK(after.dos_stub == before.dos_stub);
  CHECK(after.overlay == before.overlay);
  REQUIRE(after.sections.size() >= before.sections.size());
  for (std::size_t i = 0; i < before.sections.size(); ++i) {
    const auto& old_data = before.sections[i].data;
    const auto& new_data = after.sections[i].data;
    REQUIRE(new_data.size() >= old_data.size());
    CHECK(std::equal(old_data.begin(), old_data.end(), new_data.begin()));
    CHECK(after.sections[i].header.virtual_address == before.sections[i].header.virtual_address);
  }
  check_ranges(t.injected, bytes.size());
  for (const auto& r : t.injected) {
    CHECK(std::all_of(bytes.begin() + r.offset, bytes.begin() + r.end(), [](auto b) { return b == 0; }));
  }
}

}  // namespace

TEST_CASE("fixture corpus round trips bit-exactly") {
  for (const auto& name : fixtures::names()) {
    CAPTURE(name);
    const auto bytes = fixtures::load(name);
    CHECK(serialize_pe(parse_pe(bytes)) == bytes);
  }
}

TEST_CASE("two-section fixture fields") {
  const auto img = parse_pe(fixtures::load("two_section.exe"));
  CHECK(img.coff.number_of_sections == 2);
  CHECK(img.overlay.empty());
  CHECK_FALSE(img.is_pe32_plus());
  CHECK(img.optional.file_alignment == 512);
  CHECK(img.optional.section_alignment == 4096);
  CHECK(img.optional.size_of_headers == 0x200);
  CHECK(img.optional.size_of_image == 0x3000);
  CHECK(img.sections[0].header.name_string() == ".text");
  CHECK(img.sections[0].header.virtual_size == 300);
  CHECK(img.sections[0].header.pointer_to_raw_data == 0x200);
  CHECK(img.sections[1].header.pointer_to_raw_data == 0x400);
  CHECK(img.file_size() == 0x600);
  CHECK(describe(img).find(".data") != std::string::npos);
}

TEST_CASE("PE32+ fixture with gap, empty section and overlay") {
  const auto img = parse_pe(fixtures::load("pe32plus_gap_overlay.exe"));
  CHECK(img.is_pe32_plus());
  CHECK(img.overlay.size() == 55);
  CHECK_FALSE(img.sections[1].header.has_raw_data());
  CHECK(file_order(img) == std::vector<std::size_t>{0, 2, 3});
}

TEST_CASE("parse errors are distinct") {
  const auto good = fixtures::load("two_section.exe");
  auto b = good;
  b[0] = 'X';
  CHECK(parse_error(b) == PeErrc::kMissingMz);
  b = good;
  put32(b, 0x3C, 0x10000);
  CHECK(parse_error(b) == PeErrc::kLfanewOutOfBounds);
  b = good;
  b[0x81] = 'X';
  CHECK(parse_error(b) == PeErrc::kMissingPeSignature);
  b = good;
  b.resize(0x178 + 40 + 10);  // mid second section header
  CHECK(parse_error(b) == PeErrc::kTruncatedSectionTable);
  b = good;
  put32(b, 0x178 + 40 + 20, 0x200);  // .data pointer onto .text
  CHECK(parse_error(b) == PeErrc::kOverlappingSections);
  b = good;
  put32(b, 0x178 + 20, 0x100);  // .text pointer into the headers
  CHECK(parse_error(b) == PeErrc::kOverlappingSections);
  b = good;
  b.resize(0x500);
  CHECK(parse_error(b) == PeErrc::kSectionOutOfBounds);
  b = good;
  put32(b, 0x98 + 36, 300);  // FileAlignment
  CHECK(parse_error(b) == PeErrc::kInvalidAlignment);
  b = good;
  b[0x86] = 200;  // NumberOfSections
  CHECK(parse_error(b) == PeErrc::kTooManySections);
}

TEST_CASE("trailing bytes become the overlay") {
  auto b = fixtures::load("two_section.exe");
  b.insert(b.end(), 16, 0x5A);
  const auto img = parse_pe(b);
  CHECK(img.overlay.size() == 16);
  CHECK(serialize_pe(img) == b);
}

TEST_CASE("serialize refuses invalid images") {
  const auto img = parse_pe(fixtures::load("two_section.exe"));
  auto count = img;
  count.coff.number_of_sections = 3;
  CHECK_THROWS_AS(serialize_pe(count), PeError);
  auto misaligned = img;
  misaligned.sections[1].header.pointer_to_raw_data = 0x410;
  CHECK_THROWS_AS(serialize_pe(misaligned), PeError);
  auto va = img;
  va.sections[1].header.virtual_address = 0x2100;
  CHECK_THROWS_AS(serialize_pe(va), PeError);
  auto data = img;
  data.sections[0].data.pop_back();
  CHECK_THROWS_AS(serialize_pe(data), PeError);
}

TEST_CASE("append_overlay") {
  const auto orig = fixtures::load("two_section.exe");
  const auto img = parse_pe(orig);
  const std::vector<std::uint8_t> payload(100, 0x42);
  const auto out = serialize_pe(append_overlay(img, payload));
  CHECK(out.size() == orig.size() + 100);
  CHECK(std::equal(orig.begin(), orig.end(), out.begin()));
  CHECK(parse_pe(out).overlay == payload);
  CHECK_THROWS_AS(append_overlay(img, std::vector<std::uint8_t>{}), PeError);
}

TEST_CASE("shift_insert fixups") {
  const auto img = parse_pe(fixtures::load("two_section.exe"));
  const auto t = shift_insert(img, 100);
  CHECK(t.image.sections[0].header.pointer_to_raw_data == 0x200 + 512);
  CHECK(t.image.sections[1].header.pointer_to_raw_data == 0x400 + 512);
  CHECK(t.image.optional.size_of_headers == 0x200 + 512);
  REQUIRE(t.injected.size() == 1);
  CHECK(t.injected[0] == ByteRange{0x200, 512});
  check_preserved(img, t);
  CHECK(shift_insert(img, 512).injected[0].length == 512);
  CHECK_THROWS_AS(shift_insert(img, 0), PeError);
  CHECK_THROWS_AS(shift_insert(img, 1ull << 33), PeError);
}

TEST_CASE("carve_caves fixups") {
  const auto img = parse_pe(fixtures::load("two_section.exe"));
  const std::vector<std::uint64_t> caves{100, 200};
  const auto t = carve_caves(img, caves);
  CHECK(t.image.sections[0].header.size_of_raw_data == 1024);
  CHECK(t.image.sections[1].header.pointer_to_raw_data == 0x400 + 512);
  CHECK(t.image.sections[1].header.size_of_raw_data == 1024);
  CHECK(t.injected == std::vector<ByteRange>{{0x400, 512}, {0x800, 512}});
  CHECK(t.image.sections[0].header.virtual_size == 300);
  check_preserved(img, t);

  const auto none = carve_caves(img, std::vector<std::uint64_t>{});
  CHECK(serialize_pe(none.image) == serialize_pe(img));
  CHECK(none.injected.empty());
  CHECK_THROWS_AS(carve_caves(img, std::vector<std::uint64_t>{1, 2, 3}), PeError);
}

TEST_CASE("carve_caves skips sections without raw data") {
  const auto img = parse_pe(fixtures::load("pe32plus_gap_overlay.exe"));
  const auto t = carve_caves(img, std::vector<std::uint64_t>{10, 10, 10});
  // .text, .data, .rsrc each grow by 512; the filler gap moves with .data.
  CHECK(t.image.sections[0].header.size_of_raw_data == 0x600);
  CHECK(t.image.sections[2].header.pointer_to_raw_data == 0xA00 + 0x200);
  CHECK(t.image.sections[3].header.pointer_to_raw_data == 0xC00 + 0x400);
  check_preserved(img, t);
  CHECK_THROWS_AS(carve_caves(img, std::vector<std::uint64_t>{1, 1, 1, 1}), PeError);
}

TEST_CASE("inject_sections fixups") {
  const auto img = parse_pe(fixtures::load("two_section.exe"));
  const auto t = inject_sections(img, std::vector<std::uint64_t>{1000}, {});
  CHECK(t.image.coff.number_of_sections == 3);
  CHECK(t.image.optional.size_of_image == 0x3000 + 0x1000);
  const auto& h = t.image.sections[2].header;
  CHECK(h.virtual_address == 0x3000);
  CHECK(h.pointer_to_raw_data == 0x600);
  CHECK(h.size_of_raw_data == 1024);
  CHECK(h.characteristics == kInertSectionFlags);
  CHECK(t.injected == std::vector<ByteRange>{{0x600, 1000}});
  check_preserved(img, t);
}

TEST_CASE("inject_sections shifts headers when the table is full") {
  const auto img = parse_pe(fixtures::load("two_section.exe"));
  // Two new entries end the table at 0x218, past SizeOfHeaders (0x200).
  const std::vector<std::string> names{".pay0", ".pay1"};
  const auto t = inject_sections(img, std::vector<std::uint64_t>{700, 9}, names);
  CHECK(t.image.coff.number_of_sections == 4);
  CHECK(t.image.optional.size_of_headers == 0x400);
  CHECK(t.image.sections[0].header.pointer_to_raw_data == 0x400);
  CHECK(t.image.sections[3].header.name_string() == ".pay1");
  CHECK(t.image.optional.size_of_image == 0x5000);
  check_preserved(img, t);
}

TEST_CASE("inject_sections limits") {
  const auto img = parse_pe(fixtures::load("two_section.exe"));
  CHECK_THROWS_AS(inject_sections(img, std::vector<std::uint64_t>(6, 10), {}), PeError);
  CHECK_THROWS_AS(inject_sections(img, std::vector<std::uint64_t>{}, {}), PeError);
  auto high = img;
  high.sections[1].header.virtual_address = 0xFFFFF000;
  try {
    inject_sections(high, std::vector<std::uint64_t>{10}, {});
    FAIL("expected exhaustion");
  } catch (const PeError& e) {
    CHECK(e.pe_code() == PeErrc::kAddressSpaceExhausted);
  }
}

TEST_CASE("slack regions") {
  const auto two = parse_pe(fixtures::load("two_section.exe"));
  const auto s = slack_regions(two);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == ByteRange{0x400 - 212, 212});
  CHECK(s[1] == ByteRange{0x400 + 256, 256});
  CHECK(slack_regions(parse_pe(fixtures::load("packed.exe"))).empty());

  const auto plus = parse_pe(fixtures::load("pe32plus_gap_overlay.exe"));
  const auto r = slack_regions(plus);
  check_ranges(r, plus.file_size());
  for (const auto& range : r) {
    for (const auto& sec : plus.sections) {
      const auto& h = sec.header;
      if (!h.has_raw_data()) continue;
      // Never overlaps content below virtual_size.
      const std::uint64_t live_end = h.pointer_to_raw_data + std::min(h.virtual_size, h.size_of_raw_data);
      CHECK((range.end() <= h.pointer_to_raw_data || range.offset >= live_end));
    }
  }
  CHECK(std::find(r.begin(), r.end(), ByteRange{0x800, 0x200}) != r.end());
}

TEST_CASE("randomized transforms keep every image valid") {
  std::mt19937_64 rng(12345);
  for (int trial = 0; trial < 200; ++trial) {
    const auto& name = fixtures::names()[rng() % fixtures::names().size()];
    CAPTURE(name);
    const auto img = parse_pe(fixtures::load(name));
    Transformed t;
    switch (rng() % 4) {
      case 0:
        t = {append_overlay(img, std::vector<std::uint8_t>(1 + rng() % 5000, 7)), {}};
        break;
      case 1:
        t = shift_insert(img, 1 + rng() % 20000);
        break;
      case 2: {
        std::vector<std::uint64_t> caves(rng() % (file_order(img).size() + 1));
        for (auto& c : caves) c = rng() % 9000;
        t = carve_caves(img, caves);
        break;
      }
      default: {
        std::vector<std::uint64_t> sizes(1 + rng() % 5);
        for (auto& s : sizes) s = 1 + rng() % 9000;
        t = inject_sections(img, sizes, {});
      }
    }
    const auto bytes = serialize_pe(t.image);
    const auto again = parse_pe(bytes);
    CHECK_NOTHROW(validate(again));
    CHECK(serialize_pe(again) == bytes);
    check_ranges(t.injected, bytes.size());
  }
}
