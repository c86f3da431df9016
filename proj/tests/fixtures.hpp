#pragma once

#include <string>
#include <vector>

#include "byteshield/io.hpp"

namespace fixtures {

inline const std::vector<std::string>& names() {
  static const std::vector<std::string> n{"two_section.exe", "packed.exe", "pe32plus_gap_overlay.exe",
                                          "aligned4k.exe"};
  return n;
}

inline std::vector<std::uint8_t> load(const std::string& name) {
  return byteshield::read_file(std::string(BS_FIXTURE_DIR) + "/" + name);
}

}  // namespace fixtures
