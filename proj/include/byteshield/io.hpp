#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace byteshield {

std::vector<std::uint8_t> read_file(const std::string& path);
std::string read_text_file(const std::string& path);

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::string& path, std::string_view text);

}  // namespace byteshield
