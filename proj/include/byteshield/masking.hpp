#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace byteshield {

using Token = std::uint16_t;

// Reserved masking/padding symbol. Its embedding row is frozen at zero.
inline constexpr Token kPad = 256;
inline constexpr std::size_t kAlphabetSize = 257;

// Model input: raw bytes widened to tokens, plus PAD where masked.
class ByteSequence {
 public:
  ByteSequence() = default;
  // Throws Errc::kOutOfRange if any token exceeds kPad.
  explicit ByteSequence(std::vector<Token> tokens);

  static ByteSequence from_bytes(std::span<const std::uint8_t> bytes);

  std::span<const Token> tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  Token operator[](std::size_t i) const noexcept { return tokens_[i]; }

  friend bool operator==(const ByteSequence&, const ByteSequence&) = default;

 private:
  std::vector<Token> tokens_;
};

// Mask size M, stride S (both percent of file length) and vote threshold T.
struct DefenseConfig {
  int mask_percent = 50;
  int stride_percent = 1;
  int threshold = 2;

  // 1 <= M < 100, 1 <= S < M, T >= 1; throws Errc::kInvalidArgument.
  void validate() const;
};

struct WindowSet {
  std::size_t mask_bytes = 0;
  std::size_t stride_bytes = 0;
  // Strictly increasing; every start + mask_bytes <= L.
  std::vector<std::size_t> starts;
  // ceil((L - m) / s). The planned window count is at most
  // nominal_count + 1 because the last start is clamped to L - m.
  std::size_t nominal_count = 0;
};

// ceil(length * percent / 100) in exact integer arithmetic.
std::size_t percent_of(std::size_t length, int percent);

std::size_t ceil_div(std::size_t num, std::size_t den);

// Returns a copy of x with [idx, idx + m) replaced by kPad.
// Throws Errc::kOutOfRange when idx + m > x.size() or m == 0.
ByteSequence mask_bytes(const ByteSequence& x, std::size_t idx, std::size_t m);
void mask_in_place(std::span<Token> x, std::size_t idx, std::size_t m);

// Window plan for a sequence of `length` tokens. Starts are
// min(n * s, L - m) for n = 0..ceil((L - m) / s), deduplicated, so the last
// window always ends at L and the union of windows covers [0, L).
WindowSet plan_windows(std::size_t length, const DefenseConfig& cfg);

// Same plan from explicit byte sizes (fractional-percent strides).
WindowSet plan_windows_bytes(std::size_t length, std::size_t mask_bytes, std::size_t stride_bytes);

// Splits [0, length) into k contiguous chunks; the first length % k chunks
// are one token longer. Returns k + 1 boundaries. Requires 1 <= k <= length.
std::vector<std::size_t> chunk_bounds(std::size_t length, std::size_t k);

// Uniform start in [0, L - m].
std::size_t random_mask_start(std::size_t length, std::size_t m, std::mt19937_64& rng);

}  // namespace byteshield
