#include "byteshield/masking.hpp"

#include <algorithm>
#include <string>

#include "byteshield/errors.hpp"

namespace byteshield {

ByteSequence::ByteSequence(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] > kPad) {
      throw Error(Errc::kOutOfRange, "token " + std::to_string(tokens_[i]) + " at position " +
                                         std::to_string(i) + " outside alphabet");
    }
  }
}

ByteSequence ByteSequence::from_bytes(std::span<const std::uint8_t> bytes) {
  return ByteSequence(std::vector<Token>(bytes.begin(), bytes.end()));
}

void DefenseConfig::validate() const {
  if (mask_percent < 1 || mask_percent >= 100) {
    throw Error(Errc::kInvalidArgument, "mask percent must satisfy 1 <= M < 100");
  }
  if (stride_percent < 1 || stride_percent >= mask_percent) {
    throw Error(Errc::kInvalidArgument, "stride percent must satisfy 1 <= S < M");
  }
  if (threshold < 1) {
    throw Error(Errc::kInvalidArgument, "threshold must be >= 1");
  }
}

std::size_t ceil_div(std::size_t num, std::size_t den) { return num / den + (num % den != 0); }

std::size_t percent_of(std::size_t length, int percent) {
  return ceil_div(length * static_cast<std::size_t>(percent), 100);
}

void mask_in_place(std::span<Token> x, std::size_t idx, std::size_t m) {
  if (m == 0 || idx > x.size() || m > x.size() - idx) {
    throw Error(Errc::kOutOfRange, "mask [" + std::to_string(idx) + ", " +
                                       std::to_string(idx + m) + ") outside sequence of length " +
                                       std::to_string(x.size()));
  }
  std::fill_n(x.begin() + static_cast<std::ptrdiff_t>(idx), m, kPad);
}

ByteSequence mask_bytes(const ByteSequence& x, std::size_t idx, std::size_t m) {
  std::vector<Token> out(x.tokens().begin(), x.tokens().end());
  mask_in_place(out, idx, m);
  return ByteSequence(std::move(out));
}

WindowSet plan_windows_bytes(std::size_t length, std::size_t mask_bytes, std::size_t stride_bytes) {
  if (length == 0) throw Error(Errc::kInvalidArgument, "cannot plan windows for an empty input");
  if (mask_bytes == 0 || stride_bytes == 0) {
    throw Error(Errc::kInvalidArgument, "mask and stride must be at least one byte");
  }
  WindowSet ws;
  ws.stride_bytes = stride_bytes;
  if (mask_bytes >= length) {
    // Degenerate: a single window occluding everything.
    ws.mask_bytes = length;
    ws.starts = {0};
    ws.nominal_count = 0;
    return ws;
  }
  ws.mask_bytes = mask_bytes;
  const std::size_t last = length - mask_bytes;
  ws.nominal_count = ceil_div(last, stride_bytes);
  ws.starts.reserve(ws.nominal_count + 1);
  for (std::size_t n = 0; n <= ws.nominal_count; ++n) {
    const std::size_t start = std::min(n * stride_bytes, last);
    if (ws.starts.empty() || ws.starts.back() != start) ws.starts.push_back(start);
  }
  return ws;
}

WindowSet plan_windows(std::size_t length, const DefenseConfig& cfg) {
  cfg.validate();
  return plan_windows_bytes(length, percent_of(length, cfg.mask_percent),
                            percent_of(length, cfg.stride_percent));
}

std::vector<std::size_t> chunk_bounds(std::size_t length, std::size_t k) {
  if (k == 0 || k > length) {
    throw Error(Errc::kInvalidArgument, "chunk count must satisfy 1 <= k <= L");
  }
  std::vector<std::size_t> bounds(k + 1, 0);
  const std::size_t base = length / k;
  const std::size_t extra = length % k;
  for (std::size_t i = 0; i < k; ++i) bounds[i + 1] = bounds[i] + base + (i < extra ? 1 : 0);
  return bounds;
}

std::size_t random_mask_start(std::size_t length, std::size_t m, std::mt19937_64& rng) {
  if (m > length) throw Error(Errc::kOutOfRange, "mask longer than sequence");
  std::uniform_int_distribution<std::size_t> dist(0, length - m);
  return dist(rng);
}

}  // namespace byteshield
