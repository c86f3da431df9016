#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "byteshield/errors.hpp"
#include "byteshield/masking.hpp"

using namespace byteshield;

namespace {

ByteSequence seq(std::vector<Token> t) { return ByteSequence(std::move(t)); }

// Brute-force coverage bitmap, independent of the planner's arithmetic.
bool covers(std::size_t L, const WindowSet& ws) {
  std::vector<char> hit(L, 0);
  for (auto s : ws.starts) {
    if (s + ws.mask_bytes > L) return false;
    for (std::size_t j = s; j < s + ws.mask_bytes; ++j) hit[j] = 1;
  }
  for (char h : hit) {
    if (!h) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("mask_bytes replaces the window with PAD") {
  CHECK(mask_bytes(seq({1, 2, 3, 4, 5}), 1, 2) == seq({1, 256, 256, 4, 5}));
  CHECK(mask_bytes(seq({7, 7, 7}), 0, 3) == seq({256, 256, 256}));
  CHECK_THROWS_AS(mask_bytes(seq({1, 2, 3}), 2, 2), Error);
  CHECK_THROWS_AS(mask_bytes(seq({1, 2, 3}), 0, 0), Error);
}

TEST_CASE("mask_bytes leaves the input untouched and is idempotent") {
  const auto x = seq({9, 8, 7, 6, 5, 4});
  const auto once = mask_bytes(x, 2, 3);
  CHECK(x == seq({9, 8, 7, 6, 5, 4}));
  CHECK(mask_bytes(once, 2, 3) == once);
  // Region [0, 2) is disjoint from the mask and survives.
  CHECK(once[0] == 9);
  CHECK(once[1] == 8);
}

TEST_CASE("ByteSequence rejects tokens above PAD") {
  CHECK_THROWS_AS(ByteSequence(std::vector<Token>{1, 257}), Error);
  CHECK_NOTHROW(ByteSequence(std::vector<Token>{0, 256}));
}

TEST_CASE("DefenseConfig bounds") {
  CHECK_NOTHROW((DefenseConfig{50, 1, 2}.validate()));
  CHECK_THROWS((DefenseConfig{0, 1, 2}.validate()));
  CHECK_THROWS((DefenseConfig{100, 1, 2}.validate()));
  CHECK_THROWS((DefenseConfig{10, 10, 2}.validate()));
  CHECK_THROWS((DefenseConfig{10, 0, 2}.validate()));
  CHECK_THROWS((DefenseConfig{10, 5, 0}.validate()));
}

TEST_CASE("plan_windows on a megabyte file") {
  const auto ws1 = plan_windows(1'000'000, {50, 1, 2});
  CHECK(ws1.mask_bytes == 500'000);
  CHECK(ws1.stride_bytes == 10'000);
  CHECK(ws1.nominal_count == 50);
  CHECK(ws1.starts.size() == 51);
  const auto ws5 = plan_windows(1'000'000, {50, 5, 2});
  CHECK(ws5.stride_bytes == 50'000);
  CHECK(ws5.nominal_count == 10);
}

TEST_CASE("plan_windows small case enumerates every start") {
  const auto ws = plan_windows(10, {50, 10, 2});
  CHECK(ws.mask_bytes == 5);
  CHECK(ws.stride_bytes == 1);
  CHECK(ws.starts == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  CHECK(covers(10, ws));
}

TEST_CASE("plan_windows starts are increasing, bounded and end at L - m") {
  for (std::size_t L = 2; L <= 300; ++L) {
    for (int M : {1, 10, 33, 50, 99}) {
      for (int S : {1, 3, 7, 49}) {
        if (S >= M) continue;
        const auto ws = plan_windows(L, {M, S, 1});
        REQUIRE(!ws.starts.empty());
        CHECK(ws.starts.front() == 0);
        CHECK(ws.starts.back() + ws.mask_bytes == L);
        for (std::size_t i = 1; i < ws.starts.size(); ++i) CHECK(ws.starts[i - 1] < ws.starts[i]);
        CHECK(ws.starts.size() <= ws.nominal_count + 1);
        CHECK(covers(L, ws));
      }
    }
  }
}

TEST_CASE("plan_windows degenerate full mask") {
  const auto ws = plan_windows(1, {50, 1, 1});
  CHECK(ws.mask_bytes == 1);
  CHECK(ws.starts == std::vector<std::size_t>{0});
  CHECK_THROWS(plan_windows(0, {50, 1, 1}));
}

TEST_CASE("chunk_bounds splits remainder onto the first chunks") {
  CHECK(chunk_bounds(100, 5) == std::vector<std::size_t>{0, 20, 40, 60, 80, 100});
  CHECK(chunk_bounds(7, 3) == std::vector<std::size_t>{0, 3, 5, 7});
  CHECK_THROWS(chunk_bounds(3, 4));
  CHECK_THROWS(chunk_bounds(3, 0));
}

TEST_CASE("random_mask_start bounds and determinism") {
  std::mt19937_64 a(42), b(42);
  CHECK(random_mask_start(10, 5, a) == random_mask_start(10, 5, b));
  std::mt19937_64 r(1);
  for (int i = 0; i < 10; ++i) CHECK(random_mask_start(100, 100, r) == 0);
  CHECK_THROWS(random_mask_start(5, 6, r));
}

TEST_CASE("random_mask_start is uniform (chi-squared)") {
  const std::size_t L = 1000, m = 100, draws = 10'000;
  const std::size_t bins = L - m + 1;
  std::vector<double> counts(bins, 0);
  std::mt19937_64 rng(2024);
  for (std::size_t i = 0; i < draws; ++i) counts[random_mask_start(L, m, rng)] += 1;
  const double expected = static_cast<double>(draws) / static_cast<double>(bins);
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // Wilson-Hilferty approximation of the 0.999 quantile for k = bins - 1.
  const double k = static_cast<double>(bins - 1);
  const double z = 3.090232;
  const double q = k * std::pow(1 - 2 / (9 * k) + z * std::sqrt(2 / (9 * k)), 3);
  CHECK(chi2 < q);
}
