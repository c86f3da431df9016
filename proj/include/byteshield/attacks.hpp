#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "byteshield/pe.hpp"
#include "byteshield/smoothing.hpp"

namespace byteshield {

enum class Strategy { kPadding, kShift, kCodeCaves, kSectionInjection };
enum class InitMode { kBenign, kRandom, kZeros };

std::string to_string(Strategy s);
std::string to_string(InitMode m);
Strategy parse_strategy(const std::string& name);
InitMode parse_init_mode(const std::string& name);

// Payload bytes per new section before another section is opened.
inline constexpr std::size_t kInjectedSectionChunk = 4096;

struct AttackSpec {
  Strategy strategy = Strategy::kPadding;
  int budget_percent = 10;
  InitMode init = InitMode::kBenign;
  int optimizer_budget = 3000;  // detector queries spent by the optimizer
  std::uint64_t seed = 0;
  int max_new_sections = 5;
  // Stop once the detector says benign. Acceptance is elitist, so the
  // outcome (evaded or not) is the same as running the full budget.
  bool stop_on_evasion = true;

  void validate() const;
  nlohmann::json to_json() const;
};

// ceil(L * budget_percent / 100)
std::size_t payload_bytes(std::size_t file_length, int budget_percent);

struct PayloadLayout {
  std::vector<pe::ByteRange> regions;  // file order, pairwise disjoint
  std::size_t total() const noexcept;
  // File offset of the i-th payload byte.
  std::size_t offset_of(std::size_t i) const;
};

struct Slots {
  std::vector<std::uint8_t> bytes;  // transformed file, payload bytes zero
  PayloadLayout layout;
};

// Splits p as evenly as possible into n parts, remainder on the last one.
std::vector<std::uint64_t> equal_split(std::uint64_t p, std::size_t n);

Slots build_payload_slots(std::span<const std::uint8_t> pe_bytes, const AttackSpec& spec);

class DonorPool {
 public:
  struct Source {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  void add(std::string name, std::span<const std::uint8_t> bytes);
  bool empty() const noexcept { return bytes_.empty(); }
  std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }
  const std::vector<Source>& sources() const noexcept { return sources_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::vector<Source> sources_;
};

// Fills every region of `file` according to mode. Benign mode copies one
// contiguous donor slice per region (tiled if the pool is shorter).
void init_payload(std::span<std::uint8_t> file, const PayloadLayout& layout, const DonorPool& donors,
                  InitMode mode, std::mt19937_64& rng);

// What the attacker observes for one candidate file.
using QueryFn = std::function<Verdict(std::span<const std::uint8_t>)>;

struct OptimizeResult {
  std::vector<std::uint8_t> best;
  Verdict best_verdict;
  bool evaluated = false;  // false only when the budget is zero
  std::size_t queries = 0;
  std::vector<double> trace;  // best objective after each query
};

// (1+1) evolutionary search over the payload bytes.
OptimizeResult optimize_payload(const QueryFn& query, std::vector<std::uint8_t> file, const PayloadLayout& layout,
                                const AttackSpec& spec, std::mt19937_64& rng);

struct AttackResult {
  std::string sample_id;
  std::string detector;
  AttackSpec spec;
  std::size_t payload_bytes = 0;
  std::vector<std::uint8_t> baseline;     // slot-transformed file before init
  std::vector<std::uint8_t> adversarial;
  PayloadLayout layout;
  double clean_score = 0;    // objective on the untouched sample
  double initial_score = 0;  // after payload initialization
  double final_score = 0;
  bool evaded = false;
  std::size_t queries = 0;            // every detector invocation, clean check included
  std::size_t optimizer_queries = 0;
  std::vector<double> trace;
};

// Throws Errc::kNotDetected when the detector already says benign.
AttackResult run_attack(const Detector& detector, std::span<const std::uint8_t> malware, const AttackSpec& spec,
                        const DonorPool& donors, const std::string& sample_id = "");

// One JSON-lines record (no byte payloads).
nlohmann::json to_json(const AttackResult& r);

}  // namespace byteshield
