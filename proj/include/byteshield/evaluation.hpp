#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "byteshield/attacks.hpp"
#include "byteshield/corpus.hpp"
#include "byteshield/smoothing.hpp"

namespace byteshield {

struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0;
  double tpr = 0;  // recall; 0 when there are no positives
  double fpr = 0;  // 0 when there are no negatives
  double precision = 0;  // 0 when nothing was flagged
  double f1 = 0;         // 0 when precision + recall is 0

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  nlohmann::json to_json() const;
};

// Each pair is (predicted label, true label), 1 = malicious. Throws on empty input.
MetricsReport compute_metrics(std::span<const std::pair<int, int>> predictions);

// Trapezoidal mean with unit spacing between consecutive points:
// (1/(n-1)) * sum (f_k + f_{k+1}) / 2. Times must strictly increase.
double aut(std::span<const std::pair<double, double>> series);
double aut(std::span<const double> values);

// ---- attack sweep -----------------------------------------------------------------

struct SweepDetector {
  std::string name;
  std::shared_ptr<const Detector> detector;
};

struct SweepSample {
  std::string id;
  std::vector<std::uint8_t> bytes;
};

struct SweepConfig {
  std::vector<Strategy> strategies{Strategy::kPadding};
  std::vector<int> budgets{0, 10, 20, 50, 100};  // percent; 0 is the clean column
  AttackSpec attack;  // strategy and budget are overwritten per cell
  int jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct SweepCell {
  std::string detector;
  Strategy strategy = Strategy::kPadding;
  int budget_percent = 0;
  std::size_t attacked = 0;        // denominator
  std::size_t still_malicious = 0;
  std::size_t failed = 0;          // transform refused the file
  double adversarial_accuracy = 0;
  double evasion_rate = 0;
  double mean_queries = 0;
  double mean_initial_score = 0;
  double mean_final_score = 0;
};

struct SweepReport {
  SweepConfig config;
  std::vector<std::string> detectors;
  std::vector<std::size_t> total;     // samples offered, per detector
  std::vector<std::size_t> excluded;  // not detected clean, per detector
  std::vector<SweepCell> cells;       // detector-major, then strategy, then budget

  const SweepCell& cell(std::size_t detector, std::size_t strategy, std::size_t budget) const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Every (detector, strategy, budget, sample) attack runs with a seed derived
// from the base seed and the sample index only, so cells are paired.
// The budget-0 cell is the clean detection rate over all samples; other
// cells count only samples the detector flags clean.
SweepReport attack_sweep(const std::vector<SweepDetector>& detectors, const std::vector<SweepSample>& samples,
                         const DonorPool& donors, const SweepConfig& config);

// Per-sample attack seed used by the sweep.
std::uint64_t sweep_seed(std::uint64_t base, std::size_t sample_index);

// ---- temporal evaluation -----------------------------------------------------------

struct TimedSample {
  YearMonth month;
  int label = 0;
  std::vector<std::uint8_t> bytes;
};

struct MonthResult {
  YearMonth month;
  MetricsReport metrics;
};

struct TemporalReport {
  std::vector<MonthResult> months;  // strictly increasing
  std::vector<YearMonth> skipped;   // empty months inside the covered range
  std::size_t untimestamped = 0;
  double aut = 0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

TemporalReport temporal_eval(const Detector& detector, const std::vector<TimedSample>& samples, int jobs = 1);
// Loads the timestamped rows of a manifest; rows without a timestamp are counted and ignored.
TemporalReport temporal_eval(const Detector& detector, const std::vector<ManifestRecord>& records,
                             const std::filesystem::path& root, int jobs = 1);

// Plain labeled evaluation of one detector.
struct LabeledSample {
  std::string id;
  int label = 0;
  std::vector<std::uint8_t> bytes;
};

struct DetectionResult {
  MetricsReport metrics;
  std::vector<int> predicted;  // per sample
  std::size_t passes = 0;      // classifier forward passes in total
};

DetectionResult evaluate_detector(const Detector& detector, const std::vector<LabeledSample>& samples, int jobs = 1);

}  // namespace byteshield
