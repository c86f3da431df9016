#include "byteshield/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "byteshield/errors.hpp"
#include "byteshield/io.hpp"
#include "parallel.hpp"

namespace byteshield {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::vector<Token> widen(std::span<const std::uint8_t> bytes) { return {bytes.begin(), bytes.end()}; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  return {{"tp", tp},     {"fp", fp},   {"tn", tn},   {"fn", fn},           {"accuracy", accuracy},
          {"tpr", tpr},   {"fpr", fpr}, {"precision", precision}, {"f1", f1}};
}

MetricsReport compute_metrics(std::span<const std::pair<int, int>> predictions) {
  if (predictions.empty()) throw Error(Errc::kInvalidArgument, "cannot compute metrics of an empty prediction set");
  MetricsReport r;
  for (const auto& [pred, truth] : predictions) {
    if ((pred != 0 && pred != 1) || (truth != 0 && truth != 1)) {
      throw Error(Errc::kInvalidArgument, "labels must be 0 or 1");
    }
    if (pred && truth) ++r.tp;
    else if (pred) ++r.fp;
    else if (truth) ++r.fn;
    else ++r.tn;
  }
  r.accuracy = ratio(r.tp + r.tn, r.total());
  r.tpr = ratio(r.tp, r.tp + r.fn);
  r.fpr = ratio(r.fp, r.fp + r.tn);
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.f1 = r.precision + r.tpr > 0 ? 2 * r.precision * r.tpr / (r.precision + r.tpr) : 0.0;
  return r;
}

double aut(std::span<const double> values) {
  if (values.size() < 2) throw Error(Errc::kInvalidArgument, "AUT needs at least two time points");
  double sum = 0;
  for (std::size_t k = 0; k + 1 < values.size(); ++k) sum += (values[k] + values[k + 1]) / 2;
  return sum / static_cast<double>(values.size() - 1);
}

double aut(std::span<const std::pair<double, double>> series) {
  std::vector<double> values;
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (k > 0 && !(series[k].first > series[k - 1].first)) {
      throw Error(Errc::kInvalidArgument, "AUT time points must strictly increase");
    }
    values.push_back(series[k].second);
  }
  return aut(values);
}

// ---- attack sweep -----------------------------------------------------------------

void SweepConfig::validate() const {
  if (strategies.empty()) throw Error(Errc::kInvalidArgument, "sweep needs at least one strategy");
  if (budgets.empty()) throw Error(Errc::kInvalidArgument, "sweep needs at least one budget");
  for (const int b : budgets) {
    if (b < 0) throw Error(Errc::kInvalidArgument, "budgets must be >= 0");
  }
  AttackSpec probe = attack;
  probe.budget_percent = 1;
  probe.validate();
}

nlohmann::json SweepConfig::to_json() const {
  nlohmann::json strat = nlohmann::json::array();
  for (const auto s : strategies) strat.push_back(to_string(s));
  nlohmann::json a = attack.to_json();
  a.erase("strategy");
  a.erase("budget_percent");
  return {{"strategies", strat}, {"budgets", budgets}, {"attack", a}, {"jobs", jobs}};
}

const SweepCell& SweepReport::cell(std::size_t d, std::size_t s, std::size_t b) const {
  const std::size_t ns = config.strategies.size(), nb = config.budgets.size();
  if (d >= detectors.size() || s >= ns || b >= nb) throw Error(Errc::kOutOfRange, "sweep cell index out of range");
  return cells[(d * ns + s) * nb + b];
}

nlohmann::json SweepReport::to_json() const {
  nlohmann::json dets = nlohmann::json::array();
  for (std::size_t d = 0; d < detectors.size(); ++d) {
    dets.push_back({{"name", detectors[d]}, {"samples", total[d]}, {"excluded_not_detected", excluded[d]}});
  }
  nlohmann::json out_cells = nlohmann::json::array();
  for (const auto& c : cells) {
    out_cells.push_back({{"detector", c.detector},
                         {"strategy", to_string(c.strategy)},
                         {"budget_percent", c.budget_percent},
                         {"attacked", c.attacked},
                         {"still_malicious", c.still_malicious},
                         {"failed", c.failed},
                         {"adversarial_accuracy", c.adversarial_accuracy},
                         {"evasion_rate", c.evasion_rate},
                         {"mean_queries", c.mean_queries},
                         {"mean_initial_score", c.mean_initial_score},
                         {"mean_final_score", c.mean_final_score}});
  }
  return {{"config", config.to_json()}, {"detectors", dets}, {"cells", out_cells}};
}

std::string SweepReport::to_csv() const {
  std::string out =
      "detector,strategy,budget_percent,attacked,still_malicious,failed,adversarial_accuracy,evasion_rate,"
      "mean_queries,mean_initial_score,mean_final_score\n";
  for (const auto& c : cells) {
    out += c.detector + "," + to_string(c.strategy) + "," + std::to_string(c.budget_percent) + "," +
           std::to_string(c.attacked) + "," + std::to_string(c.still_malicious) + "," + std::to_string(c.failed) +
           "," + fmt(c.adversarial_accuracy) + "," + fmt(c.evasion_rate) + "," + fmt(c.mean_queries) + "," +
           fmt(c.mean_initial_score) + "," + fmt(c.mean_final_score) + "\n";
  }
  return out;
}

std::uint64_t sweep_seed(std::uint64_t base, std::size_t sample_index) {
  // splitmix64 of the pair; stable across platforms.
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(sample_index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SweepReport attack_sweep(const std::vector<SweepDetector>& detectors, const std::vector<SweepSample>& samples,
                         const DonorPool& donors, const SweepConfig& config) {
  config.validate();
  if (detectors.empty()) throw Error(Errc::kInvalidArgument, "sweep needs at least one detector");
  if (samples.empty()) throw Error(Errc::kInvalidArgument, "sweep needs at least one sample");
  const std::size_t nd = detectors.size(), ns = config.strategies.size(), nb = config.budgets.size(),
                    nx = samples.size();

  SweepReport rep;
  rep.config = config;
  for (const auto& d : detectors) rep.detectors.push_back(d.name);
  rep.total.assign(nd, nx);
  rep.excluded.assign(nd, 0);

  // Clean pass decides which samples are attackable per detector.
  std::vector<char> detected(nd * nx, 0);
  detail::parallel_for(nd * nx, config.jobs, [&](std::size_t k) {
    const auto& s = samples[k % nx];
    detected[k] = detectors[k / nx].detector->evaluate(widen(s.bytes)).malicious ? 1 : 0;
  });
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t i = 0; i < nx; ++i) rep.excluded[d] += detected[d * nx + i] ? 0 : 1;
  }

  struct Outcome {
    bool ran = false, failed = false, malicious = false;
    std::size_t queries = 0;
    double initial = 0, final_score = 0;
  };
  std::vector<Outcome> outcomes(nd * ns * nb * nx);
  detail::parallel_for(outcomes.size(), config.jobs, [&](std::size_t k) {
    const std::size_t i = k % nx;
    const std::size_t b = (k / nx) % nb;
    const std::size_t s = (k / nx / nb) % ns;
    const std::size_t d = k / nx / nb / ns;
    if (config.budgets[b] == 0 || !detected[d * nx + i]) return;
    AttackSpec spec = config.attack;
    spec.strategy = config.strategies[s];
    spec.budget_percent = config.budgets[b];
    spec.seed = sweep_seed(config.attack.seed, i);
    Outcome& o = outcomes[k];
    o.ran = true;
    try {
      const AttackResult r = run_attack(*detectors[d].detector, samples[i].bytes, spec, donors, samples[i].id);
      o.malicious = !r.evaded;
      o.queries = r.queries;
      o.initial = r.initial_score;
      o.final_score = r.final_score;
    } catch (const pe::PeError&) {
      o.failed = true;
    }
  });

  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t b = 0; b < nb; ++b) {
        SweepCell c;
        c.detector = detectors[d].name;
        c.strategy = config.strategies[s];
        c.budget_percent = config.budgets[b];
        if (c.budget_percent == 0) {
          c.attacked = nx;
          c.still_malicious = nx - rep.excluded[d];
          c.mean_queries = 1;
        } else {
          double q = 0, init = 0, fin = 0;
          for (std::size_t i = 0; i < nx; ++i) {
            const Outcome& o = outcomes[((d * ns + s) * nb + b) * nx + i];
            if (!o.ran) continue;
            if (o.failed) {
              ++c.failed;
              continue;
            }
            ++c.attacked;
            c.still_malicious += o.malicious;
            q += static_cast<double>(o.queries);
            init += o.initial;
            fin += o.final_score;
          }
          if (c.attacked > 0) {
            const double n = static_cast<double>(c.attacked);
            c.mean_queries = q / n;
            c.mean_initial_score = init / n;
            c.mean_final_score = fin / n;
          }
        }
        c.adversarial_accuracy = ratio(c.still_malicious, c.attacked);
        c.evasion_rate = c.attacked == 0 ? 0.0 : 1.0 - c.adversarial_accuracy;
        rep.cells.push_back(c);
      }
    }
  }
  return rep;
}

// ---- temporal evaluation -----------------------------------------------------------

nlohmann::json TemporalReport::to_json() const {
  nlohmann::json ms = nlohmann::json::array();
  for (const auto& m : months) {
    nlohmann::json j = m.metrics.to_json();
    j["month"] = m.month.to_string();
    ms.push_back(std::move(j));
  }
  nlohmann::json sk = nlohmann::json::array();
  for (const auto& m : skipped) sk.push_back(m.to_string());
  return {{"months", ms}, {"skipped_months", sk}, {"untimestamped", untimestamped}, {"aut", aut}};
}

std::string TemporalReport::to_csv() const {
  std::string out = "month,samples,tp,fp,tn,fn,accuracy,tpr,fpr,f1\n";
  for (const auto& m : months) {
    const auto& r = m.metrics;
    out += m.month.to_string() + "," + std::to_string(r.total()) + "," + std::to_string(r.tp) + "," +
           std::to_string(r.fp) + "," + std::to_string(r.tn) + "," + std::to_string(r.fn) + "," + fmt(r.accuracy) +
           "," + fmt(r.tpr) + "," + fmt(r.fpr) + "," + fmt(r.f1) + "\n";
  }
  return out;
}

TemporalReport temporal_eval(const Detector& detector, const std::vector<TimedSample>& samples, int jobs) {
  if (samples.empty()) throw Error(Errc::kInvalidArgument, "temporal evaluation needs timestamped samples");
  std::vector<int> predicted(samples.size());
  detail::parallel_for(samples.size(), jobs, [&](std::size_t i) {
    predicted[i] = detector.evaluate(widen(samples[i].bytes)).malicious ? 1 : 0;
  });
  std::map<YearMonth, std::vector<std::pair<int, int>>> by_month;
  for (std::size_t i = 0; i < samples.size(); ++i) by_month[samples[i].month].push_back({predicted[i], samples[i].label});

  TemporalReport rep;
  for (const auto& [month, preds] : by_month) rep.months.push_back({month, compute_metrics(preds)});
  const YearMonth first = by_month.begin()->first, last = by_month.rbegin()->first;
  for (YearMonth m = first; m < last; m = m.plus(1)) {
    if (!by_month.count(m)) rep.skipped.push_back(m);
  }
  std::vector<double> f1s;
  for (const auto& m : rep.months) f1s.push_back(m.metrics.f1);
  if (f1s.size() < 2) {
    throw Error(Errc::kInvalidArgument, "temporal evaluation needs samples from at least two months (found " +
                                            std::to_string(f1s.size()) + ")");
  }
  rep.aut = aut(f1s);
  return rep;
}

TemporalReport temporal_eval(const Detector& detector, const std::vector<ManifestRecord>& records,
                             const std::filesystem::path& root, int jobs) {
  std::vector<TimedSample> samples;
  std::size_t untimed = 0;
  for (const auto& r : records) {
    if (!r.timestamp) {
      ++untimed;
      continue;
    }
    samples.push_back({*r.timestamp, r.label, read_file(resolve(r, root).string())});
  }
  if (samples.empty()) throw Error(Errc::kInvalidArgument, "manifest has no timestamped rows");
  TemporalReport rep = temporal_eval(detector, samples, jobs);
  rep.untimestamped = untimed;
  return rep;
}

DetectionResult evaluate_detector(const Detector& detector, const std::vector<LabeledSample>& samples, int jobs) {
  if (samples.empty()) throw Error(Errc::kInvalidArgument, "no samples to evaluate");
  DetectionResult out;
  out.predicted.resize(samples.size());
  std::vector<std::size_t> passes(samples.size());
  detail::parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const Verdict v = detector.evaluate(widen(samples[i].bytes));
    out.predicted[i] = v.malicious ? 1 : 0;
    passes[i] = v.passes;
  });
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    pairs.push_back({out.predicted[i], samples[i].label});
    out.passes += passes[i];
  }
  out.metrics = compute_metrics(pairs);
  return out;
}

}  // namespace byteshield
