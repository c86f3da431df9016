#include "byteshield/attacks.hpp"

#include <algorithm>
#include <limits>
#include <unordered_set>

#include "byteshield/errors.hpp"

namespace byteshield {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kPadding: return "padding";
    case Strategy::kShift: return "shift";
    case Strategy::kCodeCaves: return "code_caves";
    case Strategy::kSectionInjection: return "section_injection";
  }
  return "padding";
}

std::string to_string(InitMode m) {
  switch (m) {
    case InitMode::kBenign: return "benign";
    case InitMode::kRandom: return "random";
    case InitMode::kZeros: return "zeros";
  }
  return "benign";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::kPadding, Strategy::kShift, Strategy::kCodeCaves, Strategy::kSectionInjection}) {
    if (name == to_string(s)) return s;
  }
  throw Error(Errc::kInvalidArgument, "unknown strategy '" + name + "'");
}

InitMode parse_init_mode(const std::string& name) {
  for (InitMode m : {InitMode::kBenign, InitMode::kRandom, InitMode::kZeros}) {
    if (name == to_string(m)) return m;
  }
  throw Error(Errc::kInvalidArgument, "unknown init mode '" + name + "'");
}

void AttackSpec::validate() const {
  if (budget_percent <= 0) throw Error(Errc::kInvalidArgument, "budget percent must be > 0");
  if (optimizer_budget < 0) throw Error(Errc::kInvalidArgument, "optimizer budget must be >= 0");
  if (max_new_sections < 1 || static_cast<std::size_t>(max_new_sections) > pe::kMaxNewSections) {
    throw Error(Errc::kInvalidArgument, "max new sections must be in [1, 5]");
  }
}

nlohmann::json AttackSpec::to_json() const {
  return {{"strategy", to_string(strategy)},
          {"budget_percent", budget_percent},
          {"init", to_string(init)},
          {"opt_budget", optimizer_budget},
          {"seed", seed},
          {"max_new_sections", max_new_sections},
          {"stop_on_evasion", stop_on_evasion},
          {"code_cave_split", "equal"}};
}

std::size_t payload_bytes(std::size_t file_length, int budget_percent) {
  return percent_of(file_length, budget_percent);
}

std::size_t PayloadLayout::total() const noexcept {
  std::size_t t = 0;
  for (const auto& r : regions) t += r.length;
  return t;
}

std::size_t PayloadLayout::offset_of(std::size_t i) const {
  for (const auto& r : regions) {
    if (i < r.length) return r.offset + i;
    i -= r.length;
  }
  throw Error(Errc::kOutOfRange, "payload index past layout end");
}

std::vector<std::uint64_t> equal_split(std::uint64_t p, std::size_t n) {
  if (n == 0) throw Error(Errc::kInvalidArgument, "cannot split across zero parts");
  std::vector<std::uint64_t> out(n, p / n);
  out.back() += p % n;
  return out;
}

Slots build_payload_slots(std::span<const std::uint8_t> pe_bytes, const AttackSpec& spec) {
  spec.validate();
  const pe::PEImage img = pe::parse_pe(pe_bytes);
  const std::size_t p = payload_bytes(pe_bytes.size(), spec.budget_percent);
  Slots out;
  switch (spec.strategy) {
    case Strategy::kPadding: {
      const std::vector<std::uint8_t> zeros(p, 0);
      out.bytes = pe::serialize_pe(pe::append_overlay(img, zeros));
      out.layout.regions.push_back({pe_bytes.size(), p});
      break;
    }
    case Strategy::kShift: {
      const auto t = pe::shift_insert(img, p);
      out.bytes = pe::serialize_pe(t.image);
      out.layout.regions.push_back({t.injected.front().offset, p});
      break;
    }
    case Strategy::kCodeCaves: {
      const std::size_t n = pe::file_order(img).size();
      if (n == 0) throw pe::PeError(pe::PeErrc::kTooManyCaves, "image has no sections with raw data");
      const auto sizes = equal_split(p, n);
      const auto t = pe::carve_caves(img, sizes);
      out.bytes = pe::serialize_pe(t.image);
      // Zero-sized caves produce no injected range.
      std::size_t k = 0;
      for (const std::uint64_t s : sizes) {
        if (s == 0) continue;
        out.layout.regions.push_back({t.injected[k++].offset, s});
      }
      break;
    }
    case Strategy::kSectionInjection: {
      const std::size_t needed = std::max<std::size_t>(1, ceil_div(p, kInjectedSectionChunk));
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(spec.max_new_sections), needed);
      const auto t = pe::inject_sections(img, equal_split(p, n), {});
      out.bytes = pe::serialize_pe(t.image);
      out.layout.regions = t.injected;
      break;
    }
  }
  return out;
}

void DonorPool::add(std::string name, std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return;
  sources_.push_back({std::move(name), bytes_.size(), bytes.size()});
  bytes_.insert(bytes_.end(), bytes.begin(), bytes.end());
}

void init_payload(std::span<std::uint8_t> file, const PayloadLayout& layout, const DonorPool& donors,
                  InitMode mode, std::mt19937_64& rng) {
  if (mode == InitMode::kBenign && donors.empty()) {
    throw Error(Errc::kInvalidArgument, "benign initialization needs a nonempty donor pool");
  }
  std::uniform_int_distribution<int> byte(0, 255);
  for (const auto& r : layout.regions) {
    if (r.end() > file.size()) throw Error(Errc::kOutOfRange, "payload region outside file");
    auto* dst = file.data() + r.offset;
    switch (mode) {
      case InitMode::kZeros:
        std::fill_n(dst, r.length, 0);
        break;
      case InitMode::kRandom:
        for (std::size_t i = 0; i < r.length; ++i) dst[i] = static_cast<std::uint8_t>(byte(rng));
        break;
      case InitMode::kBenign: {
        const auto pool = donors.bytes();
        const std::size_t d = pool.size();
        const std::size_t span = d >= r.length ? d - r.length : d - 1;
        const std::size_t start = std::uniform_int_distribution<std::size_t>(0, span)(rng);
        for (std::size_t i = 0; i < r.length; ++i) dst[i] = pool[(start + i) % d];
        break;
      }
    }
  }
}

namespace {

// k distinct indices in [0, n), Floyd's sampling.
std::vector<std::size_t> sample_positions(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::unordered_set<std::size_t> chosen;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    const std::size_t pick = chosen.insert(t).second ? t : j;
    if (pick == j) chosen.insert(j);
    out.push_back(pick);
  }
  return out;
}

}  // namespace

OptimizeResult optimize_payload(const QueryFn& query, std::vector<std::uint8_t> file, const PayloadLayout& layout,
                                const AttackSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  OptimizeResult out;
  out.best = std::move(file);
  const std::size_t budget = static_cast<std::size_t>(spec.optimizer_budget);
  if (budget == 0) return out;

  out.best_verdict = query(out.best);
  out.evaluated = true;
  out.queries = 1;
  out.trace.push_back(out.best_verdict.objective);
  const std::size_t p = layout.total();
  if (p == 0) return out;

  // Flat payload index -> file offset.
  std::vector<std::size_t> where(p);
  for (std::size_t i = 0; i < p; ++i) where[i] = layout.offset_of(i);

  const double r_min = 1.0 / static_cast<double>(p);
  const double r_max = std::max(r_min, 0.25);
  double rate = r_min;
  int reject_streak = 0;
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::uint8_t> candidate = out.best;

  while (out.queries < budget) {
    if (spec.stop_on_evasion && !out.best_verdict.malicious) break;
    std::binomial_distribution<std::size_t> count_dist(p, rate);
    const std::size_t k = std::clamp<std::size_t>(count_dist(rng), 1, p);
    const auto picks = sample_positions(p, k, rng);
    for (const std::size_t i : picks) candidate[where[i]] = static_cast<std::uint8_t>(byte(rng));

    const Verdict v = query(candidate);
    ++out.queries;
    if (v.objective < out.best_verdict.objective) {
      for (const std::size_t i : picks) out.best[where[i]] = candidate[where[i]];
      out.best_verdict = v;
      rate = std::max(r_min, rate / 2);
      reject_streak = 0;
    } else {
      for (const std::size_t i : picks) candidate[where[i]] = out.best[where[i]];
      if (++reject_streak >= 10) {
        rate = std::min(r_max, rate * 2);
        reject_streak = 0;
      }
    }
    out.trace.push_back(out.best_verdict.objective);
  }
  return out;
}

AttackResult run_attack(const Detector& detector, std::span<const std::uint8_t> malware, const AttackSpec& spec,
                        const DonorPool& donors, const std::string& sample_id) {
  spec.validate();
  AttackResult res;
  res.sample_id = sample_id;
  res.detector = detector.name();
  res.spec = spec;
  auto query = [&](std::span<const std::uint8_t> bytes) {
    ++res.queries;
    const std::vector<Token> tokens(bytes.begin(), bytes.end());
    return detector.evaluate(tokens);
  };

  const Verdict clean = query(malware);
  res.clean_score = clean.objective;
  if (!clean.malicious) {
    throw Error(Errc::kNotDetected, "sample " + (sample_id.empty() ? std::string("<input>") : sample_id) +
                                        " is not detected as malicious; attack is vacuous");
  }

  Slots slots = build_payload_slots(malware, spec);
  res.baseline = slots.bytes;
  res.layout = slots.layout;
  res.payload_bytes = slots.layout.total();

  std::mt19937_64 rng(spec.seed);
  init_payload(slots.bytes, slots.layout, donors, spec.init, rng);

  OptimizeResult opt = optimize_payload(query, std::move(slots.bytes), slots.layout, spec, rng);
  res.optimizer_queries = opt.queries;
  Verdict final = opt.best_verdict;
  if (!opt.evaluated) final = query(opt.best);
  res.initial_score = opt.trace.empty() ? final.objective : opt.trace.front();
  res.final_score = final.objective;
  res.evaded = !final.malicious;
  res.trace = std::move(opt.trace);
  res.adversarial = std::move(opt.best);
  return res;
}

nlohmann::json to_json(const AttackResult& r) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& g : r.layout.regions) regions.push_back({g.offset, g.length});
  return {{"sample_id", r.sample_id},
          {"detector", r.detector},
          {"strategy", to_string(r.spec.strategy)},
          {"budget_percent", r.spec.budget_percent},
          {"init", to_string(r.spec.init)},
          {"seed", r.spec.seed},
          {"opt_budget", r.spec.optimizer_budget},
          {"payload_bytes", r.payload_bytes},
          {"regions", std::move(regions)},
          {"queries", r.queries},
          {"optimizer_queries", r.optimizer_queries},
          {"clean_score", r.clean_score},
          {"initial_score", r.initial_score},
          {"final_score", r.final_score},
          {"evaded", r.evaded}};
}

}  // namespace byteshield
