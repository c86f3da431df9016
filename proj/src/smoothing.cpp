#include "byteshield/smoothing.hpp"

#include <algorithm>

#include "byteshield/errors.hpp"
#include "parallel.hpp"

namespace byteshield {

void VoteTally::add(WindowVote v) {
  (v.malicious ? num_malicious : num_benign) += 1;
  votes.push_back(v);
}

void ChunkConfig::validate() const {
  if (chunks < 2) throw Error(Errc::kInvalidArgument, "DRS chunk count must be >= 2");
}

void DeletionConfig::validate() const {
  if (!(delete_prob >= 0 && delete_prob <= 1)) {
    throw Error(Errc::kInvalidArgument, "deletion probability must be in [0, 1]");
  }
  if (samples < 1) throw Error(Errc::kInvalidArgument, "RSDel needs at least one sample");
}

namespace {

bool majority(const VoteTally& t) { return 2 * t.num_malicious >= t.windows(); }

// Scores masked versions of x for each start, splitting the start list
// across workers. Results stay in start order.
std::vector<double> masked_scores(const Classifier& f, std::span<const Token> x,
                                  std::span<const std::size_t> starts, std::size_t m, int jobs) {
  if (jobs <= 1 || starts.size() < 2) return f.score_masked(x, starts, m);
  const std::size_t parts = std::min<std::size_t>(starts.size(), static_cast<std::size_t>(jobs));
  std::vector<std::vector<double>> partial(parts);
  detail::parallel_for(parts, jobs, [&](std::size_t i) {
    const std::size_t lo = starts.size() * i / parts;
    const std::size_t hi = starts.size() * (i + 1) / parts;
    partial[i] = f.score_masked(x, starts.subspan(lo, hi - lo), m);
  });
  std::vector<double> out;
  out.reserve(starts.size());
  for (auto& p : partial) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

Prediction byteshield_predict(const Classifier& f, std::span<const Token> x, const DefenseConfig& cfg,
                              int jobs) {
  if (x.empty()) throw Error(Errc::kInvalidArgument, "cannot classify an empty input");
  const WindowSet ws = plan_windows(x.size(), cfg);
  const auto scores = masked_scores(f, x, ws.starts, ws.mask_bytes, jobs);
  Prediction out;
  for (std::size_t i = 0; i < ws.starts.size(); ++i) {
    out.tally.add({ws.starts[i], ws.mask_bytes, scores[i], is_malicious(scores[i])});
  }
  out.malicious = threshold_vote(out.tally, cfg.threshold);
  return out;
}

bool threshold_vote(const VoteTally& tally, int threshold) {
  return threshold >= 1 && tally.num_malicious >= static_cast<std::size_t>(threshold);
}

Prediction drs_predict(const Classifier& f, std::span<const Token> x, int chunks, int jobs) {
  if (x.empty()) throw Error(Errc::kInvalidArgument, "cannot classify an empty input");
  if (chunks < 1) throw Error(Errc::kInvalidArgument, "chunk count must be >= 1");
  if (static_cast<std::size_t>(chunks) > x.size()) {
    throw Error(Errc::kInvalidArgument, "more chunks than tokens");
  }
  const auto bounds = chunk_bounds(x.size(), static_cast<std::size_t>(chunks));
  std::vector<double> scores(static_cast<std::size_t>(chunks));
  detail::parallel_for(scores.size(), jobs, [&](std::size_t i) {
    scores[i] = f.score(x.subspan(bounds[i], bounds[i + 1] - bounds[i]));
  });
  Prediction out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.tally.add({bounds[i], bounds[i + 1] - bounds[i], scores[i], is_malicious(scores[i])});
  }
  out.malicious = majority(out.tally);
  return out;
}

Prediction drs_predict(const Classifier& f, std::span<const Token> x, const ChunkConfig& cfg, int jobs) {
  cfg.validate();
  return drs_predict(f, x, cfg.chunks, jobs);
}

std::vector<Token> delete_tokens(std::span<const Token> x, double delete_prob, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - delete_prob);
  std::vector<Token> out;
  out.reserve(static_cast<std::size_t>(static_cast<double>(x.size()) * (1.0 - delete_prob)) + 1);
  for (const Token t : x) {
    if (keep(rng)) out.push_back(t);
  }
  if (out.empty()) out.push_back(kPad);
  return out;
}

Prediction rsdel_predict(const Classifier& f, std::span<const Token> x, const DeletionConfig& cfg, int jobs) {
  cfg.validate();
  if (x.empty()) throw Error(Errc::kInvalidArgument, "cannot classify an empty input");
  // Versions are drawn sequentially from one stream so the tally does not
  // depend on the worker count.
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<Token>> versions;
  versions.reserve(static_cast<std::size_t>(cfg.samples));
  for (int i = 0; i < cfg.samples; ++i) versions.push_back(delete_tokens(x, cfg.delete_prob, rng));
  std::vector<double> scores(versions.size());
  detail::parallel_for(versions.size(), jobs, [&](std::size_t i) { scores[i] = f.score(versions[i]); });
  Prediction out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool empty = versions[i].size() == 1 && versions[i][0] == kPad;
    out.tally.add({i, empty ? 0 : versions[i].size(), scores[i], is_malicious(scores[i])});
  }
  out.malicious = majority(out.tally);
  return out;
}

bool plain_predict(const Classifier& f, std::span<const Token> x) { return is_malicious(f.score(x)); }

Certification certify_exhaustive(const Classifier& f, std::span<const Token> x, std::size_t m, int jobs) {
  if (x.empty()) throw Error(Errc::kInvalidArgument, "cannot certify an empty input");
  if (m == 0 || m > x.size()) throw Error(Errc::kOutOfRange, "mask size must satisfy 1 <= m <= L");
  std::vector<std::size_t> starts(x.size() - m + 1);
  for (std::size_t i = 0; i < starts.size(); ++i) starts[i] = i;
  const auto scores = masked_scores(f, x, starts, m, jobs);
  Certification out;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    out.tally.add({starts[i], m, scores[i], is_malicious(scores[i])});
  }
  out.unanimous = out.tally.num_malicious == 0 || out.tally.num_benign == 0;
  out.malicious = out.tally.num_malicious > 0 && out.tally.num_benign == 0;
  return out;
}

nlohmann::json to_json(const VoteTally& tally) {
  nlohmann::json votes = nlohmann::json::array();
  for (const WindowVote& v : tally.votes) {
    votes.push_back({{"start", v.start}, {"length", v.length}, {"score", v.score}, {"malicious", v.malicious}});
  }
  return {{"num_malicious", tally.num_malicious}, {"num_benign", tally.num_benign},
          {"windows", tally.windows()}, {"votes", std::move(votes)}};
}

// ---- detectors ----------------------------------------------------------------

std::string to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kByteShield: return "byteshield";
    case DefenseKind::kDrs: return "drs";
    case DefenseKind::kRsDel: return "rsdel";
  }
  return "none";
}

DefenseKind parse_defense_kind(const std::string& name) {
  if (name == "none") return DefenseKind::kNone;
  if (name == "byteshield") return DefenseKind::kByteShield;
  if (name == "drs") return DefenseKind::kDrs;
  if (name == "rsdel") return DefenseKind::kRsDel;
  throw Error(Errc::kInvalidArgument, "unknown defense '" + name + "'");
}

void DetectorSpec::validate() const {
  switch (kind) {
    case DefenseKind::kByteShield: byteshield.validate(); break;
    case DefenseKind::kDrs: drs.validate(); break;
    case DefenseKind::kRsDel: rsdel.validate(); break;
    case DefenseKind::kNone: break;
  }
}

nlohmann::json DetectorSpec::to_json() const {
  nlohmann::json j = {{"defense", to_string(kind)}, {"label_only", label_only}};
  switch (kind) {
    case DefenseKind::kByteShield:
      j["mask"] = byteshield.mask_percent;
      j["stride"] = byteshield.stride_percent;
      j["threshold"] = byteshield.threshold;
      break;
    case DefenseKind::kDrs:
      j["chunks"] = drs.chunks;
      break;
    case DefenseKind::kRsDel:
      j["pdel"] = rsdel.delete_prob;
      j["nsamples"] = rsdel.samples;
      j["seed"] = rsdel.seed;
      break;
    case DefenseKind::kNone:
      break;
  }
  return j;
}

Detector::Detector(std::shared_ptr<const Classifier> classifier, DetectorSpec spec)
    : classifier_(std::move(classifier)), spec_(spec) {
  if (!classifier_) throw Error(Errc::kInvalidArgument, "detector needs a classifier");
  spec_.validate();
}

std::string Detector::name() const {
  switch (spec_.kind) {
    case DefenseKind::kNone: return "plain";
    case DefenseKind::kByteShield:
      return "byteshield(M=" + std::to_string(spec_.byteshield.mask_percent) +
             ",S=" + std::to_string(spec_.byteshield.stride_percent) +
             ",T=" + std::to_string(spec_.byteshield.threshold) + ")";
    case DefenseKind::kDrs: return "drs(k=" + std::to_string(spec_.drs.chunks) + ")";
    case DefenseKind::kRsDel: return "rsdel(n=" + std::to_string(spec_.rsdel.samples) + ")";
  }
  return "plain";
}

Prediction Detector::predict(std::span<const Token> x) const {
  switch (spec_.kind) {
    case DefenseKind::kByteShield: return byteshield_predict(*classifier_, x, spec_.byteshield, spec_.jobs);
    case DefenseKind::kDrs: return drs_predict(*classifier_, x, spec_.drs, spec_.jobs);
    case DefenseKind::kRsDel: return rsdel_predict(*classifier_, x, spec_.rsdel, spec_.jobs);
    case DefenseKind::kNone: break;
  }
  const double s = classifier_->score(x);
  Prediction p;
  p.tally.add({0, x.size(), s, is_malicious(s)});
  p.malicious = is_malicious(s);
  return p;
}

Verdict Detector::evaluate(std::span<const Token> x) const {
  const Prediction p = predict(x);
  Verdict v;
  v.malicious = p.malicious;
  v.passes = p.tally.windows();
  if (spec_.label_only) {
    v.objective = p.malicious ? 1.0 : 0.0;
  } else if (spec_.kind == DefenseKind::kNone) {
    v.objective = p.tally.votes.front().score;
  } else {
    v.objective = p.tally.malicious_fraction();
  }
  return v;
}

}  // namespace byteshield
