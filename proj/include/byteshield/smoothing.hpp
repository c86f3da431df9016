#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "byteshield/classifier.hpp"
#include "byteshield/masking.hpp"

namespace byteshield {

// Score threshold shared by every voter: f(x) >= 0.5 means malicious.
inline constexpr double kDecisionThreshold = 0.5;

inline bool is_malicious(double score) { return score >= kDecisionThreshold; }

struct WindowVote {
  std::size_t start = 0;   // offset of the masked window / chunk / sample index
  std::size_t length = 0;  // tokens masked (byteshield), chunk length (drs), kept tokens (rsdel)
  double score = 0;
  bool malicious = false;
};

struct VoteTally {
  std::size_t num_malicious = 0;
  std::size_t num_benign = 0;
  std::vector<WindowVote> votes;

  std::size_t windows() const noexcept { return votes.size(); }
  double malicious_fraction() const noexcept {
    return votes.empty() ? 0.0 : static_cast<double>(num_malicious) / static_cast<double>(votes.size());
  }
  void add(WindowVote v);
};

struct Prediction {
  bool malicious = false;
  VoteTally tally;
};

struct ChunkConfig {
  int chunks = 5;
  void validate() const;  // k >= 2
};

struct DeletionConfig {
  double delete_prob = 0.97;
  int samples = 100;
  std::uint64_t seed = 0;
  void validate() const;
};

// One masked version per planned window; malicious iff num_malicious >= T.
Prediction byteshield_predict(const Classifier& f, std::span<const Token> x, const DefenseConfig& cfg,
                              int jobs = 1);

// Threshold rule applied to an existing tally.
bool threshold_vote(const VoteTally& tally, int threshold);

// Majority over k contiguous chunks, ties malicious. Accepts k = 1, which
// reduces to a single plain pass.
Prediction drs_predict(const Classifier& f, std::span<const Token> x, int chunks, int jobs = 1);
Prediction drs_predict(const Classifier& f, std::span<const Token> x, const ChunkConfig& cfg, int jobs = 1);

// Majority over randomized-deletion versions, ties malicious.
Prediction rsdel_predict(const Classifier& f, std::span<const Token> x, const DeletionConfig& cfg,
                         int jobs = 1);
std::vector<Token> delete_tokens(std::span<const Token> x, double delete_prob, std::mt19937_64& rng);

bool plain_predict(const Classifier& f, std::span<const Token> x);

struct Certification {
  bool unanimous = false;
  bool malicious = false;  // common label, meaningful when unanimous
  VoteTally tally;
};

// Masks at every start 0..L-m. Disagreement among the votes signals a
// manipulated input.
Certification certify_exhaustive(const Classifier& f, std::span<const Token> x, std::size_t m, int jobs = 1);

nlohmann::json to_json(const VoteTally& tally);

// ---- detectors: classifier + decision rule, as seen by an attacker -------

enum class DefenseKind { kNone, kByteShield, kDrs, kRsDel };

std::string to_string(DefenseKind kind);
DefenseKind parse_defense_kind(const std::string& name);

struct DetectorSpec {
  DefenseKind kind = DefenseKind::kNone;
  DefenseConfig byteshield;
  ChunkConfig drs;
  DeletionConfig rsdel;
  // Attack objective: vote fraction / score (false) or the 0/1 label (true).
  bool label_only = false;
  int jobs = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

struct Verdict {
  bool malicious = false;
  double objective = 0;  // score for plain, malicious-vote fraction for voters
  std::size_t passes = 0;
};

class Detector {
 public:
  Detector(std::shared_ptr<const Classifier> classifier, DetectorSpec spec);

  Verdict evaluate(std::span<const Token> x) const;
  Prediction predict(std::span<const Token> x) const;

  const DetectorSpec& spec() const noexcept { return spec_; }
  std::string name() const;

 private:
  std::shared_ptr<const Classifier> classifier_;
  DetectorSpec spec_;
};

}  // namespace byteshield
