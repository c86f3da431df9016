#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "byteshield/masking.hpp"

namespace byteshield {

// Shape of the gated-convolution byte classifier.
struct ClassifierConfig {
  std::uint32_t embed_dim = 8;
  std::uint32_t filters = 16;
  std::uint32_t kernel = 8;
  std::uint32_t conv_stride = 8;
  std::uint32_t max_len = 16384;

  static ClassifierConfig toy() { return {}; }
  static ClassifierConfig full() { return {8, 128, 512, 512, 1u << 20}; }

  void validate() const;
  // Number of convolution positions over a max_len input.
  std::size_t positions() const;

  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

// Flat parameter vector in file order:
//   embedding   kAlphabetSize x E   (row kPad is frozen at zero)
//   conv_a      F x K x E, then F biases
//   conv_b      F x K x E, then F biases (gate)
//   dense       F weights, then 1 bias
struct ParamLayout {
  std::size_t embedding = 0;
  std::size_t conv_a_w = 0;
  std::size_t conv_a_b = 0;
  std::size_t conv_b_w = 0;
  std::size_t conv_b_b = 0;
  std::size_t dense_w = 0;
  std::size_t dense_b = 0;
  std::size_t total = 0;

  explicit ParamLayout(const ClassifierConfig& cfg);
  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

template <typename Real>
class BasicModel {
 public:
  explicit BasicModel(const ClassifierConfig& cfg);

  // Small random weights, zero biases, zero PAD row.
  static BasicModel initialized(const ClassifierConfig& cfg, std::uint64_t seed);

  const ClassifierConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::span<Real> params() noexcept { return params_; }
  std::span<const Real> params() const noexcept { return params_; }

  std::span<const Real> embedding_row(Token t) const {
    return std::span<const Real>(params_).subspan(layout_.embedding + t * config_.embed_dim,
                                                  config_.embed_dim);
  }

  template <typename Other>
  BasicModel<Other> cast() const {
    BasicModel<Other> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<Other>(params_[i]);
    return out;
  }

  friend bool operator==(const BasicModel&, const BasicModel&) = default;

 private:
  ClassifierConfig config_;
  ParamLayout layout_;
  std::vector<Real> params_;
};

using ClassifierModel = BasicModel<float>;

// Intermediate state of one forward pass, kept for backpropagation.
template <typename Real>
struct ForwardTrace {
  static constexpr std::size_t kPadWindow = static_cast<std::size_t>(-1);

  std::vector<Real> pooled;          // F
  std::vector<std::size_t> argmax;   // F, position index or kPadWindow
  std::vector<Real> pre_a;           // F, conv_a output at argmax
  std::vector<Real> gate;            // F, sigmoid(conv_b) at argmax
  Real logit = 0;
  Real score = 0;
};

// Precomputed per-(kernel offset, token) projections of the embedding
// through both convolutions. Immutable; safe to share across threads.
template <typename Real>
class BasicEvaluator {
 public:
  explicit BasicEvaluator(const BasicModel<Real>& model);

  const ClassifierConfig& config() const noexcept { return config_; }

  Real score(std::span<const Token> x) const;
  Real forward(std::span<const Token> x, ForwardTrace<Real>* trace) const;

  // Score of x with [start, start + m) replaced by PAD, for each start.
  // Bit-identical to scoring each masked copy independently.
  std::vector<Real> score_masked(std::span<const Token> x, std::span<const std::size_t> starts,
                                 std::size_t m) const;

 private:
  void position(std::span<const Token> x, std::size_t n, std::size_t p, Real* a, Real* b) const;
  Real gated(Real a, Real b) const;
  Real head(std::span<const Real> pooled) const;

  ClassifierConfig config_;
  std::vector<Real> proj_a_;  // K x kAlphabetSize x F
  std::vector<Real> proj_b_;
  std::vector<Real> bias_a_;
  std::vector<Real> bias_b_;
  std::vector<Real> dense_w_;
  Real dense_b_ = 0;
};

// Accumulates dL/dparams for one example into grad, given dL/dlogit.
// The PAD row receives its raw gradient; the trainer zeroes it.
template <typename Real>
void backward(const BasicModel<Real>& model, std::span<const Token> x, const ForwardTrace<Real>& trace,
              Real dlogit, std::span<Real> grad);

double sigmoid(double z);

inline constexpr double kBceEpsilon = 1e-7;
double bce_loss(double score, int label);
// d bce_loss / d score, on the clamped score.
double bce_loss_grad(double score, int label);

// Anything that maps a token sequence to a maliciousness score in [0, 1].
// Implementations must be safe for concurrent const use.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual double score(std::span<const Token> x) const = 0;
  // Default masks a copy per start and calls score().
  virtual std::vector<double> score_masked(std::span<const Token> x, std::span<const std::size_t> starts,
                                           std::size_t m) const;
};

class MalConvClassifier : public Classifier {
 public:
  explicit MalConvClassifier(const ClassifierModel& model);
  double score(std::span<const Token> x) const override;
  std::vector<double> score_masked(std::span<const Token> x, std::span<const std::size_t> starts,
                                   std::size_t m) const override;

 private:
  std::shared_ptr<const BasicEvaluator<float>> eval_;
};

class FunctionClassifier : public Classifier {
 public:
  using Fn = std::function<double(std::span<const Token>)>;
  explicit FunctionClassifier(Fn fn) : fn_(std::move(fn)) {}
  double score(std::span<const Token> x) const override { return fn_(x); }

 private:
  Fn fn_;
};

// Deterministic test oracle: 0.1 if the decoy occurs unmasked, else 0.9 if
// the signature occurs unmasked, else 0.1. A match containing PAD does not
// count.
double oracle_classify(std::span<const Token> x, std::span<const Token> signature,
                       std::span<const Token> decoy);
bool occurs_unmasked(std::span<const Token> x, std::span<const Token> pattern);

class PatternOracle : public Classifier {
 public:
  PatternOracle(std::vector<Token> signature, std::vector<Token> decoy);
  double score(std::span<const Token> x) const override;

 private:
  std::vector<Token> signature_;
  std::vector<Token> decoy_;
};

// ---- training -------------------------------------------------------------

struct Example {
  std::vector<Token> tokens;
  int label = 0;  // 1 = malicious
};

enum class NoiseKind { kNone, kMaskWindow, kDelete, kChunk };

struct TrainConfig {
  NoiseKind noise = NoiseKind::kMaskWindow;
  int mask_percent = 50;      // kMaskWindow
  double delete_prob = 0.97;  // kDelete
  int chunks = 5;             // kChunk
  int epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  // Mask starts sampled for kMaskWindow, in draw order (audit trail).
  std::vector<std::size_t> mask_starts;
  std::vector<std::size_t> mask_lengths;
  std::vector<std::size_t> example_lengths;
};

// Applies the configured noise to one training example.
std::vector<Token> apply_training_noise(std::span<const Token> x, const TrainConfig& cfg,
                                        std::mt19937_64& rng, std::size_t* mask_start = nullptr,
                                        std::size_t* mask_len = nullptr);

// Optional per-epoch hook (epoch index, mean loss).
using EpochCallback = std::function<void(int, double)>;

template <typename Real>
TrainReport train(BasicModel<Real>& model, std::span<const Example> data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// ---- serialization --------------------------------------------------------

inline constexpr char kModelMagic[8] = {'B', 'S', 'H', 'L', 'D', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> serialize_model(const ClassifierModel& model);
ClassifierModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const ClassifierModel& model, const std::string& path);
ClassifierModel load_model(const std::string& path);

}  // namespace byteshield
