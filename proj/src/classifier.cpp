#include "byteshield/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "byteshield/errors.hpp"
#include "byteshield/io.hpp"

namespace byteshield {

void ClassifierConfig::validate() const {
  if (embed_dim == 0 || filters == 0 || kernel == 0 || conv_stride == 0 || max_len == 0) {
    throw Error(Errc::kInvalidArgument, "classifier dimensions must be positive");
  }
  if (kernel > max_len) throw Error(Errc::kInvalidArgument, "kernel wider than max_len");
}

std::size_t ClassifierConfig::positions() const { return (max_len - kernel) / conv_stride + 1; }

ParamLayout::ParamLayout(const ClassifierConfig& cfg) {
  const std::size_t e = cfg.embed_dim;
  const std::size_t f = cfg.filters;
  const std::size_t k = cfg.kernel;
  embedding = 0;
  conv_a_w = embedding + kAlphabetSize * e;
  conv_a_b = conv_a_w + f * k * e;
  conv_b_w = conv_a_b + f;
  conv_b_b = conv_b_w + f * k * e;
  dense_w = conv_b_b + f;
  dense_b = dense_w + f;
  total = dense_b + 1;
}

template <typename Real>
BasicModel<Real>::BasicModel(const ClassifierConfig& cfg)
    : config_(cfg), layout_((cfg.validate(), cfg)), params_(layout_.total, Real(0)) {}

template <typename Real>
BasicModel<Real> BasicModel<Real>::initialized(const ClassifierConfig& cfg, std::uint64_t seed) {
  BasicModel model(cfg);
  std::mt19937_64 rng(seed);
  const ParamLayout& l = model.layout_;
  auto p = model.params();
  std::normal_distribution<double> emb(0.0, 1.0);
  for (std::size_t i = l.embedding; i < l.conv_a_w; ++i) p[i] = static_cast<Real>(emb(rng));
  std::fill(p.begin() + static_cast<std::ptrdiff_t>(l.embedding + kPad * cfg.embed_dim),
            p.begin() + static_cast<std::ptrdiff_t>(l.conv_a_w), Real(0));
  const double conv_scale = 1.0 / std::sqrt(static_cast<double>(cfg.kernel) * cfg.embed_dim);
  std::uniform_real_distribution<double> conv(-conv_scale, conv_scale);
  for (std::size_t i = l.conv_a_w; i < l.conv_a_b; ++i) p[i] = static_cast<Real>(conv(rng));
  for (std::size_t i = l.conv_b_w; i < l.conv_b_b; ++i) p[i] = static_cast<Real>(conv(rng));
  const double dense_scale = 1.0 / std::sqrt(static_cast<double>(cfg.filters));
  std::uniform_real_distribution<double> dense(-dense_scale, dense_scale);
  for (std::size_t i = l.dense_w; i < l.dense_b; ++i) p[i] = static_cast<Real>(dense(rng));
  return model;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

namespace {

template <typename Real>
Real sigmoid_t(Real z) {
  return Real(1) / (Real(1) + std::exp(-z));
}

}  // namespace

// ---- evaluator --------------------------------------------------------------

template <typename Real>
BasicEvaluator<Real>::BasicEvaluator(const BasicModel<Real>& model) : config_(model.config()) {
  const std::size_t e_dim = config_.embed_dim;
  const std::size_t f_dim = config_.filters;
  const std::size_t k_dim = config_.kernel;
  const ParamLayout& l = model.layout();
  auto p = model.params();
  proj_a_.assign(k_dim * kAlphabetSize * f_dim, Real(0));
  proj_b_.assign(k_dim * kAlphabetSize * f_dim, Real(0));
  for (std::size_t k = 0; k < k_dim; ++k) {
    for (std::size_t t = 0; t < kAlphabetSize; ++t) {
      const Real* emb = p.data() + l.embedding + t * e_dim;
      Real* row_a = proj_a_.data() + (k * kAlphabetSize + t) * f_dim;
      Real* row_b = proj_b_.data() + (k * kAlphabetSize + t) * f_dim;
      for (std::size_t f = 0; f < f_dim; ++f) {
        const Real* wa = p.data() + l.conv_a_w + (f * k_dim + k) * e_dim;
        const Real* wb = p.data() + l.conv_b_w + (f * k_dim + k) * e_dim;
        Real sa = 0;
        Real sb = 0;
        for (std::size_t e = 0; e < e_dim; ++e) {
          sa += wa[e] * emb[e];
          sb += wb[e] * emb[e];
        }
        row_a[f] = sa;
        row_b[f] = sb;
      }
    }
  }
  bias_a_.assign(p.begin() + static_cast<std::ptrdiff_t>(l.conv_a_b),
                 p.begin() + static_cast<std::ptrdiff_t>(l.conv_a_b + f_dim));
  bias_b_.assign(p.begin() + static_cast<std::ptrdiff_t>(l.conv_b_b),
                 p.begin() + static_cast<std::ptrdiff_t>(l.conv_b_b + f_dim));
  dense_w_.assign(p.begin() + static_cast<std::ptrdiff_t>(l.dense_w),
                  p.begin() + static_cast<std::ptrdiff_t>(l.dense_w + f_dim));
  dense_b_ = p[l.dense_b];
}

namespace {

// Pre-activations of both convolutions at one window. `token(i)` yields the
// token at padded position i.
template <typename Real, typename TokenAt>
void conv_position(const ClassifierConfig& cfg, const std::vector<Real>& proj_a,
                   const std::vector<Real>& proj_b, const std::vector<Real>& bias_a,
                   const std::vector<Real>& bias_b, std::size_t p, TokenAt&& token, Real* a, Real* b) {
  const std::size_t f_dim = cfg.filters;
  std::copy(bias_a.begin(), bias_a.end(), a);
  std::copy(bias_b.begin(), bias_b.end(), b);
  const std::size_t base = p * cfg.conv_stride;
  for (std::size_t k = 0; k < cfg.kernel; ++k) {
    const std::size_t row = (k * kAlphabetSize + token(base + k)) * f_dim;
    const Real* ra = proj_a.data() + row;
    const Real* rb = proj_b.data() + row;
    for (std::size_t f = 0; f < f_dim; ++f) {
      a[f] += ra[f];
      b[f] += rb[f];
    }
  }
}

struct Extent {
  std::size_t n = 0;            // real tokens after truncation
  std::size_t real_positions = 0;
  bool pad_window = false;      // some window lies entirely in padding
};

Extent extent_of(const ClassifierConfig& cfg, std::size_t len) {
  Extent ex;
  ex.n = std::min<std::size_t>(len, cfg.max_len);
  const std::size_t total = cfg.positions();
  ex.real_positions = std::min(total, ceil_div(ex.n, cfg.conv_stride));
  ex.pad_window = total > ex.real_positions;
  return ex;
}

}  // namespace

template <typename Real>
void BasicEvaluator<Real>::position(std::span<const Token> x, std::size_t n, std::size_t p, Real* a,
                                    Real* b) const {
  conv_position(config_, proj_a_, proj_b_, bias_a_, bias_b_, p,
                [&](std::size_t i) -> std::size_t { return i < n ? x[i] : kPad; }, a, b);
}

template <typename Real>
Real BasicEvaluator<Real>::gated(Real a, Real b) const {
  return a * sigmoid_t(b);
}

template <typename Real>
Real BasicEvaluator<Real>::head(std::span<const Real> pooled) const {
  Real z = dense_b_;
  for (std::size_t f = 0; f < pooled.size(); ++f) z += dense_w_[f] * pooled[f];
  return z;
}

template <typename Real>
Real BasicEvaluator<Real>::forward(std::span<const Token> x, ForwardTrace<Real>* trace) const {
  const std::size_t f_dim = config_.filters;
  const Extent ex = extent_of(config_, x.size());
  std::vector<Real> pooled(f_dim, -std::numeric_limits<Real>::infinity());
  std::vector<std::size_t> arg(f_dim, ForwardTrace<Real>::kPadWindow);
  std::vector<Real> best_a(f_dim, 0), best_g(f_dim, 0);
  std::vector<Real> a(f_dim), b(f_dim);
  auto consider = [&](std::size_t p) {
    for (std::size_t f = 0; f < f_dim; ++f) {
      const Real g = sigmoid_t(b[f]);
      const Real h = a[f] * g;
      if (h > pooled[f]) {
        pooled[f] = h;
        arg[f] = p;
        best_a[f] = a[f];
        best_g[f] = g;
      }
    }
  };
  for (std::size_t p = 0; p < ex.real_positions; ++p) {
    position(x, ex.n, p, a.data(), b.data());
    consider(p);
  }
  if (ex.pad_window) {
    conv_position(config_, proj_a_, proj_b_, bias_a_, bias_b_, 0,
                  [](std::size_t) -> std::size_t { return kPad; }, a.data(), b.data());
    consider(ForwardTrace<Real>::kPadWindow);
  }
  const Real z = head(pooled);
  const Real s = sigmoid_t(z);
  if (trace != nullptr) {
    trace->pooled = std::move(pooled);
    trace->argmax = std::move(arg);
    trace->pre_a = std::move(best_a);
    trace->gate = std::move(best_g);
    trace->logit = z;
    trace->score = s;
  }
  return s;
}

template <typename Real>
Real BasicEvaluator<Real>::score(std::span<const Token> x) const {
  return forward(x, nullptr);
}

template <typename Real>
std::vector<Real> BasicEvaluator<Real>::score_masked(std::span<const Token> x,
                                                     std::span<const std::size_t> starts,
                                                     std::size_t m) const {
  const std::size_t f_dim = config_.filters;
  const std::size_t k_dim = config_.kernel;
  const std::size_t stride = config_.conv_stride;
  const Extent ex = extent_of(config_, x.size());
  const std::size_t np = ex.real_positions;
  const Real neg_inf = -std::numeric_limits<Real>::infinity();

  // Gated activations of the unmasked input with prefix/suffix maxima.
  std::vector<Real> prefix(np * f_dim), suffix(np * f_dim);
  std::vector<Real> a(f_dim), b(f_dim);
  for (std::size_t p = 0; p < np; ++p) {
    position(x, ex.n, p, a.data(), b.data());
    for (std::size_t f = 0; f < f_dim; ++f) {
      const Real h = gated(a[f], b[f]);
      prefix[p * f_dim + f] = p == 0 ? h : std::max(prefix[(p - 1) * f_dim + f], h);
      suffix[p * f_dim + f] = h;
    }
  }
  for (std::size_t p = np; p-- > 1;) {
    for (std::size_t f = 0; f < f_dim; ++f) {
      suffix[(p - 1) * f_dim + f] = std::max(suffix[(p - 1) * f_dim + f], suffix[p * f_dim + f]);
    }
  }
  std::vector<Real> pad_value(f_dim);
  conv_position(config_, proj_a_, proj_b_, bias_a_, bias_b_, 0,
                [](std::size_t) -> std::size_t { return kPad; }, a.data(), b.data());
  for (std::size_t f = 0; f < f_dim; ++f) pad_value[f] = gated(a[f], b[f]);

  std::vector<Real> out;
  out.reserve(starts.size());
  std::vector<Real> pooled(f_dim);
  for (const std::size_t start : starts) {
    if (m == 0 || start > x.size() || m > x.size() - start) {
      throw Error(Errc::kOutOfRange, "mask window outside sequence");
    }
    const std::size_t end = std::min(start + m, ex.n);
    if (np == 0 || start >= ex.n) {
      // Mask lies past the truncation point.
      std::fill(pooled.begin(), pooled.end(), neg_inf);
      if (np > 0) std::copy_n(prefix.begin() + static_cast<std::ptrdiff_t>((np - 1) * f_dim), f_dim, pooled.begin());
      if (ex.pad_window) {
        for (std::size_t f = 0; f < f_dim; ++f) pooled[f] = std::max(pooled[f], pad_value[f]);
      }
      out.push_back(sigmoid_t(head(pooled)));
      continue;
    }
    const std::size_t lo = start + 1 > k_dim ? ceil_div(start + 1 - k_dim, stride) : 0;
    const std::size_t hi = std::min((end - 1) / stride, np - 1);
    std::fill(pooled.begin(), pooled.end(), neg_inf);
    if (lo > 0) {
      const std::size_t q = std::min(lo, np) - 1;
      for (std::size_t f = 0; f < f_dim; ++f) pooled[f] = prefix[q * f_dim + f];
    }
    if (hi + 1 < np) {
      for (std::size_t f = 0; f < f_dim; ++f) pooled[f] = std::max(pooled[f], suffix[(hi + 1) * f_dim + f]);
    }
    bool any_pad = ex.pad_window;
    for (std::size_t p = lo; p <= hi && p < np; ++p) {
      const std::size_t w0 = p * stride;
      const std::size_t w1 = std::min(w0 + k_dim, ex.n);
      if (w0 >= start && w1 <= end) {
        any_pad = true;
        continue;
      }
      conv_position(config_, proj_a_, proj_b_, bias_a_, bias_b_, p,
                    [&](std::size_t i) -> std::size_t {
                      return (i < ex.n && (i < start || i >= end)) ? x[i] : kPad;
                    },
                    a.data(), b.data());
      for (std::size_t f = 0; f < f_dim; ++f) pooled[f] = std::max(pooled[f], gated(a[f], b[f]));
    }
    if (any_pad) {
      for (std::size_t f = 0; f < f_dim; ++f) pooled[f] = std::max(pooled[f], pad_value[f]);
    }
    out.push_back(sigmoid_t(head(pooled)));
  }
  return out;
}

// ---- backward ---------------------------------------------------------------

template <typename Real>
void backward(const BasicModel<Real>& model, std::span<const Token> x, const ForwardTrace<Real>& trace,
              Real dlogit, std::span<Real> grad) {
  const ClassifierConfig& cfg = model.config();
  const ParamLayout& l = model.layout();
  const std::size_t e_dim = cfg.embed_dim;
  const std::size_t k_dim = cfg.kernel;
  const std::size_t n = std::min<std::size_t>(x.size(), cfg.max_len);
  auto p = model.params();
  grad[l.dense_b] += dlogit;
  for (std::size_t f = 0; f < cfg.filters; ++f) {
    grad[l.dense_w + f] += dlogit * trace.pooled[f];
    const Real dh = dlogit * p[l.dense_w + f];
    const Real g = trace.gate[f];
    const Real da = dh * g;
    const Real db = dh * trace.pre_a[f] * g * (Real(1) - g);
    grad[l.conv_a_b + f] += da;
    grad[l.conv_b_b + f] += db;
    if (trace.argmax[f] == ForwardTrace<Real>::kPadWindow) continue;
    const std::size_t base = trace.argmax[f] * cfg.conv_stride;
    for (std::size_t k = 0; k < k_dim; ++k) {
      const std::size_t i = base + k;
      const std::size_t t = i < n ? x[i] : kPad;
      const std::size_t wa = l.conv_a_w + (f * k_dim + k) * e_dim;
      const std::size_t wb = l.conv_b_w + (f * k_dim + k) * e_dim;
      const std::size_t em = l.embedding + t * e_dim;
      for (std::size_t e = 0; e < e_dim; ++e) {
        grad[wa + e] += da * p[em + e];
        grad[wb + e] += db * p[em + e];
        grad[em + e] += da * p[wa + e] + db * p[wb + e];
      }
    }
  }
}

double bce_loss(double score, int label) {
  const double s = std::clamp(score, kBceEpsilon, 1.0 - kBceEpsilon);
  return label == 1 ? -std::log(s) : -std::log(1.0 - s);
}

double bce_loss_grad(double score, int label) {
  const double s = std::clamp(score, kBceEpsilon, 1.0 - kBceEpsilon);
  return label == 1 ? -1.0 / s : 1.0 / (1.0 - s);
}

// ---- classifier adapters ------------------------------------------------------

std::vector<double> Classifier::score_masked(std::span<const Token> x, std::span<const std::size_t> starts,
                                             std::size_t m) const {
  std::vector<double> out;
  out.reserve(starts.size());
  std::vector<Token> buf(x.begin(), x.end());
  for (const std::size_t start : starts) {
    std::copy(x.begin(), x.end(), buf.begin());
    mask_in_place(buf, start, m);
    out.push_back(score(buf));
  }
  return out;
}

MalConvClassifier::MalConvClassifier(const ClassifierModel& model)
    : eval_(std::make_shared<const BasicEvaluator<float>>(model)) {}

double MalConvClassifier::score(std::span<const Token> x) const { return eval_->score(x); }

std::vector<double> MalConvClassifier::score_masked(std::span<const Token> x,
                                                    std::span<const std::size_t> starts,
                                                    std::size_t m) const {
  auto scores = eval_->score_masked(x, starts, m);
  return {scores.begin(), scores.end()};
}

bool occurs_unmasked(std::span<const Token> x, std::span<const Token> pattern) {
  if (pattern.empty() || pattern.size() > x.size()) return false;
  // Patterns never contain PAD, so an exact match is PAD-free.
  return std::search(x.begin(), x.end(), pattern.begin(), pattern.end()) != x.end();
}

double oracle_classify(std::span<const Token> x, std::span<const Token> signature,
                       std::span<const Token> decoy) {
  if (occurs_unmasked(x, decoy)) return 0.1;
  if (occurs_unmasked(x, signature)) return 0.9;
  return 0.1;
}

PatternOracle::PatternOracle(std::vector<Token> signature, std::vector<Token> decoy)
    : signature_(std::move(signature)), decoy_(std::move(decoy)) {
  auto check = [](const std::vector<Token>& pat, const char* what) {
    if (pat.empty()) throw Error(Errc::kInvalidArgument, std::string(what) + " pattern is empty");
    if (std::find(pat.begin(), pat.end(), kPad) != pat.end() ||
        std::any_of(pat.begin(), pat.end(), [](Token t) { return t > kPad; })) {
      throw Error(Errc::kInvalidArgument, std::string(what) + " pattern contains PAD");
    }
  };
  check(signature_, "signature");
  check(decoy_, "decoy");
}

double PatternOracle::score(std::span<const Token> x) const { return oracle_classify(x, signature_, decoy_); }

// ---- training ---------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(Errc::kInvalidArgument, "epochs must be >= 0");
  if (batch_size == 0) throw Error(Errc::kInvalidArgument, "batch size must be >= 1");
  if (!(learning_rate > 0)) throw Error(Errc::kInvalidArgument, "learning rate must be positive");
  if (momentum < 0 || momentum >= 1) throw Error(Errc::kInvalidArgument, "momentum must be in [0, 1)");
  switch (noise) {
    case NoiseKind::kMaskWindow:
      if (mask_percent < 1 || mask_percent >= 100) {
        throw Error(Errc::kInvalidArgument, "training mask percent must satisfy 1 <= M < 100");
      }
      break;
    case NoiseKind::kDelete:
      if (!(delete_prob >= 0 && delete_prob <= 1)) {
        throw Error(Errc::kInvalidArgument, "deletion probability must be in [0, 1]");
      }
      break;
    case NoiseKind::kChunk:
      if (chunks < 1) throw Error(Errc::kInvalidArgument, "chunk count must be >= 1");
      break;
    case NoiseKind::kNone:
      break;
  }
}

std::vector<Token> apply_training_noise(std::span<const Token> x, const TrainConfig& cfg,
                                        std::mt19937_64& rng, std::size_t* mask_start,
                                        std::size_t* mask_len) {
  switch (cfg.noise) {
    case NoiseKind::kNone:
      return {x.begin(), x.end()};
    case NoiseKind::kMaskWindow: {
      std::vector<Token> out(x.begin(), x.end());
      const std::size_t m = std::min(percent_of(x.size(), cfg.mask_percent), x.size());
      const std::size_t idx = random_mask_start(x.size(), m, rng);
      if (m > 0) mask_in_place(out, idx, m);
      if (mask_start != nullptr) *mask_start = idx;
      if (mask_len != nullptr) *mask_len = m;
      return out;
    }
    case NoiseKind::kDelete: {
      std::vector<Token> out;
      std::bernoulli_distribution keep(1.0 - cfg.delete_prob);
      for (const Token t : x) {
        if (keep(rng)) out.push_back(t);
      }
      if (out.empty()) out.push_back(kPad);
      return out;
    }
    case NoiseKind::kChunk: {
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.chunks), x.size());
      if (k <= 1) return {x.begin(), x.end()};
      const auto bounds = chunk_bounds(x.size(), k);
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      const std::size_t c = pick(rng);
      return {x.begin() + static_cast<std::ptrdiff_t>(bounds[c]),
              x.begin() + static_cast<std::ptrdiff_t>(bounds[c + 1])};
    }
  }
  return {x.begin(), x.end()};
}

template <typename Real>
TrainReport train(BasicModel<Real>& model, std::span<const Example> data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.empty()) throw Error(Errc::kInvalidArgument, "training set is empty");
  for (const Example& ex : data) {
    if (ex.label != 0 && ex.label != 1) throw Error(Errc::kInvalidArgument, "labels must be 0 or 1");
    if (ex.tokens.empty()) throw Error(Errc::kInvalidArgument, "empty training example");
  }
  const ClassifierConfig& mc = model.config();
  const ParamLayout& l = model.layout();
  const std::size_t pad_row = l.embedding + kPad * mc.embed_dim;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Real> grad(l.total), velocity(l.total, Real(0));
  auto params = model.params();
  TrainReport report;
  ForwardTrace<Real> trace;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t last = std::min(order.size(), first + cfg.batch_size);
      const Real inv = Real(1) / static_cast<Real>(last - first);
      const BasicEvaluator<Real> eval(model);
      std::fill(grad.begin(), grad.end(), Real(0));
      double batch_loss = 0;
      for (std::size_t j = first; j < last; ++j) {
        const Example& ex = data[order[j]];
        const std::span<const Token> view(ex.tokens.data(), std::min<std::size_t>(ex.tokens.size(), mc.max_len));
        std::size_t ms = 0, ml = 0;
        const auto noisy = apply_training_noise(view, cfg, rng, &ms, &ml);
        if (cfg.noise == NoiseKind::kMaskWindow) {
          report.mask_starts.push_back(ms);
          report.mask_lengths.push_back(ml);
          report.example_lengths.push_back(view.size());
        }
        const Real s = eval.forward(noisy, &trace);
        batch_loss += bce_loss(static_cast<double>(s), ex.label);
        backward(model, std::span<const Token>(noisy), trace, (s - static_cast<Real>(ex.label)) * inv,
                 std::span<Real>(grad));
      }
      std::fill_n(grad.begin() + static_cast<std::ptrdiff_t>(pad_row), mc.embed_dim, Real(0));
      const Real lr = static_cast<Real>(cfg.learning_rate);
      const Real mu = static_cast<Real>(cfg.momentum);
      for (std::size_t i = 0; i < l.total; ++i) {
        velocity[i] = mu * velocity[i] - lr * grad[i];
        params[i] += velocity[i];
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(Errc::kInvalidArgument, "training diverged (non-finite loss) in epoch " +
                                                std::to_string(epoch + 1) + "; lower the learning rate");
      }
      loss_sum += batch_loss / static_cast<double>(last - first);
      ++batches;
    }
    const double mean = loss_sum / static_cast<double>(batches);
    report.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return report;
}

// ---- serialization ------------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t uint(int width) {
    if (b_.size() - pos_ < static_cast<std::size_t>(width)) {
      throw Error(Errc::kModelFormat, "model file truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (remaining() < n) throw Error(Errc::kModelFormat, "model file truncated");
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_model(const ClassifierModel& model) {
  const ClassifierConfig& c = model.config();
  std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
  put_u32(out, kModelVersion);
  put_u32(out, c.embed_dim);
  put_u32(out, c.filters);
  put_u32(out, c.kernel);
  put_u32(out, c.conv_stride);
  put_u32(out, c.max_len);
  put_u64(out, model.params().size());
  out.reserve(out.size() + 4 * model.params().size());
  for (const float v : model.params()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

ClassifierModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(sizeof(kModelMagic));
  if (!std::equal(magic.begin(), magic.end(), std::begin(kModelMagic))) {
    throw Error(Errc::kModelFormat, "bad model magic");
  }
  const auto version = static_cast<std::uint32_t>(r.uint(4));
  if (version != kModelVersion) {
    throw Error(Errc::kModelFormat, "unsupported model version " + std::to_string(version));
  }
  ClassifierConfig c;
  c.embed_dim = static_cast<std::uint32_t>(r.uint(4));
  c.filters = static_cast<std::uint32_t>(r.uint(4));
  c.kernel = static_cast<std::uint32_t>(r.uint(4));
  c.conv_stride = static_cast<std::uint32_t>(r.uint(4));
  c.max_len = static_cast<std::uint32_t>(r.uint(4));
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(Errc::kModelFormat, std::string("invalid model config: ") + e.what());
  }
  const std::uint64_t count = r.uint(8);
  const ParamLayout layout(c);
  if (count != layout.total) {
    throw Error(Errc::kModelFormat, "parameter count " + std::to_string(count) +
                                        " does not match declared config (" +
                                        std::to_string(layout.total) + ")");
  }
  if (r.remaining() < 4 * count) throw Error(Errc::kModelFormat, "model file truncated");
  if (r.remaining() > 4 * count) throw Error(Errc::kModelFormat, "trailing bytes after parameters");
  ClassifierModel model(c);
  auto p = model.params();
  for (std::size_t i = 0; i < count; ++i) {
    p[i] = std::bit_cast<float>(static_cast<std::uint32_t>(r.uint(4)));
    if (!std::isfinite(p[i])) throw Error(Errc::kModelFormat, "non-finite parameter");
  }
  for (std::size_t e = 0; e < c.embed_dim; ++e) {
    if (p[layout.embedding + kPad * c.embed_dim + e] != 0.0f) {
      throw Error(Errc::kModelFormat, "PAD embedding row is not zero");
    }
  }
  return model;
}

void save_model(const ClassifierModel& model, const std::string& path) {
  write_file_atomic(path, serialize_model(model));
}

ClassifierModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

template class BasicModel<float>;
template class BasicModel<double>;
template class BasicEvaluator<float>;
template class BasicEvaluator<double>;
template void backward<float>(const BasicModel<float>&, std::span<const Token>, const ForwardTrace<float>&,
                              float, std::span<float>);
template void backward<double>(const BasicModel<double>&, std::span<const Token>,
                               const ForwardTrace<double>&, double, std::span<double>);
template TrainReport train<float>(BasicModel<float>&, std::span<const Example>, const TrainConfig&,
                                  const EpochCallback&);
template TrainReport train<double>(BasicModel<double>&, std::span<const Example>, const TrainConfig&,
                                   const EpochCallback&);

}  // namespace byteshield
