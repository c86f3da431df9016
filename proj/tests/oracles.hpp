#pragma once

// Independent reference implementations used as test oracles. They favor
// obviousness over speed and share no code with the library internals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "byteshield/classifier.hpp"

namespace oracle {

using byteshield::ClassifierConfig;
using byteshield::Token;

inline double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Straight-line forward pass: truncate or pad to max_len with PAD, embed,
// evaluate every convolution position, max-pool, dense, sigmoid.
template <typename Real>
double forward(const byteshield::BasicModel<Real>& model, std::span<const Token> x) {
  const ClassifierConfig& c = model.config();
  const auto& l = model.layout();
  auto p = model.params();
  std::vector<Token> padded(c.max_len, byteshield::kPad);
  std::copy_n(x.begin(), std::min<std::size_t>(x.size(), c.max_len), padded.begin());
  const std::size_t E = c.embed_dim, F = c.filters, K = c.kernel;
  auto emb = [&](Token t, std::size_t e) { return static_cast<double>(p[l.embedding + t * E + e]); };
  double z = p[l.dense_b];
  for (std::size_t f = 0; f < F; ++f) {
    double best = -INFINITY;
    for (std::size_t pos = 0; pos + K <= c.max_len; pos += c.conv_stride) {
      double a = p[l.conv_a_b + f], b = p[l.conv_b_b + f];
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t e = 0; e < E; ++e) {
          const double v = emb(padded[pos + k], e);
          a += p[l.conv_a_w + (f * K + k) * E + e] * v;
          b += p[l.conv_b_w + (f * K + k) * E + e] * v;
        }
      }
      best = std::max(best, a * sig(b));
    }
    z += p[l.dense_w + f] * best;
  }
  return sig(z);
}

// Largest relative error between the analytic gradient of the BCE loss and
// central finite differences over every parameter.
inline double gradient_check(byteshield::BasicModel<double>& model, std::span<const Token> x, int label,
                             double h = 1e-4, double floor = 1e-3) {
  using byteshield::bce_loss;
  byteshield::BasicEvaluator<double> eval(model);
  byteshield::ForwardTrace<double> trace;
  const double s = eval.forward(x, &trace);
  std::vector<double> grad(model.params().size(), 0.0);
  byteshield::backward(model, x, trace, s - label, std::span<double>(grad));
  auto p = model.params();
  double worst = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = bce_loss(byteshield::BasicEvaluator<double>(model).score(x), label);
    p[i] = keep - h;
    const double down = bce_loss(byteshield::BasicEvaluator<double>(model).score(x), label);
    p[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(numeric), std::abs(grad[i]), floor});
    worst = std::max(worst, std::abs(numeric - grad[i]) / denom);
  }
  return worst;
}

}  // namespace oracle
