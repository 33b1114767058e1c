#pragma once

// Shared probability kernels: temperature softmax, cross-entropy with a
// clamped log, cosine similarity. Pure functions over immutable inputs.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "dlglc/matrix.hpp"

namespace dlglc {

// Floor applied to probabilities before log(); bounds the loss under
// degenerate sharpened targets.
inline constexpr double kLogClampFloor = 1e-12;

struct ProbDistribution {
  std::vector<double> probs;

  ProbDistribution() = default;
  explicit ProbDistribution(std::vector<double> p) : probs(std::move(p)) {}

  std::size_t size() const { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }

  double max_prob() const {
    return probs.empty() ? 0.0 : *std::max_element(probs.begin(), probs.end());
  }

  std::size_t argmax() const {
    return static_cast<std::size_t>(
        std::max_element(probs.begin(), probs.end()) - probs.begin());
  }

  // Entries in [0,1] and total mass 1 within 1e-9.
  bool is_valid() const {
    if (probs.empty()) return false;
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) return false;
      sum += p;
    }
    return std::abs(sum - 1.0) <= 1e-9;
  }
};

inline double log_sum_exp(std::span<const double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

// softmax(logits / temperature), stabilized by max subtraction.
inline ProbDistribution softmax_with_temperature(std::span<const double> logits,
                                                 double temperature) {
  if (!(temperature > 0.0))
    throw std::invalid_argument("softmax_with_temperature: temperature must be > 0");
  if (logits.empty())
    throw std::invalid_argument("softmax_with_temperature: empty logits");
  check_finite(logits, "softmax_with_temperature");

  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return ProbDistribution(std::move(out));
}

// -sum_k target_k * log(max(pred_k, floor)). The target is a constant; no
// gradient is defined through it.
inline double cross_entropy(const ProbDistribution& target, const ProbDistribution& pred) {
  if (target.size() != pred.size())
    throw std::invalid_argument("cross_entropy: dimension mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    if (target[k] != 0.0) acc -= target[k] * std::log(std::max(pred[k], kLogClampFloor));
  }
  return acc;
}

// d/dz of cross_entropy(target, softmax(z / temp)) including the log clamp:
// entries clamped below the floor contribute no gradient.
inline std::vector<double> ce_softmax_backward(const ProbDistribution& target,
                                               const ProbDistribution& pred,
                                               double temp, double weight) {
  std::vector<double> d(pred.size());
  double active_mass = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k)
    if (pred[k] > kLogClampFloor) active_mass += target[k];
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double a_j = pred[j] > kLogClampFloor ? target[j] : 0.0;
    d[j] = weight * (pred[j] * active_mass - a_j) / temp;
  }
  return d;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na < 1e-300 || nb < 1e-300)
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace dlglc
