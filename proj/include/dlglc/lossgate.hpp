#pragma once

// Dynamic loss-gate: per-sample losses recorded each epoch, a 2-component
// GMM fit to their log values by EM, and the gate threshold at the point
// where the weighted component densities are equal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "dlglc/matrix.hpp"

namespace dlglc {

inline constexpr double kSigmaFloor = 1e-3;

inline double gaussian_pdf(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_pdf: sigma must be > 0");
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

inline double gaussian_log_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

// Two weighted components over the log-loss domain; mean1 <= mean2, so
// component 1 models the reliable (low-loss) population.
struct GmmParams {
  double weight1 = 0.5, weight2 = 0.5;
  double mean1 = 0.0, mean2 = 0.0;
  double sigma1 = 1.0, sigma2 = 1.0;

  double component1(double x) const { return weight1 * gaussian_pdf(x, mean1, sigma1); }
  double component2(double x) const { return weight2 * gaussian_pdf(x, mean2, sigma2); }
  double mixture(double x) const { return component1(x) + component2(x); }

  // Posterior responsibility of component 1 at x, computed in log space.
  double responsibility1(double x) const {
    const double a1 = std::log(weight1) + gaussian_log_pdf(x, mean1, sigma1);
    const double a2 = std::log(weight2) + gaussian_log_pdf(x, mean2, sigma2);
    return 1.0 / (1.0 + std::exp(a2 - a1));
  }
};

struct GmmFit {
  GmmParams params;
  std::vector<double> log_likelihood;  // one entry per EM iteration
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

// numpy-style linear-interpolated percentile, q in [0,1], sorted input
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

// Standard EM for a 2-component 1-D GMM. Deterministic: means initialize at
// the 25th/75th percentiles, sigmas at the sample std, weights at 1/2.
inline GmmFit fit_gmm2(std::span<const double> values, std::size_t max_iters = 200,
                       double tol = 1e-8) {
  const std::size_t n = values.size();
  if (n < 10) throw std::runtime_error("fit_gmm2: insufficient loss history");
  check_finite(values, "fit_gmm2");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back())
    throw std::runtime_error("fit_gmm2: degenerate loss distribution");

  double mean = 0.0;
  for (double x : values) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : values) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  const double std0 = std::max(std::sqrt(var), kSigmaFloor);

  GmmParams p;
  p.mean1 = detail::percentile_sorted(sorted, 0.25);
  p.mean2 = detail::percentile_sorted(sorted, 0.75);
  if (p.mean1 == p.mean2) {
    p.mean1 = sorted.front();
    p.mean2 = sorted.back();
  }
  p.sigma1 = p.sigma2 = std0;
  p.weight1 = p.weight2 = 0.5;

  GmmFit fit;
  std::vector<double> r1(n);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // E step, log-space for underflow safety; also accumulates the
    // observed-data log-likelihood.
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a1 = std::log(p.weight1) + gaussian_log_pdf(values[i], p.mean1, p.sigma1);
      const double a2 = std::log(p.weight2) + gaussian_log_pdf(values[i], p.mean2, p.sigma2);
      const double mx = std::max(a1, a2);
      const double lse = mx + std::log(std::exp(a1 - mx) + std::exp(a2 - mx));
      r1[i] = std::exp(a1 - lse);
      ll += lse;
    }
    if (!fit.log_likelihood.empty() && ll < prev_ll - 1e-10)
      throw std::logic_error("fit_gmm2: EM log-likelihood decreased");
    fit.log_likelihood.push_back(ll);
    ++fit.iterations;
    if (std::abs(ll - prev_ll) < tol) {
      fit.converged = true;
      break;
    }
    prev_ll = ll;

    // M step: weighted moments, sigma floored
    double n1 = 0.0, s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      n1 += r1[i];
      s1 += r1[i] * values[i];
      s2 += (1.0 - r1[i]) * values[i];
    }
    const double n2 = static_cast<double>(n) - n1;
    const double eps = 1e-10;
    p.mean1 = s1 / std::max(n1, eps);
    p.mean2 = s2 / std::max(n2, eps);
    double v1 = 0.0, v2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v1 += r1[i] * (values[i] - p.mean1) * (values[i] - p.mean1);
      v2 += (1.0 - r1[i]) * (values[i] - p.mean2) * (values[i] - p.mean2);
    }
    p.sigma1 = std::max(std::sqrt(v1 / std::max(n1, eps)), kSigmaFloor);
    p.sigma2 = std::max(std::sqrt(v2 / std::max(n2, eps)), kSigmaFloor);
    p.weight1 = std::clamp(n1 / static_cast<double>(n), 1e-9, 1.0 - 1e-9);
    p.weight2 = 1.0 - p.weight1;
  }

  if (p.mean1 > p.mean2) {
    std::swap(p.mean1, p.mean2);
    std::swap(p.sigma1, p.sigma2);
    std::swap(p.weight1, p.weight2);
  }
  fit.params = p;
  return fit;
}

struct ThresholdResult {
  double tau_log = 0.0;
  bool fallback = false;
};

// Solves weight1*N(x; mean1, sigma1) = weight2*N(x; mean2, sigma2). Taking
// logs gives a quadratic in x (linear when the sigmas agree). Among real
// roots inside [mean1, mean2] the one with posterior closest to 1/2 wins,
// ties broken toward the interval midpoint; with no in-interval root the
// midpoint is returned with the fallback flag set.
inline ThresholdResult solve_threshold(const GmmParams& p) {
  const double mid = 0.5 * (p.mean1 + p.mean2);
  const double a = 0.5 / (p.sigma2 * p.sigma2) - 0.5 / (p.sigma1 * p.sigma1);
  const double b = p.mean1 / (p.sigma1 * p.sigma1) - p.mean2 / (p.sigma2 * p.sigma2);
  const double c = 0.5 * p.mean2 * p.mean2 / (p.sigma2 * p.sigma2) -
                   0.5 * p.mean1 * p.mean1 / (p.sigma1 * p.sigma1) -
                   std::log((p.weight2 * p.sigma1) / (p.weight1 * p.sigma2));

  std::vector<double> roots;
  if (a == 0.0) {
    if (b != 0.0) roots.push_back(-c / b);
  } else {
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      // numerically stable quadratic roots
      const double sq = std::sqrt(disc);
      const double q = -0.5 * (b + (b >= 0.0 ? sq : -sq));
      roots.push_back(q / a);
      if (q != 0.0) roots.push_back(c / q);
    }
  }

  std::vector<double> inside;
  for (double r : roots)
    if (r >= p.mean1 && r <= p.mean2) inside.push_back(r);
  std::sort(inside.begin(), inside.end());
  inside.erase(std::unique(inside.begin(), inside.end()), inside.end());

  if (inside.empty()) return {mid, true};
  if (inside.size() == 1) return {inside[0], false};
  double best = inside[0];
  double best_key = std::abs(p.responsibility1(best) - 0.5);
  for (std::size_t i = 1; i < inside.size(); ++i) {
    const double key = std::abs(p.responsibility1(inside[i]) - 0.5);
    if (key < best_key - 1e-12 ||
        (std::abs(key - best_key) <= 1e-12 &&
         std::abs(inside[i] - mid) < std::abs(best - mid))) {
      best = inside[i];
      best_key = key;
    }
  }
  return {best, false};
}

// One loss per seen utterance per epoch; ordered map keeps exports and
// GMM input order deterministic.
struct LossLedger {
  std::size_t epoch = 0;
  std::map<std::uint64_t, double> entries;

  void record(std::uint64_t utterance_id, double loss) {
    if (!std::isfinite(loss)) throw std::invalid_argument("LossLedger: non-finite loss");
    entries[utterance_id] = std::max(loss, 1e-15);  // keep log() well-defined
  }

  std::vector<double> log_losses() const {
    std::vector<double> out;
    out.reserve(entries.size());
    for (const auto& [id, loss] : entries) out.push_back(std::log(loss));
    return out;
  }
};

struct GateState {
  double tau = 0.0;      // raw-loss domain
  double tau_log = 0.0;  // log-loss domain
  GmmParams gmm;
  std::size_t epoch = 0;
  bool fallback = false;
};

// Log-transform the epoch's recorded losses, fit the GMM, solve for tau.
inline GateState refresh_gate(const LossLedger& ledger) {
  const auto logs = ledger.log_losses();
  const auto fit = fit_gmm2(logs);
  const auto thr = solve_threshold(fit.params);
  GateState gate;
  gate.tau_log = thr.tau_log;
  gate.tau = std::exp(thr.tau_log);
  gate.gmm = fit.params;
  gate.epoch = ledger.epoch;
  gate.fallback = thr.fallback;
  return gate;
}

struct Histogram {
  std::vector<double> edges;   // bins+1 edges, uniform width
  std::vector<std::size_t> counts;
};

inline Histogram make_histogram(std::span<const double> values, std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("make_histogram: bins must be >= 1");
  if (values.empty()) throw std::invalid_argument("make_histogram: empty input");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) hi = lo + 1.0;
  Histogram h;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i)
    h.edges[i] = lo + width * static_cast<double>(i);
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto idx = static_cast<std::size_t>((v - lo) / width);
    if (idx >= bins) idx = bins - 1;
    ++h.counts[idx];
  }
  return h;
}

}  // namespace dlglc
