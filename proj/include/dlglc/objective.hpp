#pragma once

// Stage-II objectives: angular-margin softmax classification over pseudo
// labels, the loss-gated classification term, and label correction against
// sharpened clean-view predictions. All gradients are hand-derived; gating
// indicators are constants of the optimization.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "dlglc/matrix.hpp"
#include "dlglc/numerics.hpp"
#include "dlglc/rng.hpp"

namespace dlglc {

struct ObjectiveConfig {
  double margin = 0.2;
  double scale = 32.0;
  double tau2 = 0.5;         // confidence floor on max(clean probs)
  double sharpen_eps = 0.1;  // temperature for sharpening the clean target
  bool sum_reduction = false;

  void validate() const {
    if (!(margin >= 0.0 && margin < std::numbers::pi / 2.0))
      throw std::invalid_argument("ObjectiveConfig: margin must be in [0, pi/2)");
    if (!(scale > 0.0)) throw std::invalid_argument("ObjectiveConfig: scale must be > 0");
    if (!(tau2 > 0.0 && tau2 < 1.0))
      throw std::invalid_argument("ObjectiveConfig: tau2 must be in (0,1)");
    if (!(sharpen_eps > 0.0))
      throw std::invalid_argument("ObjectiveConfig: sharpen_eps must be > 0");
  }
};

// One weight row per pseudo-class; rows are scaled to unit norm at use, so
// the cosine logits see exactly unit-norm class vectors.
struct ClassifierHead {
  Matrix v;  // c x d_emb, raw parameters

  std::size_t n_classes() const { return v.rows; }

  static ClassifierHead init(std::size_t n_classes, std::size_t emb_dim, Rng& rng) {
    ClassifierHead head;
    head.v = Matrix::gaussian(n_classes, emb_dim, rng,
                              1.0 / std::sqrt(static_cast<double>(emb_dim)));
    return head;
  }

  Matrix effective_rows() const {
    Matrix w = v;
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double n = norm2(w.row(r));
      if (n < 1e-300) throw std::runtime_error("ClassifierHead: zero-norm weight row");
      for (auto& x : w.row(r)) x /= n;
    }
    return w;
  }
};

struct CosineCache {
  std::vector<double> x_hat;
  double x_norm = 0.0;
  std::vector<double> cosines;  // one per class
};

inline void cosine_layer_forward(std::span<const double> x, const ClassifierHead& head,
                                 CosineCache& cache) {
  cache.x_norm = norm2(x);
  if (cache.x_norm < 1e-300)
    throw std::invalid_argument("cosine_layer_forward: zero-norm embedding");
  cache.x_hat.assign(x.begin(), x.end());
  for (auto& v : cache.x_hat) v /= cache.x_norm;
  cache.cosines.assign(head.v.rows, 0.0);
  for (std::size_t j = 0; j < head.v.rows; ++j) {
    const auto row = head.v.row(j);
    const double n = norm2(row);
    if (n < 1e-300) throw std::runtime_error("cosine_layer_forward: zero-norm weight row");
    cache.cosines[j] = dot(row, cache.x_hat) / n;
  }
}

// Chain d(cos_j) into the embedding and the raw weight rows.
inline void cosine_layer_backward(std::span<const double> x, const ClassifierHead& head,
                                  const CosineCache& cache, std::span<const double> d_cos,
                                  std::vector<double>& d_x, Matrix& d_v) {
  const std::size_t dim = x.size();
  if (d_x.size() != dim) d_x.assign(dim, 0.0);
  for (std::size_t j = 0; j < head.v.rows; ++j) {
    const double g = d_cos[j];
    if (g == 0.0) continue;
    const auto row = head.v.row(j);
    const double n = norm2(row);
    auto grow = d_v.row(j);
    const double c = cache.cosines[j];
    for (std::size_t d = 0; d < dim; ++d) {
      const double w_hat = row[d] / n;
      d_x[d] += g * (w_hat - c * cache.x_hat[d]) / cache.x_norm;
      grow[d] += g * (cache.x_hat[d] - c * w_hat) / n;
    }
  }
}

struct AamCache {
  CosineCache cos;
  std::vector<double> logits;        // margin-adjusted, scaled
  std::vector<double> probs;         // softmax over logits
  double sin_theta = 0.0;
  bool sin_floored = false;          // sqrt floor active at the target cosine
};

// Per-sample additive-angular-margin loss: the target logit is
// s*cos(theta_y + m), non-target logits are s*cos(theta_j); the loss is the
// negative log softmax probability of the target.
inline double aam_forward(std::span<const double> x, const ClassifierHead& head,
                          std::uint32_t label, double margin, double scale,
                          AamCache& cache) {
  if (label >= head.v.rows) throw std::invalid_argument("aam_forward: label out of range");
  cosine_layer_forward(x, head, cache.cos);
  const std::size_t c = head.v.rows;
  cache.logits.assign(c, 0.0);
  const double cos_y = cache.cos.cosines[label];
  const double sin_sq = 1.0 - cos_y * cos_y;
  constexpr double kSinSqFloor = 1e-24;
  cache.sin_floored = sin_sq < kSinSqFloor;
  cache.sin_theta = std::sqrt(std::max(sin_sq, kSinSqFloor));
  for (std::size_t j = 0; j < c; ++j) cache.logits[j] = scale * cache.cos.cosines[j];
  cache.logits[label] =
      scale * (cos_y * std::cos(margin) - cache.sin_theta * std::sin(margin));
  const double lse = log_sum_exp(cache.logits);
  cache.probs.resize(c);
  for (std::size_t j = 0; j < c; ++j) cache.probs[j] = std::exp(cache.logits[j] - lse);
  return lse - cache.logits[label];
}

// (loss, margin-adjusted logits)
inline std::pair<double, std::vector<double>> aam_per_sample_loss(
    std::span<const double> x, const ClassifierHead& head, std::uint32_t label,
    double margin, double scale) {
  AamCache cache;
  const double loss = aam_forward(x, head, label, margin, scale, cache);
  return {loss, cache.logits};
}

// Accumulates d(loss)/d(embedding) and d(loss)/d(raw weights), scaled by dl.
inline void aam_backward(std::span<const double> x, const ClassifierHead& head,
                         std::uint32_t label, double margin, double scale,
                         const AamCache& cache, double dl, std::vector<double>& d_x,
                         Matrix& d_v) {
  const std::size_t c = head.v.rows;
  std::vector<double> d_cos(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    const double d_logit = dl * (cache.probs[j] - (j == label ? 1.0 : 0.0));
    if (j == label) {
      const double cos_y = cache.cos.cosines[label];
      // d/dcos of (cos*cos m - sin(theta)*sin m); the sqrt floor freezes
      // sin(theta) when active
      double factor = std::cos(margin);
      if (!cache.sin_floored) factor += (cos_y / cache.sin_theta) * std::sin(margin);
      d_cos[j] += d_logit * scale * factor;
    } else {
      d_cos[j] += d_logit * scale;
    }
  }
  cosine_layer_backward(x, head, cache.cos, d_cos, d_x, d_v);
}

// Margin-free class posterior softmax(s * cos(theta)); the model's
// "prediction" for gating-free purposes (label correction).
inline ProbDistribution classifier_probs(std::span<const double> cosines, double scale) {
  std::vector<double> z(cosines.size());
  for (std::size_t j = 0; j < z.size(); ++j) z[j] = scale * cosines[j];
  return softmax_with_temperature(z, 1.0);
}

// Temperature re-normalization in probability space: softmax(log(p)/eps).
inline ProbDistribution sharpen(const ProbDistribution& p, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("sharpen: eps must be > 0");
  std::vector<double> logp(p.size());
  for (std::size_t k = 0; k < p.size(); ++k)
    logp[k] = std::log(std::max(p[k], kLogClampFloor));
  return softmax_with_temperature(logp, eps);
}

// One training sample as the Stage-II losses see it: the augmented-view
// embedding (gradients flow), its pseudo label, and the constant clean-view
// class posterior used as the correction target.
struct Stage2Item {
  std::vector<double> embedding;
  std::uint32_t label = 0;
  ProbDistribution clean_probs;  // may be empty when label correction is off
};

struct TermResult {
  double loss = 0.0;
  std::size_t count = 0;                         // samples contributing
  std::vector<double> per_sample_loss;           // ungated AAM losses (DLG only)
  std::vector<std::vector<double>> d_embedding;  // one per item, zero if inactive
  Matrix d_v;
};

// Mean (or sum) of per-sample AAM losses over samples with loss < tau.
// Gated-out samples contribute exactly zero gradient.
inline TermResult dlg_loss(const std::vector<Stage2Item>& items, const ClassifierHead& head,
                           double tau, const ObjectiveConfig& cfg) {
  cfg.validate();
  TermResult out;
  out.d_v = Matrix(head.v.rows, head.v.cols, 0.0);
  out.d_embedding.resize(items.size());
  out.per_sample_loss.resize(items.size());

  std::vector<AamCache> caches(items.size());
  std::vector<bool> retained(items.size(), false);
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.per_sample_loss[i] =
        aam_forward(items[i].embedding, head, items[i].label, cfg.margin, cfg.scale, caches[i]);
    retained[i] = out.per_sample_loss[i] < tau;
    if (retained[i]) ++out.count;
  }
  const double w = cfg.sum_reduction
                       ? 1.0
                       : (out.count > 0 ? 1.0 / static_cast<double>(out.count) : 0.0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.d_embedding[i].assign(items[i].embedding.size(), 0.0);
    if (!retained[i]) continue;
    out.loss += w * out.per_sample_loss[i];
    aam_backward(items[i].embedding, head, items[i].label, cfg.margin, cfg.scale,
                 caches[i], w, out.d_embedding[i], out.d_v);
  }
  return out;
}

// Label-correction term: samples with loss > tau whose clean-view posterior
// is confident (max prob > tau2, tested before sharpening) are trained
// toward the sharpened clean posterior. The target is a constant.
inline TermResult lc_loss(const std::vector<Stage2Item>& items,
                          std::span<const double> per_sample_loss,
                          const ClassifierHead& head, double tau,
                          const ObjectiveConfig& cfg) {
  cfg.validate();
  if (per_sample_loss.size() != items.size())
    throw std::invalid_argument("lc_loss: per-sample loss size mismatch");
  TermResult out;
  out.d_v = Matrix(head.v.rows, head.v.cols, 0.0);
  out.d_embedding.resize(items.size());

  std::vector<bool> qualifies(items.size(), false);
  for (std::size_t i = 0; i < items.size(); ++i) {
    qualifies[i] = per_sample_loss[i] > tau && items[i].clean_probs.size() == head.v.rows &&
                   items[i].clean_probs.max_prob() > cfg.tau2;
    if (qualifies[i]) ++out.count;
  }
  const double w = cfg.sum_reduction
                       ? 1.0
                       : (out.count > 0 ? 1.0 / static_cast<double>(out.count) : 0.0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.d_embedding[i].assign(items[i].embedding.size(), 0.0);
    if (!qualifies[i]) continue;
    CosineCache cos;
    cosine_layer_forward(items[i].embedding, head, cos);
    const auto pred = classifier_probs(cos.cosines, cfg.scale);
    const auto target = sharpen(items[i].clean_probs, cfg.sharpen_eps);
    out.loss += w * cross_entropy(target, pred);
    // d/d(logits) with the log clamp respected, then through z = s*cos
    auto d_z = ce_softmax_backward(target, pred, 1.0, w);
    std::vector<double> d_cos(d_z.size());
    for (std::size_t j = 0; j < d_z.size(); ++j) d_cos[j] = d_z[j] * cfg.scale;
    cosine_layer_backward(items[i].embedding, head, cos, d_cos, out.d_embedding[i], out.d_v);
  }
  return out;
}

struct Stage2Loss {
  double total = 0.0;
  double dlg = 0.0;
  double lc = 0.0;
  std::size_t retained = 0;
  std::size_t corrected = 0;
  std::vector<double> per_sample_loss;
  std::vector<std::vector<double>> d_embedding;
  Matrix d_v;
};

// L = L_DLG + L_LC. Every sample lands in exactly one bucket: loss < tau
// feeds the gated classification term, loss > tau with a confident clean
// prediction feeds label correction, anything else contributes nothing.
// tau = +infinity recovers the plain ungated mean AAM loss.
inline Stage2Loss total_stage2_loss(const std::vector<Stage2Item>& items,
                                    const ClassifierHead& head, double tau,
                                    bool label_correction, const ObjectiveConfig& cfg) {
  auto dlg = dlg_loss(items, head, tau, cfg);
  Stage2Loss out;
  out.dlg = dlg.loss;
  out.retained = dlg.count;
  out.per_sample_loss = std::move(dlg.per_sample_loss);
  out.d_embedding = std::move(dlg.d_embedding);
  out.d_v = std::move(dlg.d_v);
  if (label_correction) {
    auto lc = lc_loss(items, out.per_sample_loss, head, tau, cfg);
    out.lc = lc.loss;
    out.corrected = lc.count;
    for (std::size_t i = 0; i < items.size(); ++i)
      axpy(out.d_embedding[i], 1.0, lc.d_embedding[i]);
    for (std::size_t j = 0; j < out.d_v.data.size(); ++j)
      out.d_v.data[j] += lc.d_v.data[j];
  }
  out.total = out.dlg + out.lc;
  return out;
}

}  // namespace dlglc
