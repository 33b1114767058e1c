#pragma once

// Self-distillation trainer. A student and an EMA teacher share one
// architecture: MLP encoder -> projection head (trunk MLP, L2 bottleneck
// normalization, weight-normalized final layer). Short views feed the
// student, long views the teacher; the loss couples sharpened output
// distributions (cross-entropy) and encoder embeddings (cosine).

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlglc/datagen.hpp"
#include "dlglc/matrix.hpp"
#include "dlglc/mlp.hpp"
#include "dlglc/numerics.hpp"
#include "dlglc/rng.hpp"

namespace dlglc {

struct DinoConfig {
  double teacher_temp = 0.04;
  double student_temp = 0.1;
  double alpha = 0.001;  // weight of the cosine-consistency term
  double lambda_start = 0.996;
  double lambda_end = 1.0;
  double center_momentum = 0.9;
  double learning_rate = 0.1;
  std::size_t batch_size = 64;
  std::size_t epochs = 15;

  std::size_t n_outputs = 256;       // K, projection-head output dimension
  std::size_t emb_dim = 32;
  std::size_t enc_hidden = 64;
  std::size_t enc_hidden_layers = 2;
  std::size_t head_hidden = 64;
  std::size_t head_bottleneck = 16;

  double mask_fraction = 0.25;
  double short_noise_factor = 2.0;

  bool average_pairs = true;   // divide the 8-term cross-entropy sum by 8
  bool disable_ema = false;    // ablation: teacher becomes a copy of the student
  bool extract_with_teacher = true;

  void validate() const {
    if (!(teacher_temp > 0.0 && teacher_temp < student_temp))
      throw std::invalid_argument("DinoConfig: require 0 < teacher_temp < student_temp");
    if (!(lambda_start > 0.0 && lambda_start <= lambda_end && lambda_end <= 1.0))
      throw std::invalid_argument("DinoConfig: require 0 < lambda_start <= lambda_end <= 1");
    if (!(center_momentum >= 0.0 && center_momentum <= 1.0))
      throw std::invalid_argument("DinoConfig: center_momentum must be in [0,1]");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("DinoConfig: learning_rate must be > 0");
    if (batch_size < 1 || epochs < 1 || n_outputs < 2 || emb_dim < 1 ||
        enc_hidden < 1 || enc_hidden_layers < 1 || head_hidden < 1 || head_bottleneck < 1)
      throw std::invalid_argument("DinoConfig: invalid size parameter");
    if (mask_fraction < 0.0 || mask_fraction > 1.0)
      throw std::invalid_argument("DinoConfig: mask_fraction must be in [0,1]");
    if (short_noise_factor < 0.0)
      throw std::invalid_argument("DinoConfig: short_noise_factor must be >= 0");
  }
};

// Trunk MLP into a bottleneck, L2 normalization, then a weight-normalized
// linear layer: the rows used at forward time are final_v rows scaled to
// unit norm, so the effective weight rows stay unit-norm by construction.
struct ProjectionHead {
  Mlp trunk;
  Matrix final_v;  // K x bottleneck, raw parameters

  std::size_t output_dim() const { return final_v.rows; }

  static ProjectionHead init(std::size_t emb_dim, std::size_t hidden,
                             std::size_t bottleneck, std::size_t k, Rng& rng) {
    ProjectionHead head;
    head.trunk = Mlp::init({emb_dim, hidden, bottleneck}, rng);
    head.final_v =
        Matrix::gaussian(k, bottleneck, rng, 1.0 / std::sqrt(static_cast<double>(bottleneck)));
    return head;
  }

  static ProjectionHead zeros_like(const ProjectionHead& other) {
    ProjectionHead head;
    head.trunk = Mlp::zeros_like(other.trunk);
    head.final_v = Matrix(other.final_v.rows, other.final_v.cols, 0.0);
    return head;
  }

  // Effective (unit-norm) final-layer weight rows.
  Matrix effective_final_rows() const {
    Matrix w = final_v;
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double n = norm2(w.row(r));
      if (n < 1e-300) throw std::runtime_error("ProjectionHead: zero-norm weight row");
      for (auto& x : w.row(r)) x /= n;
    }
    return w;
  }

  template <typename F>
  void visit_params(F&& f) {
    trunk.visit_params(f);
    for (auto& x : final_v.data) f(x);
  }

  std::size_t param_count() const {
    std::size_t n = final_v.data.size();
    n += trunk.param_count();
    return n;
  }
};

struct HeadCache {
  MlpCache trunk;
  std::vector<double> h;       // bottleneck pre-normalization
  double h_norm = 0.0;
  std::vector<double> y;       // h / ||h||
  std::vector<double> logits;  // K
};

inline std::vector<double> head_forward(const ProjectionHead& head,
                                        std::span<const double> embedding,
                                        HeadCache* cache = nullptr) {
  HeadCache local;
  HeadCache& c = cache ? *cache : local;
  c.h = mlp_forward(head.trunk, embedding, &c.trunk);
  c.h_norm = norm2(c.h);
  if (c.h_norm < 1e-300) throw std::runtime_error("head_forward: zero-norm bottleneck");
  c.y = c.h;
  for (auto& x : c.y) x /= c.h_norm;
  const auto& v = head.final_v;
  c.logits.assign(v.rows, 0.0);
  for (std::size_t k = 0; k < v.rows; ++k) {
    const auto row = v.row(k);
    const double n = norm2(row);
    if (n < 1e-300) throw std::runtime_error("head_forward: zero-norm weight row");
    c.logits[k] = dot(row, c.y) / n;
  }
  return c.logits;
}

// Backward through the weight-normalized layer and the L2 bottleneck;
// accumulates into `grad`, returns dL/d(embedding).
inline std::vector<double> head_backward(const ProjectionHead& head, const HeadCache& c,
                                         std::span<const double> d_logits,
                                         ProjectionHead& grad) {
  const auto& v = head.final_v;
  if (d_logits.size() != v.rows)
    throw std::invalid_argument("head_backward: d_logits dimension mismatch");
  std::vector<double> d_y(v.cols, 0.0);
  for (std::size_t k = 0; k < v.rows; ++k) {
    const double g = d_logits[k];
    if (g == 0.0) continue;
    const auto row = v.row(k);
    const double n = norm2(row);
    const double w_dot_y = c.logits[k];  // normalized row . y
    auto grow = grad.final_v.row(k);
    for (std::size_t j = 0; j < v.cols; ++j) {
      const double w_hat = row[j] / n;
      grow[j] += g * (c.y[j] - w_dot_y * w_hat) / n;
      d_y[j] += g * w_hat;
    }
  }
  // through y = h/||h||: d_h = (d_y - (y.d_y) y) / ||h||
  const double y_dot = dot(c.y, d_y);
  std::vector<double> d_h(d_y.size());
  for (std::size_t j = 0; j < d_y.size(); ++j)
    d_h[j] = (d_y[j] - y_dot * c.y[j]) / c.h_norm;
  return mlp_backward(head.trunk, c.trunk, d_h, grad.trunk);
}

struct DinoNetwork {
  Mlp encoder;
  ProjectionHead head;

  static DinoNetwork init(std::size_t d_in, const DinoConfig& cfg, Rng& rng) {
    DinoNetwork net;
    std::vector<std::size_t> dims;
    dims.push_back(d_in);
    for (std::size_t i = 0; i < cfg.enc_hidden_layers; ++i) dims.push_back(cfg.enc_hidden);
    dims.push_back(cfg.emb_dim);
    net.encoder = Mlp::init(dims, rng);
    net.head = ProjectionHead::init(cfg.emb_dim, cfg.head_hidden, cfg.head_bottleneck,
                                    cfg.n_outputs, rng);
    return net;
  }

  static DinoNetwork zeros_like(const DinoNetwork& other) {
    DinoNetwork net;
    net.encoder = Mlp::zeros_like(other.encoder);
    net.head = ProjectionHead::zeros_like(other.head);
    return net;
  }

  template <typename F>
  void visit_params(F&& f) {
    encoder.visit_params(f);
    head.visit_params(f);
  }

  std::size_t param_count() const { return encoder.param_count() + head.param_count(); }
};

struct NetworkCache {
  MlpCache enc;
  std::vector<double> embedding;
  HeadCache head;
};

inline std::vector<double> network_forward(const DinoNetwork& net,
                                           std::span<const double> input,
                                           NetworkCache* cache = nullptr) {
  NetworkCache local;
  NetworkCache& c = cache ? *cache : local;
  c.embedding = mlp_forward(net.encoder, input, &c.enc);
  return head_forward(net.head, c.embedding, &c.head);
}

struct DinoState {
  DinoNetwork student;
  DinoNetwork teacher;
  std::vector<double> center;  // length K, subtracted from teacher logits
  std::uint64_t step = 0;
  std::uint64_t total_steps = 0;
};

// theta_t <- lambda * theta_t + (1 - lambda) * theta_s, elementwise.
inline void ema_update(DinoNetwork& teacher, const DinoNetwork& student, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("ema_update: lambda must be in [0,1]");
  if (!teacher.encoder.same_shape(student.encoder) ||
      !teacher.head.trunk.same_shape(student.head.trunk) ||
      !teacher.head.final_v.same_shape(student.head.final_v))
    throw std::invalid_argument("ema_update: shape mismatch");
  for (std::size_t i = 0; i < teacher.encoder.layers.size(); ++i) {
    auto& t = teacher.encoder.layers[i];
    const auto& s = student.encoder.layers[i];
    for (std::size_t j = 0; j < t.w.data.size(); ++j)
      t.w.data[j] = lambda * t.w.data[j] + (1.0 - lambda) * s.w.data[j];
    for (std::size_t j = 0; j < t.b.size(); ++j)
      t.b[j] = lambda * t.b[j] + (1.0 - lambda) * s.b[j];
  }
  for (std::size_t i = 0; i < teacher.head.trunk.layers.size(); ++i) {
    auto& t = teacher.head.trunk.layers[i];
    const auto& s = student.head.trunk.layers[i];
    for (std::size_t j = 0; j < t.w.data.size(); ++j)
      t.w.data[j] = lambda * t.w.data[j] + (1.0 - lambda) * s.w.data[j];
    for (std::size_t j = 0; j < t.b.size(); ++j)
      t.b[j] = lambda * t.b[j] + (1.0 - lambda) * s.b[j];
  }
  for (std::size_t j = 0; j < teacher.head.final_v.data.size(); ++j)
    teacher.head.final_v.data[j] = lambda * teacher.head.final_v.data[j] +
                                   (1.0 - lambda) * student.head.final_v.data[j];
}

// Cosine ramp of the EMA momentum. Endpoints are returned exactly; steps
// past total_steps clamp to the end value.
inline double lambda_schedule(std::uint64_t step, std::uint64_t total_steps,
                              double lambda_start, double lambda_end) {
  if (total_steps == 0 || step >= total_steps) return lambda_end;
  if (step == 0) return lambda_start;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  const double w = (std::cos(std::numbers::pi * frac) + 1.0) / 2.0;
  return lambda_end - (lambda_end - lambda_start) * w;
}

// center <- momentum * center + (1 - momentum) * mean(batch logits)
inline void center_update(std::vector<double>& center,
                          const std::vector<std::vector<double>>& batch_teacher_logits,
                          double momentum = 0.9) {
  if (batch_teacher_logits.empty())
    throw std::invalid_argument("center_update: empty batch");
  std::vector<double> mean(center.size(), 0.0);
  for (const auto& logits : batch_teacher_logits) {
    if (logits.size() != center.size())
      throw std::invalid_argument("center_update: dimension mismatch");
    for (std::size_t k = 0; k < logits.size(); ++k) mean[k] += logits[k];
  }
  const double inv = 1.0 / static_cast<double>(batch_teacher_logits.size());
  for (std::size_t k = 0; k < center.size(); ++k)
    center[k] = momentum * center[k] + (1.0 - momentum) * mean[k] * inv;
}

// Mean (or sum) of cross-entropy over the 2x4 (teacher long, student short)
// view pairs.
inline double dino_ce_loss(std::span<const ProbDistribution> teacher_long,
                           std::span<const ProbDistribution> student_short,
                           bool average_pairs = true) {
  if (teacher_long.size() != 2 || student_short.size() != 4)
    throw std::invalid_argument("dino_ce_loss: expected 2 long and 4 short views");
  double acc = 0.0;
  for (const auto& t : teacher_long)
    for (const auto& s : student_short) acc += cross_entropy(t, s);
  return average_pairs ? acc / 8.0 : acc;
}

// Sum over the 8 (long, short) pairs of (1 - cos(e, e')).
inline double cosine_consistency_loss(std::span<const std::vector<double>> long_embs,
                                      std::span<const std::vector<double>> short_embs) {
  if (long_embs.size() != 2 || short_embs.size() != 4)
    throw std::invalid_argument("cosine_consistency_loss: expected 2 long and 4 short views");
  double acc = 0.0;
  for (const auto& e : long_embs)
    for (const auto& e2 : short_embs) acc += 1.0 - cosine_similarity(e, e2);
  return acc;
}

struct DinoLoss {
  double ce = 0.0;
  double cos = 0.0;
  double total = 0.0;
  // Raw (uncentered) teacher logits of the two long views, for the center
  // update.
  std::array<std::vector<double>, 2> teacher_raw_logits;
};

// Joint loss for one crop set, with analytic gradients for all student
// parameters accumulated into `grad` scaled by grad_scale. The teacher and
// the center are constants.
inline DinoLoss dino_total_loss(const DinoState& state, const CropSet& crops,
                                const DinoConfig& cfg, DinoNetwork* grad = nullptr,
                                double grad_scale = 1.0) {
  DinoLoss out;

  // teacher on long views (constant targets)
  std::array<ProbDistribution, 2> teacher_probs;
  std::vector<std::vector<double>> teacher_embs(2);
  for (std::size_t v = 0; v < 2; ++v) {
    NetworkCache cache;
    auto raw = network_forward(state.teacher, crops.long_views[v], &cache);
    out.teacher_raw_logits[v] = raw;
    std::vector<double> centered(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) centered[k] = raw[k] - state.center[k];
    teacher_probs[v] = softmax_with_temperature(centered, cfg.teacher_temp);
    teacher_embs[v] = cache.embedding;
  }

  const double ce_weight = cfg.average_pairs ? 1.0 / 8.0 : 1.0;
  std::vector<ProbDistribution> student_probs(4);
  std::vector<std::vector<double>> student_embs(4);

  for (std::size_t u = 0; u < 4; ++u) {
    NetworkCache cache;
    auto logits = network_forward(state.student, crops.short_views[u], &cache);
    student_probs[u] = softmax_with_temperature(logits, cfg.student_temp);
    student_embs[u] = cache.embedding;

    for (std::size_t v = 0; v < 2; ++v)
      out.ce += ce_weight * cross_entropy(teacher_probs[v], student_probs[u]);

    const double e_norm = norm2(cache.embedding);
    if (e_norm < 1e-300) throw std::runtime_error("dino_total_loss: zero-norm embedding");
    std::array<double, 2> cos_uv{};
    for (std::size_t v = 0; v < 2; ++v) {
      cos_uv[v] = cosine_similarity(teacher_embs[v], cache.embedding);
      out.cos += 1.0 - cos_uv[v];
    }

    if (grad) {
      std::vector<double> d_logits(logits.size(), 0.0);
      for (std::size_t v = 0; v < 2; ++v) {
        auto d = ce_softmax_backward(teacher_probs[v], student_probs[u],
                                     cfg.student_temp, grad_scale * ce_weight);
        for (std::size_t k = 0; k < d.size(); ++k) d_logits[k] += d[k];
      }
      auto d_emb = head_backward(state.student.head, cache.head, d_logits, grad->head);
      // cosine term: d/de (1 - cos(t, e)) = -(t_hat - cos * e_hat) / ||e||
      for (std::size_t v = 0; v < 2; ++v) {
        const double t_norm = norm2(teacher_embs[v]);
        for (std::size_t j = 0; j < d_emb.size(); ++j) {
          const double t_hat = teacher_embs[v][j] / t_norm;
          const double e_hat = cache.embedding[j] / e_norm;
          d_emb[j] += grad_scale * cfg.alpha * (-(t_hat - cos_uv[v] * e_hat) / e_norm);
        }
      }
      mlp_backward(state.student.encoder, cache.enc, d_emb, grad->encoder);
    }
  }

  out.total = out.ce + cfg.alpha * out.cos;
  return out;
}

struct DinoLogRow {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double loss_ce = 0.0;
  double loss_cos = 0.0;
  double loss_total = 0.0;
  double lambda = 0.0;
};

struct DinoTrainResult {
  DinoState state;
  std::vector<DinoLogRow> log;
};

// SGD on the student, EMA (or copy, for the ablation) on the teacher,
// center update per batch. Deterministic in seed; batches are processed in
// ascending utterance order within each shuffled batch.
inline DinoTrainResult train_dino(const FeatureSet& data, const DinoConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = data.features.rows;
  if (n == 0) throw std::invalid_argument("train_dino: empty corpus");

  Rng rng(seed);
  DinoTrainResult result;
  DinoState& state = result.state;
  state.student = DinoNetwork::init(data.dim, cfg, rng);
  state.teacher = state.student;
  state.center.assign(cfg.n_outputs, 0.0);
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  state.total_steps = cfg.epochs * steps_per_epoch;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n);
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(batch.begin(), batch.end());

      DinoNetwork grad = DinoNetwork::zeros_like(state.student);
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      double ce = 0.0, cos = 0.0, total = 0.0;
      std::vector<std::vector<double>> batch_teacher_logits;
      batch_teacher_logits.reserve(2 * batch.size());
      for (const std::size_t idx : batch) {
        auto crops = multi_crop(data.features.row(idx), rng, data.augment_noise,
                                cfg.mask_fraction, cfg.short_noise_factor);
        auto loss = dino_total_loss(state, crops, cfg, &grad, inv_b);
        ce += loss.ce * inv_b;
        cos += loss.cos * inv_b;
        total += loss.total * inv_b;
        for (auto& raw : loss.teacher_raw_logits)
          batch_teacher_logits.push_back(std::move(raw));
      }
      if (!std::isfinite(total))
        throw std::runtime_error("train_dino: diverged (non-finite loss) at step " +
                                 std::to_string(state.step));

      // SGD step on the student
      auto step_fn = [lr = cfg.learning_rate](double& p, double g) { p -= lr * g; };
      {
        auto& s = state.student;
        for (std::size_t i = 0; i < s.encoder.layers.size(); ++i) {
          auto& l = s.encoder.layers[i];
          const auto& g = grad.encoder.layers[i];
          for (std::size_t j = 0; j < l.w.data.size(); ++j) step_fn(l.w.data[j], g.w.data[j]);
          for (std::size_t j = 0; j < l.b.size(); ++j) step_fn(l.b[j], g.b[j]);
        }
        for (std::size_t i = 0; i < s.head.trunk.layers.size(); ++i) {
          auto& l = s.head.trunk.layers[i];
          const auto& g = grad.head.trunk.layers[i];
          for (std::size_t j = 0; j < l.w.data.size(); ++j) step_fn(l.w.data[j], g.w.data[j]);
          for (std::size_t j = 0; j < l.b.size(); ++j) step_fn(l.b[j], g.b[j]);
        }
        for (std::size_t j = 0; j < s.head.final_v.data.size(); ++j)
          step_fn(s.head.final_v.data[j], grad.head.final_v.data[j]);
      }

      const double lambda =
          lambda_schedule(state.step, state.total_steps, cfg.lambda_start, cfg.lambda_end);
      if (cfg.disable_ema) {
        state.teacher = state.student;
      } else {
        ema_update(state.teacher, state.student, lambda);
      }
      center_update(state.center, batch_teacher_logits, cfg.center_momentum);

      result.log.push_back({epoch, state.step, ce, cos, total, lambda});
      ++state.step;
    }
  }
  return result;
}

// Embeddings of clean features under the chosen encoder (EMA teacher by
// default).
inline Matrix extract_embeddings(const Mlp& encoder, const Matrix& features) {
  Matrix out(features.rows, encoder.output_dim());
  for (std::size_t i = 0; i < features.rows; ++i) {
    auto e = mlp_forward(encoder, features.row(i));
    std::copy(e.begin(), e.end(), out.row(i).begin());
  }
  return out;
}

inline const Mlp& extraction_encoder(const DinoState& state, const DinoConfig& cfg) {
  return cfg.extract_with_teacher ? state.teacher.encoder : state.student.encoder;
}

}  // namespace dlglc
