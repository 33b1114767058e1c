#pragma once

// Small dense MLP with tanh hidden layers and hand-derived gradients.
// Serves as both the encoder and the projection-head trunk.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "dlglc/matrix.hpp"
#include "dlglc/rng.hpp"

namespace dlglc {

struct Layer {
  Matrix w;                // out x in
  std::vector<double> b;   // out
};

// tanh after every layer except the last; the last layer is linear.
struct Mlp {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().w.cols; }
  std::size_t output_dim() const { return layers.back().w.rows; }

  // dims = {in, hidden..., out}; weights ~ N(0, 1/fan_in), biases zero.
  static Mlp init(const std::vector<std::size_t>& dims, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp::init: need >= 2 dims");
    Mlp mlp;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      Layer layer;
      const double scale = 1.0 / std::sqrt(static_cast<double>(dims[i]));
      layer.w = Matrix::gaussian(dims[i + 1], dims[i], rng, scale);
      layer.b.assign(dims[i + 1], 0.0);
      mlp.layers.push_back(std::move(layer));
    }
    return mlp;
  }

  static Mlp zeros_like(const Mlp& other) {
    Mlp mlp;
    for (const auto& l : other.layers) {
      Layer z;
      z.w = Matrix(l.w.rows, l.w.cols, 0.0);
      z.b.assign(l.b.size(), 0.0);
      mlp.layers.push_back(std::move(z));
    }
    return mlp;
  }

  bool same_shape(const Mlp& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].w.same_shape(o.layers[i].w)) return false;
      if (layers[i].b.size() != o.layers[i].b.size()) return false;
    }
    return true;
  }

  template <typename F>
  void visit_params(F&& f) {
    for (auto& l : layers) {
      for (auto& x : l.w.data) f(x);
      for (auto& x : l.b) f(x);
    }
  }

  template <typename F>
  void visit_params(F&& f) const {
    for (const auto& l : layers) {
      for (const auto& x : l.w.data) f(x);
      for (const auto& x : l.b) f(x);
    }
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    visit_params([&](double) { ++n; });
    return n;
  }
};

struct MlpCache {
  // post[0] is the input; post[i] is the activation leaving layer i-1.
  std::vector<std::vector<double>> post;
};

inline std::vector<double> mlp_forward(const Mlp& mlp, std::span<const double> input,
                                       MlpCache* cache = nullptr) {
  if (input.size() != mlp.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  std::vector<double> x(input.begin(), input.end());
  if (cache) {
    cache->post.clear();
    cache->post.push_back(x);
  }
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& layer = mlp.layers[i];
    auto y = matvec(layer.w, x);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += layer.b[j];
    if (i + 1 < mlp.layers.size()) {
      for (auto& v : y) v = std::tanh(v);
    }
    x = std::move(y);
    if (cache) cache->post.push_back(x);
  }
  return x;
}

// Accumulates parameter gradients into `grad` (same shapes as `mlp`) and
// returns dL/d(input). `d_output` is dL/d(mlp output).
inline std::vector<double> mlp_backward(const Mlp& mlp, const MlpCache& cache,
                                        std::span<const double> d_output, Mlp& grad) {
  if (!mlp.same_shape(grad))
    throw std::invalid_argument("mlp_backward: grad shape mismatch");
  std::vector<double> delta(d_output.begin(), d_output.end());
  for (std::size_t i = mlp.layers.size(); i-- > 0;) {
    const auto& layer = mlp.layers[i];
    auto& glayer = grad.layers[i];
    if (i + 1 < mlp.layers.size()) {
      // tanh'(z) = 1 - tanh(z)^2, using the cached post-activation
      const auto& post = cache.post[i + 1];
      for (std::size_t j = 0; j < delta.size(); ++j)
        delta[j] *= 1.0 - post[j] * post[j];
    }
    const auto& in = cache.post[i];
    add_outer(glayer.w, delta, in);
    for (std::size_t j = 0; j < delta.size(); ++j) glayer.b[j] += delta[j];
    if (i > 0) delta = matvec_transposed(layer.w, delta);
  }
  return delta;
}

// p += alpha * g, elementwise over all parameters.
inline void mlp_axpy(Mlp& params, double alpha, const Mlp& g) {
  if (!params.same_shape(g)) throw std::invalid_argument("mlp_axpy: shape mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& p = params.layers[i];
    const auto& q = g.layers[i];
    for (std::size_t j = 0; j < p.w.data.size(); ++j) p.w.data[j] += alpha * q.w.data[j];
    for (std::size_t j = 0; j < p.b.size(); ++j) p.b[j] += alpha * q.b[j];
  }
}

inline void mlp_scale(Mlp& g, double s) {
  g.visit_params([&](double& x) { x *= s; });
}

}  // namespace dlglc
