#include <catch2/catch_amalgamated.hpp>

#include "dlglc/mlp.hpp"
#include "oracles.hpp"

using namespace dlglc;
using Catch::Matchers::WithinAbs;

TEST_CASE("single linear layer forward is W x + b", "[mlp]") {
  Mlp mlp;
  Layer layer;
  layer.w = Matrix(2, 3);
  layer.w.data = {1.0, 2.0, 3.0, -1.0, 0.5, 0.0};
  layer.b = {0.1, -0.2};
  mlp.layers.push_back(layer);

  const std::vector<double> x{1.0, -1.0, 2.0};
  const auto y = mlp_forward(mlp, x);
  REQUIRE(y.size() == 2);
  CHECK_THAT(y[0], WithinAbs(1.0 - 2.0 + 6.0 + 0.1, 1e-14));
  CHECK_THAT(y[1], WithinAbs(-1.0 - 0.5 + 0.0 - 0.2, 1e-14));
}

TEST_CASE("two-layer net applies tanh between layers", "[mlp]") {
  Rng rng(1);
  auto mlp = Mlp::init({2, 3, 2}, rng);
  const std::vector<double> x{0.3, -0.7};
  auto h = matvec(mlp.layers[0].w, x);
  for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::tanh(h[j] + mlp.layers[0].b[j]);
  auto expect = matvec(mlp.layers[1].w, h);
  for (std::size_t j = 0; j < expect.size(); ++j) expect[j] += mlp.layers[1].b[j];
  const auto got = mlp_forward(mlp, x);
  for (std::size_t j = 0; j < expect.size(); ++j) CHECK_THAT(got[j], WithinAbs(expect[j], 1e-14));
}

TEST_CASE("backprop matches finite differences on parameters and inputs", "[mlp]") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto mlp = Mlp::init({5, 7, 6, 4}, rng);
    std::vector<double> x(5), target(4);
    for (auto& v : x) v = rng.next_gaussian();
    for (auto& v : target) v = rng.next_gaussian();

    auto loss = [&] {
      const auto out = mlp_forward(mlp, x);
      double acc = 0.0;
      for (std::size_t j = 0; j < out.size(); ++j)
        acc += 0.5 * (out[j] - target[j]) * (out[j] - target[j]);
      return acc;
    };

    MlpCache cache;
    const auto out = mlp_forward(mlp, x, &cache);
    std::vector<double> d_out(out.size());
    for (std::size_t j = 0; j < out.size(); ++j) d_out[j] = out[j] - target[j];
    Mlp grad = Mlp::zeros_like(mlp);
    const auto d_x = mlp_backward(mlp, cache, d_out, grad);

    auto params = oracle::collect_params(mlp);
    const auto fd = oracle::fd_gradient(loss, params);
    auto analytic_params = oracle::collect_params(grad);
    std::vector<double> analytic(analytic_params.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = *analytic_params[i];
    REQUIRE(oracle::gradient_rel_error(analytic, fd) < 1e-6);

    std::vector<double*> x_ptrs;
    for (auto& v : x) x_ptrs.push_back(&v);
    const auto fd_x = oracle::fd_gradient(loss, x_ptrs);
    REQUIRE(oracle::gradient_rel_error(d_x, fd_x) < 1e-6);
  }
}

TEST_CASE("gradient accumulation adds across calls", "[mlp]") {
  Rng rng(3);
  auto mlp = Mlp::init({3, 4, 2}, rng);
  std::vector<double> x1{0.1, -0.4, 0.7}, x2{1.0, 0.2, -0.6};
  const std::vector<double> d_out{1.0, -1.0};

  MlpCache c1, c2;
  mlp_forward(mlp, x1, &c1);
  mlp_forward(mlp, x2, &c2);

  Mlp both = Mlp::zeros_like(mlp);
  mlp_backward(mlp, c1, d_out, both);
  mlp_backward(mlp, c2, d_out, both);

  Mlp first = Mlp::zeros_like(mlp);
  mlp_backward(mlp, c1, d_out, first);
  Mlp second = Mlp::zeros_like(mlp);
  mlp_backward(mlp, c2, d_out, second);
  mlp_axpy(first, 1.0, second);

  auto a = oracle::collect_params(both);
  auto b = oracle::collect_params(first);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE_THAT(*a[i], WithinAbs(*b[i], 1e-12));
}

TEST_CASE("shape bookkeeping", "[mlp]") {
  Rng rng(4);
  auto mlp = Mlp::init({3, 5, 2}, rng);
  CHECK(mlp.input_dim() == 3);
  CHECK(mlp.output_dim() == 2);
  CHECK(mlp.param_count() == 3 * 5 + 5 + 5 * 2 + 2);
  auto zeros = Mlp::zeros_like(mlp);
  CHECK(mlp.same_shape(zeros));
  auto other = Mlp::init({3, 4, 2}, rng);
  CHECK_FALSE(mlp.same_shape(other));
  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(mlp_forward(mlp, bad), std::invalid_argument);
}
