#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "dlglc/numerics.hpp"
#include "dlglc/rng.hpp"

using namespace dlglc;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ProbDistribution random_distribution(Rng& rng, std::size_t k) {
  std::vector<double> v(k);
  double sum = 0.0;
  for (auto& x : v) {
    x = rng.next_double_open();
    sum += x;
  }
  for (auto& x : v) x /= sum;
  return ProbDistribution(std::move(v));
}

}  // namespace

TEST_CASE("softmax handles symmetric and identical logits", "[numerics]") {
  const auto p = softmax_with_temperature(std::vector<double>{0.0, 0.0}, 1.0);
  CHECK_THAT(p[0], WithinAbs(0.5, 1e-15));
  CHECK_THAT(p[1], WithinAbs(0.5, 1e-15));

  for (double t : {0.04, 0.5, 1.0, 7.0}) {
    const auto q = softmax_with_temperature(std::vector<double>{2.3, 2.3, 2.3}, t);
    for (std::size_t i = 0; i < 3; ++i) CHECK_THAT(q[i], WithinAbs(1.0 / 3.0, 1e-15));
  }
}

TEST_CASE("softmax at low temperature matches the high-precision reference", "[numerics]") {
  // reference evaluated at 50-digit precision
  const auto p = softmax_with_temperature(std::vector<double>{1.0, 2.0, 0.5}, 0.1);
  CHECK_THAT(p[0], WithinRel(4.5397854815755714797e-5, 1e-13));
  CHECK_THAT(p[1], WithinRel(0.99995429625684462355, 1e-13));
  CHECK_THAT(p[2], WithinRel(3.0588833962073893928e-7, 1e-13));
}

TEST_CASE("softmax rejects bad input", "[numerics]") {
  const std::vector<double> logits{1.0, 2.0};
  CHECK_THROWS_AS(softmax_with_temperature(logits, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softmax_with_temperature(logits, -1.0), std::invalid_argument);
  const std::vector<double> with_nan{1.0, std::nan("")};
  CHECK_THROWS_AS(softmax_with_temperature(with_nan, 1.0), std::invalid_argument);
  const std::vector<double> with_inf{1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(softmax_with_temperature(with_inf, 1.0), std::invalid_argument);
}

TEST_CASE("softmax output is a distribution and shift-invariant", "[numerics]") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.next_below(8);
    std::vector<double> logits(k);
    for (auto& x : logits) x = 40.0 * (rng.next_double() - 0.5);
    const double t = 0.03 + rng.next_double();
    const auto p = softmax_with_temperature(logits, t);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += p[i];
    REQUIRE_THAT(sum, WithinAbs(1.0, 1e-9));

    const double c = 100.0 * (rng.next_double() - 0.5);
    auto shifted = logits;
    for (auto& x : shifted) x += c;
    const auto q = softmax_with_temperature(shifted, t);
    for (std::size_t i = 0; i < k; ++i) REQUIRE_THAT(q[i], WithinAbs(p[i], 1e-9));
  }
}

TEST_CASE("lower temperature never reduces the winning probability", "[numerics]") {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> logits(5);
    for (auto& x : logits) x = 4.0 * (rng.next_double() - 0.5);
    double prev = 0.0;
    for (double t : {2.0, 1.0, 0.5, 0.2, 0.1, 0.04}) {
      const double mx = softmax_with_temperature(logits, t).max_prob();
      REQUIRE(mx >= prev - 1e-12);
      prev = mx;
    }
  }
}

TEST_CASE("cross-entropy matches hand values", "[numerics]") {
  ProbDistribution onehot(std::vector<double>{0.0, 1.0, 0.0});
  CHECK_THAT(cross_entropy(onehot, onehot), WithinAbs(0.0, 1e-12));

  const std::size_t k = 7;
  ProbDistribution uniform(std::vector<double>(k, 1.0 / k));
  CHECK_THAT(cross_entropy(uniform, uniform), WithinRel(std::log(double(k)), 1e-12));

  ProbDistribution target(std::vector<double>{0.7, 0.3});
  ProbDistribution pred(std::vector<double>{0.6, 0.4});
  // -(0.7 ln 0.6 + 0.3 ln 0.4), evaluated at 50-digit precision
  CHECK_THAT(cross_entropy(target, pred), WithinRel(0.6324651561984399978, 1e-14));

  ProbDistribution shorter(std::vector<double>{1.0});
  CHECK_THROWS_AS(cross_entropy(target, shorter), std::invalid_argument);
}

TEST_CASE("cross-entropy obeys the Gibbs inequality", "[numerics]") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.next_below(9);
    const auto p = random_distribution(rng, k);
    const auto q = random_distribution(rng, k);
    REQUIRE(cross_entropy(p, p) <= cross_entropy(p, q) + 1e-12);
  }
}

TEST_CASE("cosine similarity basics", "[numerics]") {
  const std::vector<double> a{0.3, -1.2, 4.0};
  CHECK_THAT(cosine_similarity(a, a), WithinAbs(1.0, 1e-12));

  const std::vector<double> x{1.0, 0.0}, y{0.0, -2.0};
  CHECK_THAT(cosine_similarity(x, y), WithinAbs(0.0, 1e-15));

  const std::vector<double> u{1.0, 2.0}, v{3.0, -1.0};
  CHECK_THAT(cosine_similarity(u, v), WithinRel(0.14142135623730950488, 1e-14));

  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(cosine_similarity(zero, u), std::invalid_argument);
  CHECK_THROWS_AS(cosine_similarity(u, zero), std::invalid_argument);
}

TEST_CASE("clamped cross-entropy softmax gradient matches finite differences", "[numerics]") {
  Rng rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 3 + rng.next_below(5);
    std::vector<double> logits(k);
    for (auto& x : logits) x = 6.0 * (rng.next_double() - 0.5);
    const auto target = random_distribution(rng, k);
    const double temp = 0.05 + rng.next_double();

    auto f = [&] {
      return cross_entropy(target, softmax_with_temperature(logits, temp));
    };
    const auto pred = softmax_with_temperature(logits, temp);
    const auto analytic = ce_softmax_backward(target, pred, temp, 1.0);

    std::vector<double> fd(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double saved = logits[i];
      const double h = 1e-6;
      logits[i] = saved + h;
      const double up = f();
      logits[i] = saved - h;
      const double down = f();
      logits[i] = saved;
      fd[i] = (up - down) / (2.0 * h);
    }
    for (std::size_t i = 0; i < k; ++i) REQUIRE_THAT(analytic[i], WithinAbs(fd[i], 1e-5));
  }
}
