#pragma once

// Dense row-major double matrix and the handful of kernels the trainers
// need. All arithmetic is double precision; loops are plain and ordered so
// results are bitwise reproducible.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlglc/rng.hpp"

namespace dlglc {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, data.size() == rows*cols

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  static Matrix gaussian(std::size_t r, std::size_t c, Rng& rng, double scale) {
    Matrix m(r, c);
    for (auto& x : m.data) x = scale * rng.next_gaussian();
    return m;
  }
};

inline void check_finite(std::span<const double> v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(what + ": non-finite value");
  }
}

inline void check_finite(const Matrix& m, const std::string& what) {
  if (m.data.size() != m.rows * m.cols)
    throw std::invalid_argument(what + ": matrix data size mismatch");
  check_finite(m.data, what);
}

// y = M x
inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols) throw std::invalid_argument("matvec: dimension mismatch");
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

// y = M^T x
inline std::vector<double> matvec_transposed(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.rows)
    throw std::invalid_argument("matvec_transposed: dimension mismatch");
  std::vector<double> y(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
  }
  return y;
}

// M += scale * a b^T
inline void add_outer(Matrix& m, std::span<const double> a, std::span<const double> b,
                      double scale = 1.0) {
  if (a.size() != m.rows || b.size() != m.cols)
    throw std::invalid_argument("add_outer: dimension mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = m.data.data() + r * m.cols;
    const double ar = scale * a[r];
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += ar * b[c];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void axpy(std::vector<double>& y, double alpha, std::span<const double> x) {
  if (y.size() != x.size()) throw std::invalid_argument("axpy: dimension mismatch");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline void scale_inplace(std::vector<double>& v, double s) {
  for (double& x : v) x *= s;
}

// v / ||v||; throws on (near-)zero norm.
inline std::vector<double> normalized(std::span<const double> v) {
  const double n = norm2(v);
  if (n < 1e-300) throw std::invalid_argument("normalized: zero-norm vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

}  // namespace dlglc
