#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "smx/errors.hpp"

namespace smx {

// Dense row-major tensor of 64-bit reals. Values are immutable once an op
// has produced them; mutation is confined to construction, parameter
// updates and gradient accumulation buffers.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str());
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }

  static Tensor full(std::vector<std::size_t> s, double v) {
    std::size_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::initializer_list<double> v) {
    return Tensor({v.size()}, std::vector<double>(v));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // Rank-1 tensors are treated as a single row where a matrix is expected.
  std::size_t rows() const { return rank() <= 1 ? 1 : shape[0]; }
  std::size_t cols() const {
    if (rank() == 0) return 1;
    return rank() == 1 ? shape[0] : shape[rank() - 1];
  }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_matrix(const Tensor& t, const char* who) {
  if (t.rank() != 2)
    throw DimensionError(std::string(who) + ": expected a matrix, got " +
                         t.shape_str());
}

// ---------------------------------------------------------------------------
// Raw kernels. All accumulate into a preallocated destination so the tape can
// reuse them for both forward values and gradient accumulation.
// ---------------------------------------------------------------------------

// c[m,n] += a[m,k] * b[k,n]
inline void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = c.data.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    const double* arow = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] * b[n,k]^T   (rows of b are the right-hand vectors)
inline void matmul_nt_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = c.data.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* crow = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[m,n] += a[k,m]^T * b[k,n]
inline void matmul_tn_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = c.data.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = A + p * m;
    const double* brow = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline void axpy(Tensor& y, double alpha, const Tensor& x) {
  double* Y = y.data.data();
  const double* X = x.data.data();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) Y[i] += alpha * X[i];
}

inline double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

}  // namespace smx
