#pragma once

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>

#include "unger/common.hpp"

namespace unger {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) fail("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// Dense row-major tensor, rank 1..3. Scalars use shape {1}.
template <class Real>
struct TensorT {
  Shape shape;
  std::vector<Real> data;

  TensorT() = default;
  TensorT(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      fail("tensor data length " + std::to_string(data.size()) +
           " does not match shape " + shape_str(shape));
  }

  static TensorT zeros(Shape s) {
    TensorT t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(shape_numel(t.shape)), Real(0));
    return t;
  }
  static TensorT full(Shape s, Real v) {
    TensorT t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(Real v) { return TensorT({1}, {v}); }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int last_dim() const { return shape.empty() ? 1 : shape.back(); }

  Real& at(int i) { return data[static_cast<size_t>(i)]; }
  Real at(int i) const { return data[static_cast<size_t>(i)]; }
  Real& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  Real at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }
  Real& at(int i, int j, int k) {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  Real at(int i, int j, int k) const {
    return data[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  bool all_finite() const {
    // x * 0 is NaN exactly for Inf/NaN inputs; the sum is NaN-sticky and the
    // loop vectorizes, unlike per-element isfinite.
    Real acc = Real(0);
    for (Real v : data) acc += v * Real(0);
    return acc == Real(0);
  }

  template <class Other>
  TensorT<Other> cast() const {
    TensorT<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

// Trainable parameter: value plus gradient accumulator. Gradients are added
// into `grad` by Graph::backward and cleared by the optimizer step.
template <class Real>
struct Param {
  std::string name;
  TensorT<Real> value;
  TensorT<Real> grad;
  bool grad_seen = false;

  Param() = default;
  Param(std::string n, TensorT<Real> v)
      : name(std::move(n)), value(std::move(v)), grad(TensorT<Real>::zeros(value.shape)) {}

  void zero_grad() {
    std::fill(grad.data.begin(), grad.data.end(), Real(0));
    grad_seen = false;
  }
};

namespace kern {

// c[M,N] = a[M,K] * bt[N,K]^T. Accumulation runs in double regardless of Real;
// `acc` adds into c instead of overwriting.
template <class Real>
void matmul_tn(const Real* a, const Real* bt, Real* c, int M, int N, int K, bool acc) {
  for (int i = 0; i < M; ++i) {
    const Real* ai = a + static_cast<size_t>(i) * K;
    Real* ci = c + static_cast<size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const Real* bj = bt + static_cast<size_t>(j) * K;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      int k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += static_cast<double>(ai[k]) * static_cast<double>(bj[k]);
        s1 += static_cast<double>(ai[k + 1]) * static_cast<double>(bj[k + 1]);
        s2 += static_cast<double>(ai[k + 2]) * static_cast<double>(bj[k + 2]);
        s3 += static_cast<double>(ai[k + 3]) * static_cast<double>(bj[k + 3]);
      }
      for (; k < K; ++k) s0 += static_cast<double>(ai[k]) * static_cast<double>(bj[k]);
      double s = (s0 + s1) + (s2 + s3);
      if (acc)
        ci[j] += static_cast<Real>(s);
      else
        ci[j] = static_cast<Real>(s);
    }
  }
}

template <class Real>
void transpose(const Real* src, Real* dst, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
}

}  // namespace kern

}  // namespace unger
