#pragma once

#include "unger/graph.hpp"

namespace unger {

// y = x W^T + b. W stored as (out,in); x is (B,in) or (B,T,in).
template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b) {
  return add(matmul(x, w, false, true), b);
}

template <class Real>
Var<Real> linear_nobias(Var<Real> x, Var<Real> w) {
  return matmul(x, w, false, true);
}

// Layer norm over the last axis with learnable gain/shift; the std is floored
// so constant inputs stay well-defined.
template <class Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta,
                     double sigma_floor = 1e-5) {
  return layer_norm_fused(x, gamma, beta, sigma_floor);
}

// Same computation spelled out in primitive ops; kept as the reference the
// fused kernel is checked against.
template <class Real>
Var<Real> layer_norm_composite(Var<Real> x, Var<Real> gamma, Var<Real> beta,
                               double sigma_floor = 1e-5) {
  auto mu = mean_last(x);
  auto cent = sub(x, mu);
  auto var = mean_last(mul(cent, cent));
  auto sd = sqrt_floor(var, sigma_floor);
  auto norm = div(cent, sd);
  return add(mul(norm, gamma), beta);
}

// Scaled dot-product attention. q: (B,T,dh), k/v: (B,S,dh). mask, when
// non-null, is added to the raw scores ((T,S) or (B,T,S), 0 / -1e30 entries).
template <class Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, Var<Real>* mask, double scl) {
  auto scores = scale(matmul(q, k, false, true), scl);
  if (mask) scores = add(scores, *mask);
  return matmul(softmax_last(scores), v);
}

// Multi-head attention block: projections are (d,d), heads split the last axis.
template <class Real>
struct AttnWeights {
  Param<Real> wq, wk, wv, wo;
};

template <class Real>
Var<Real> multi_head_attention(Graph<Real>& g, Var<Real> x_q, Var<Real> x_kv,
                               AttnWeights<Real>& w, int n_heads, Var<Real>* mask,
                               bool frozen = false) {
  const int d = x_q.shape().back();
  detail::require(d % n_heads == 0, "attention: model width " + std::to_string(d) +
                                        " not divisible by " + std::to_string(n_heads) +
                                        " heads");
  const int dh = d / n_heads;
  auto q = matmul(x_q, g.param(w.wq, !frozen), false, true);
  auto k = matmul(x_kv, g.param(w.wk, !frozen), false, true);
  auto v = matmul(x_kv, g.param(w.wv, !frozen), false, true);
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var<Real>> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto qh = slice_last(q, h * dh, dh);
    auto kh = slice_last(k, h * dh, dh);
    auto vh = slice_last(v, h * dh, dh);
    heads.push_back(attention(qh, kh, vh, mask, scl));
  }
  auto ctx = concat_last(heads);
  return matmul(ctx, g.param(w.wo, !frozen), false, true);
}

// (T,T) additive causal mask: 0 on/below the diagonal, -1e30 above.
template <class Real>
TensorT<Real> causal_mask(int t) {
  TensorT<Real> m = TensorT<Real>::zeros({t, t});
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) m.at(i, j) = Real(-1e30);
  return m;
}

// (B,T,S) additive mask hiding padded key positions.
template <class Real>
TensorT<Real> key_padding_mask(const std::vector<std::vector<bool>>& valid, int t) {
  const int b = static_cast<int>(valid.size());
  const int s = static_cast<int>(valid[0].size());
  TensorT<Real> m = TensorT<Real>::zeros({b, t, s});
  for (int r = 0; r < b; ++r)
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < s; ++j)
        if (!valid[static_cast<size_t>(r)][static_cast<size_t>(j)])
          m.at(r, i, j) = Real(-1e30);
  return m;
}

}  // namespace unger
