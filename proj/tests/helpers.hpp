#pragma once

#include <functional>

#include "unger/graph.hpp"

namespace unger::test {

// Central finite-difference check against the tape gradients. `build` must
// register every param through the graph it is given and return a scalar
// loss. Error is relative above |g| ~ 1e-3 and blends to absolute below.
template <class BuildFn>
double fd_max_err(std::vector<Param<double>*> params, BuildFn build, double eps = 1e-3) {
  for (auto* p : params) p->zero_grad();
  {
    Graph<double> g;
    auto loss = build(g);
    g.backward(loss);
  }
  std::vector<std::vector<double>> grads;
  for (auto* p : params) grads.push_back(p->grad.data);

  auto eval = [&]() {
    Graph<double> g;
    auto loss = build(g);
    return g.node(loss.i).val.data[0];
  };

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param<double>& p = *params[pi];
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      const double keep = p.value.data[i];
      p.value.data[i] = keep + eps;
      const double lp = eval();
      p.value.data[i] = keep - eps;
      const double lm = eval();
      p.value.data[i] = keep;
      const double fd = (lp - lm) / (2.0 * eps);
      const double an = grads[pi][i];
      const double err = std::abs(an - fd) / (1e-3 + std::max(std::abs(an), std::abs(fd)));
      worst = std::max(worst, err);
    }
    p.zero_grad();
  }
  return worst;
}

inline TensorT<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = TensorT<double>::zeros(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for kink-sensitive ops like relu.
inline TensorT<double> random_tensor_nonzero(Shape s, Rng& rng, double margin = 0.1) {
  auto t = TensorT<double>::zeros(std::move(s));
  for (auto& v : t.data) {
    double m = margin + rng.uniform() * 0.9;
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

inline Param<double> make_param(const std::string& name, TensorT<double> t) {
  return Param<double>(name, std::move(t));
}

}  // namespace unger::test
