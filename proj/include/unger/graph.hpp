#pragma once

#include <functional>
#include <memory>
#include <unordered_map>

#include "unger/tensor.hpp"

namespace unger {

template <class Real>
class Graph;

namespace detail {

// Thread-local recycling pool for node buffers: graphs are rebuilt every
// step, and the zero-init + malloc churn of fresh vectors dominates small
// models otherwise. Buffers come back stale; only ops that overwrite every
// element may use pooled_uninit.
template <class Real>
struct BufferPool {
  std::unordered_map<size_t, std::vector<std::vector<Real>>> bins;
  size_t held_bytes = 0;
  static constexpr size_t kCapBytes = size_t(512) << 20;

  static BufferPool& instance() {
    thread_local BufferPool pool;
    return pool;
  }

  std::vector<Real> get(size_t n) {
    auto it = bins.find(n);
    if (it != bins.end() && !it->second.empty()) {
      std::vector<Real> v = std::move(it->second.back());
      it->second.pop_back();
      held_bytes -= n * sizeof(Real);
      return v;
    }
    return std::vector<Real>(n);
  }

  void put(std::vector<Real>&& v) {
    if (v.empty() || held_bytes > kCapBytes) return;
    held_bytes += v.size() * sizeof(Real);
    bins[v.size()].push_back(std::move(v));
  }
};

template <class Real>
TensorT<Real> pooled_uninit(Shape s) {
  TensorT<Real> t;
  const auto n = static_cast<size_t>(shape_numel(s));
  t.shape = std::move(s);
  t.data = BufferPool<Real>::instance().get(n);
  return t;
}

}  // namespace detail


// Lightweight handle to a node on the tape.
template <class Real>
struct Var {
  Graph<Real>* g = nullptr;
  int i = -1;

  const TensorT<Real>& value() const;
  const Shape& shape() const { return value().shape; }
};

// Tape-based reverse-mode graph. A fresh graph is built for every training
// step; backward() walks the tape once in reverse creation order.
template <class Real>
class Graph {
 public:
  struct Node {
    TensorT<Real> val;
    TensorT<Real> grad;  // allocated lazily during backward
    bool needs_grad = false;
    Param<Real>* sink = nullptr;
    std::function<void()> back;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  ~Graph() {
    auto& pool = detail::BufferPool<Real>::instance();
    for (auto& n : nodes_) {
      pool.put(std::move(n.val.data));
      pool.put(std::move(n.grad.data));
    }
  }

  bool finite_checks = true;

  Var<Real> input(TensorT<Real> t, const char* what = "input") {
    check_val(t, what);
    return wrap(push(std::move(t), false));
  }

  Var<Real> param(Param<Real>& p, bool requires_grad = true) {
    check_val(p.value, p.name.empty() ? "param" : p.name.c_str());
    int i = push(p.value, requires_grad);
    if (requires_grad) nodes_[static_cast<size_t>(i)].sink = &p;
    return wrap(i);
  }

  Node& node(int i) { return nodes_[static_cast<size_t>(i)]; }
  const Node& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  size_t size() const { return nodes_.size(); }

  void backward(Var<Real> loss) {
    if (nodes_.empty()) fail("backward on an empty tape");
    if (loss.g != this) fail("backward: loss belongs to a different graph");
    const Node& ln = node(loss.i);
    if (ln.val.numel() != 1)
      fail("backward requires a scalar loss, got shape " + shape_str(ln.val.shape));
    // Node grads are per-pass scratch; only Param::grad accumulates across calls.
    for (auto& n : nodes_)
      if (!n.grad.data.empty()) std::fill(n.grad.data.begin(), n.grad.data.end(), Real(0));
    ensure_grad(loss.i);
    node(loss.i).grad.data[0] = Real(1);
    for (int i = loss.i; i >= 0; --i) {
      Node& n = node(i);
      if (!n.needs_grad || n.grad.data.empty()) continue;
      if (n.back) n.back();
      if (n.sink) {
        Param<Real>& p = *n.sink;
        for (size_t k = 0; k < p.grad.data.size(); ++k) p.grad.data[k] += n.grad.data[k];
        p.grad_seen = true;
        if (finite_checks && !p.grad.all_finite())
          fail("non-finite gradient for parameter " + p.name);
      }
    }
  }

  // --- internals used by the op implementations ---

  int push(TensorT<Real> t, bool needs_grad) {
    nodes_.push_back(Node{});
    Node& n = nodes_.back();
    n.val = std::move(t);
    n.needs_grad = needs_grad;
    return static_cast<int>(nodes_.size()) - 1;
  }

  Var<Real> wrap(int i) { return Var<Real>{this, i}; }

  void ensure_grad(int i) {
    Node& n = node(i);
    if (n.grad.data.empty()) {
      n.grad = detail::pooled_uninit<Real>(n.val.shape);
      std::fill(n.grad.data.begin(), n.grad.data.end(), Real(0));
    }
  }

  // Returns the gradient buffer of node i, or nullptr when i does not need one.
  TensorT<Real>* grad_sink(int i) {
    Node& n = node(i);
    if (!n.needs_grad) return nullptr;
    ensure_grad(i);
    return &n.grad;
  }

  void check_val(const TensorT<Real>& t, const char* what) const {
    if (finite_checks && !t.all_finite())
      fail(std::string("non-finite values in ") + what);
  }

 private:
  std::vector<Node> nodes_;
};

template <class Real>
const TensorT<Real>& Var<Real>::value() const {
  return g->node(i).val;
}

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

template <class Real>
void same_graph(Var<Real> a, Var<Real> b, const char* op) {
  require(a.g != nullptr && a.g == b.g, std::string(op) + ": operands from different graphs");
}

enum class Bcast { kEq, kScalar, kLastOne, kSuffix };

inline Bcast bcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::kEq;
  if (shape_numel(b) == 1) return Bcast::kScalar;
  if (a.size() == b.size() && !a.empty() && b.back() == 1) {
    bool ok = true;
    for (size_t i = 0; i + 1 < a.size(); ++i) ok = ok && a[i] == b[i];
    if (ok) return Bcast::kLastOne;
  }
  if (b.size() < a.size()) {
    bool ok = true;
    for (size_t i = 0; i < b.size(); ++i) ok = ok && a[a.size() - b.size() + i] == b[i];
    if (ok) return Bcast::kSuffix;
  }
  fail(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
       " do not conform");
}

// Flat index into the broadcast operand for output position i.
struct BcastMap {
  Bcast mode;
  int64_t bn;   // numel of b
  int64_t row;  // last-dim extent of a (kLastOne)
  int64_t operator()(int64_t i) const {
    switch (mode) {
      case Bcast::kEq: return i;
      case Bcast::kScalar: return 0;
      case Bcast::kLastOne: return i / row;
      case Bcast::kSuffix: return i % bn;
    }
    return 0;
  }
};

// 2-D matmul slice: C = op(A) * op(B) with transpose flags, double accumulation.
// Transpose scratch is thread-local and reused across calls.
template <class Real>
void mm2(const Real* a, int ar, int ac, bool ta, const Real* b, int br, int bc, bool tb,
         Real* c, bool acc) {
  const int m = ta ? ac : ar;
  const int k = ta ? ar : ac;
  const int k2 = tb ? bc : br;
  const int n = tb ? br : bc;
  require(k == k2, "matmul: inner extents disagree");
  thread_local std::vector<Real> sa, sb;
  const Real* ap = a;
  if (ta) {
    if (sa.size() < static_cast<size_t>(m) * k) sa.resize(static_cast<size_t>(m) * k);
    kern::transpose(a, sa.data(), ar, ac);
    ap = sa.data();
  }
  const Real* btp = b;
  if (!tb) {
    if (sb.size() < static_cast<size_t>(n) * k) sb.resize(static_cast<size_t>(n) * k);
    kern::transpose(b, sb.data(), br, bc);
    btp = sb.data();
  }
  kern::matmul_tn(ap, btp, c, m, n, k, acc);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

template <class Real, class FwdF, class DaF, class DbF>
Var<Real> binary_op(const char* name, Var<Real> a, Var<Real> b, FwdF f, DaF dfa, DbF dfb) {
  detail::same_graph(a, b, name);
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  const TensorT<Real>& bv = g.node(b.i).val;
  detail::Bcast mode = detail::bcast_mode(av.shape, bv.shape, name);
  detail::BcastMap map{mode, bv.numel(), av.last_dim()};

  TensorT<Real> out = detail::pooled_uninit<Real>(av.shape);
  const int64_t n = av.numel();
  for (int64_t i = 0; i < n; ++i) out.data[i] = f(av.data[i], bv.data[map(i)]);
  bool ng = g.node(a.i).needs_grad || g.node(b.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, name);
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i, bi = b.i;
    g.node(oi).back = [gp, ai, bi, oi, map, dfa, dfb]() {
      const auto& go = gp->node(oi).grad;
      const auto& av2 = gp->node(ai).val;
      const auto& bv2 = gp->node(bi).val;
      if (auto* da = gp->grad_sink(ai)) {
        for (int64_t i = 0; i < av2.numel(); ++i)
          da->data[i] += dfa(av2.data[i], bv2.data[map(i)], go.data[i]);
      }
      if (auto* db = gp->grad_sink(bi)) {
        for (int64_t i = 0; i < av2.numel(); ++i)
          db->data[map(i)] += dfb(av2.data[i], bv2.data[map(i)], go.data[i]);
      }
    };
  }
  return g.wrap(oi);
}

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  return binary_op(
      "add", a, b, [](Real x, Real y) { return x + y; },
      [](Real, Real, Real go) { return go; }, [](Real, Real, Real go) { return go; });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  return binary_op(
      "sub", a, b, [](Real x, Real y) { return x - y; },
      [](Real, Real, Real go) { return go; },
      [](Real, Real, Real go) { return -go; });
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  return binary_op(
      "mul", a, b, [](Real x, Real y) { return x * y; },
      [](Real, Real y, Real go) { return go * y; },
      [](Real x, Real, Real go) { return go * x; });
}

template <class Real>
Var<Real> div(Var<Real> a, Var<Real> b) {
  return binary_op(
      "div", a, b, [](Real x, Real y) { return x / y; },
      [](Real, Real y, Real go) { return go / y; },
      [](Real x, Real y, Real go) { return -go * x / (y * y); });
}

template <class Real, class FwdF, class BackF>
Var<Real> unary_op(const char* name, Var<Real> a, FwdF f, BackF dfa) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  TensorT<Real> out = detail::pooled_uninit<Real>(av.shape);
  for (int64_t i = 0; i < av.numel(); ++i) out.data[i] = f(av.data[i]);
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, name);
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    g.node(oi).back = [gp, ai, oi, dfa]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        const auto& av2 = gp->node(ai).val;
        const auto& ov = gp->node(oi).val;
        for (int64_t i = 0; i < av2.numel(); ++i)
          da->data[i] += dfa(av2.data[i], ov.data[i], go.data[i]);
      }
    };
  }
  return g.wrap(oi);
}

template <class Real>
Var<Real> relu(Var<Real> a) {
  return unary_op(
      "relu", a, [](Real x) { return x > Real(0) ? x : Real(0); },
      [](Real x, Real, Real go) { return x > Real(0) ? go : Real(0); });
}

template <class Real>
Var<Real> scale(Var<Real> a, double s) {
  Real rs = static_cast<Real>(s);
  return unary_op(
      "scale", a, [rs](Real x) { return x * rs; },
      [rs](Real, Real, Real go) { return go * rs; });
}

template <class Real>
Var<Real> add_const(Var<Real> a, double c) {
  Real rc = static_cast<Real>(c);
  return unary_op(
      "add_const", a, [rc](Real x) { return x + rc; },
      [](Real, Real, Real go) { return go; });
}

// y = max(sqrt(max(x, 0)), floor). Gradient is zero on the floored branch.
template <class Real>
Var<Real> sqrt_floor(Var<Real> a, double floor_val) {
  Real f = static_cast<Real>(floor_val);
  return unary_op(
      "sqrt_floor", a,
      [f](Real x) {
        Real r = std::sqrt(std::max(x, Real(0)));
        return r > f ? r : f;
      },
      [f](Real x, Real y, Real go) {
        Real r = std::sqrt(std::max(x, Real(0)));
        return r > f ? go / (Real(2) * y) : Real(0);
      });
}

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b, bool ta = false, bool tb = false) {
  detail::same_graph(a, b, "matmul");
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  const TensorT<Real>& bv = g.node(b.i).val;
  detail::require(av.rank() >= 2 && av.rank() <= 3 && bv.rank() >= 2 && bv.rank() <= 3,
                  "matmul: ranks must be 2 or 3, got " + shape_str(av.shape) + " x " +
                      shape_str(bv.shape));
  const int abatch = av.rank() == 3 ? av.dim(0) : 0;
  const int bbatch = bv.rank() == 3 ? bv.dim(0) : 0;
  detail::require(abatch == 0 || bbatch == 0 || abatch == bbatch,
                  "matmul: batch extents disagree: " + shape_str(av.shape) + " vs " +
                      shape_str(bv.shape));
  const int batch = std::max(abatch, bbatch);
  const int ar = av.dim(av.rank() - 2), ac = av.dim(av.rank() - 1);
  const int br = bv.dim(bv.rank() - 2), bc = bv.dim(bv.rank() - 1);
  const int m = ta ? ac : ar, k = ta ? ar : ac;
  const int k2 = tb ? bc : br, n = tb ? br : bc;
  detail::require(k == k2, "matmul: inner extents disagree: " + shape_str(av.shape) +
                               (ta ? "^T" : "") + " x " + shape_str(bv.shape) +
                               (tb ? "^T" : ""));

  Shape os = batch ? Shape{batch, m, n} : Shape{m, n};
  TensorT<Real> out = detail::pooled_uninit<Real>(os);
  const int64_t astride = static_cast<int64_t>(ar) * ac;
  const int64_t bstride = static_cast<int64_t>(br) * bc;
  const int64_t ostride = static_cast<int64_t>(m) * n;
  const int nb = batch ? batch : 1;
  for (int s = 0; s < nb; ++s) {
    const Real* ap = av.data.data() + (abatch ? s * astride : 0);
    const Real* bp = bv.data.data() + (bbatch ? s * bstride : 0);
    detail::mm2(ap, ar, ac, ta, bp, br, bc, tb, out.data.data() + s * ostride, false);
  }
  bool ng = g.node(a.i).needs_grad || g.node(b.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, "matmul");
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i, bi = b.i;
    g.node(oi).back = [gp, ai, bi, oi, ta, tb, ar, ac, br, bc, m, n, abatch, bbatch, nb,
                       astride, bstride, ostride]() {
      const auto& go = gp->node(oi).grad;
      const auto& av2 = gp->node(ai).val;
      const auto& bv2 = gp->node(bi).val;
      TensorT<Real>* da = gp->grad_sink(ai);
      TensorT<Real>* db = gp->grad_sink(bi);
      for (int s = 0; s < nb; ++s) {
        const Real* gp_s = go.data.data() + s * ostride;
        const Real* ap = av2.data.data() + (abatch ? s * astride : 0);
        const Real* bp = bv2.data.data() + (bbatch ? s * bstride : 0);
        if (da) {
          Real* dap = da->data.data() + (abatch ? s * astride : 0);
          if (!ta)
            detail::mm2(gp_s, m, n, false, bp, br, bc, !tb, dap, true);
          else
            detail::mm2(bp, br, bc, tb, gp_s, m, n, true, dap, true);
        }
        if (db) {
          Real* dbp = db->data.data() + (bbatch ? s * bstride : 0);
          if (!tb)
            detail::mm2(ap, ar, ac, !ta, gp_s, m, n, false, dbp, true);
          else
            detail::mm2(gp_s, m, n, true, ap, ar, ac, ta, dbp, true);
        }
      }
    };
  }
  return g.wrap(oi);
}

template <class Real>
Var<Real> softmax_last(Var<Real> a) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  const int n = av.last_dim();
  detail::require(n >= 1, "softmax_last: empty last axis");
  const int64_t rows = av.numel() / n;
  TensorT<Real> out = detail::pooled_uninit<Real>(av.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const Real* x = av.data.data() + r * n;
    Real* y = out.data.data() + r * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(x[j]));
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(static_cast<double>(x[j]) - mx);
    for (int j = 0; j < n; ++j)
      y[j] = static_cast<Real>(std::exp(static_cast<double>(x[j]) - mx) / s);
  }
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, "softmax");
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    g.node(oi).back = [gp, ai, oi, n, rows]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        const auto& ov = gp->node(oi).val;
        for (int64_t r = 0; r < rows; ++r) {
          const Real* y = ov.data.data() + r * n;
          const Real* gy = go.data.data() + r * n;
          double dot = 0.0;
          for (int j = 0; j < n; ++j)
            dot += static_cast<double>(gy[j]) * static_cast<double>(y[j]);
          Real* dx = da->data.data() + r * n;
          for (int j = 0; j < n; ++j)
            dx[j] += static_cast<Real>(y[j] * (static_cast<double>(gy[j]) - dot));
        }
      }
    };
  }
  return g.wrap(oi);
}

// log-sum-exp over the last axis, keepdim.
template <class Real>
Var<Real> lse_last(Var<Real> a) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  const int n = av.last_dim();
  const int64_t rows = av.numel() / n;
  Shape os = av.shape;
  os.back() = 1;
  TensorT<Real> out = detail::pooled_uninit<Real>(os);
  for (int64_t r = 0; r < rows; ++r) {
    const Real* x = av.data.data() + r * n;
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(x[j]));
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(static_cast<double>(x[j]) - mx);
    out.data[r] = static_cast<Real>(mx + std::log(s));
  }
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, "lse_last");
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    g.node(oi).back = [gp, ai, oi, n, rows]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        const auto& ov = gp->node(oi).val;
        const auto& av2 = gp->node(ai).val;
        for (int64_t r = 0; r < rows; ++r) {
          const Real* x = av2.data.data() + r * n;
          Real* dx = da->data.data() + r * n;
          double lse = ov.data[r], gr = go.data[r];
          for (int j = 0; j < n; ++j)
            dx[j] += static_cast<Real>(gr * std::exp(static_cast<double>(x[j]) - lse));
        }
      }
    };
  }
  return g.wrap(oi);
}

// Mean negative log-likelihood of integer targets under softmax(logits).
// logits: (B,V) with targets.size() == B, or rank-1 (V) with one target.
template <class Real>
Var<Real> cross_entropy_mean(Var<Real> logits, const std::vector<int>& targets) {
  Graph<Real>& g = *logits.g;
  const TensorT<Real>& lv = g.node(logits.i).val;
  detail::require(lv.rank() == 1 || lv.rank() == 2,
                  "cross_entropy: logits rank must be 1 or 2, got " + shape_str(lv.shape));
  const int v = lv.last_dim();
  const int64_t b = lv.numel() / v;
  detail::require(static_cast<int64_t>(targets.size()) == b,
                  "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                      std::to_string(b) + " rows");
  for (int t : targets)
    detail::require(t >= 0 && t < v, "cross_entropy: target " + std::to_string(t) +
                                         " outside vocabulary of size " + std::to_string(v));
  auto lse = std::make_shared<std::vector<double>>(static_cast<size_t>(b));
  double total = 0.0;
  for (int64_t r = 0; r < b; ++r) {
    const Real* x = lv.data.data() + r * v;
    double mx = x[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(x[j]));
    double s = 0.0;
    for (int j = 0; j < v; ++j) s += std::exp(static_cast<double>(x[j]) - mx);
    double l = mx + std::log(s);
    (*lse)[static_cast<size_t>(r)] = l;
    total += l - static_cast<double>(x[targets[static_cast<size_t>(r)]]);
  }
  TensorT<Real> out = TensorT<Real>::scalar(static_cast<Real>(total / static_cast<double>(b)));
  bool ng = g.node(logits.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, "cross_entropy");
  if (ng) {
    Graph<Real>* gp = &g;
    int li = logits.i;
    auto tcopy = std::make_shared<std::vector<int>>(targets);
    g.node(oi).back = [gp, li, oi, v, b, lse, tcopy]() {
      if (auto* dl = gp->grad_sink(li)) {
        const double go = gp->node(oi).grad.data[0];
        const auto& lv2 = gp->node(li).val;
        const double inv_b = 1.0 / static_cast<double>(b);
        for (int64_t r = 0; r < b; ++r) {
          const Real* x = lv2.data.data() + r * v;
          Real* dx = dl->data.data() + r * v;
          const double l = (*lse)[static_cast<size_t>(r)];
          const int t = (*tcopy)[static_cast<size_t>(r)];
          for (int j = 0; j < v; ++j) {
            double p = std::exp(static_cast<double>(x[j]) - l);
            dx[j] += static_cast<Real>(go * inv_b * (p - (j == t ? 1.0 : 0.0)));
          }
        }
      }
    };
  }
  return g.wrap(oi);
}

// (B,V) -> (B): picks one element per row.
template <class Real>
Var<Real> take_per_row(Var<Real> a, const std::vector<int>& idx) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  detail::require(av.rank() == 2, "take_per_row: rank-2 input required");
  const int b = av.dim(0), v = av.dim(1);
  detail::require(static_cast<int>(idx.size()) == b, "take_per_row: index count mismatch");
  TensorT<Real> out = detail::pooled_uninit<Real>({b});
  for (int r = 0; r < b; ++r) {
    detail::require(idx[static_cast<size_t>(r)] >= 0 && idx[static_cast<size_t>(r)] < v,
                    "take_per_row: index out of range");
    out.data[static_cast<size_t>(r)] = av.at(r, idx[static_cast<size_t>(r)]);
  }
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    auto icopy = std::make_shared<std::vector<int>>(idx);
    g.node(oi).back = [gp, ai, oi, v, icopy]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        for (size_t r = 0; r < icopy->size(); ++r)
          da->data[r * static_cast<size_t>(v) + static_cast<size_t>((*icopy)[r])] +=
              go.data[r];
      }
    };
  }
  return g.wrap(oi);
}

// Row gather from a (N,d) table; output shape = idx_shape + [d].
template <class Real>
Var<Real> gather_rows(Var<Real> table, const std::vector<int>& idx, Shape idx_shape) {
  Graph<Real>& g = *table.g;
  const TensorT<Real>& tv = g.node(table.i).val;
  detail::require(tv.rank() == 2, "gather_rows: table must be rank 2, got " +
                                      shape_str(tv.shape));
  detail::require(shape_numel(idx_shape) == static_cast<int64_t>(idx.size()),
                  "gather_rows: index shape mismatch");
  const int n = tv.dim(0), d = tv.dim(1);
  Shape os = idx_shape;
  os.push_back(d);
  TensorT<Real> out = detail::pooled_uninit<Real>(os);
  for (size_t r = 0; r < idx.size(); ++r) {
    detail::require(idx[r] >= 0 && idx[r] < n,
                    "gather_rows: row " + std::to_string(idx[r]) + " outside table of " +
                        std::to_string(n) + " rows");
    std::memcpy(out.data.data() + r * static_cast<size_t>(d),
                tv.data.data() + static_cast<size_t>(idx[r]) * d,
                sizeof(Real) * static_cast<size_t>(d));
  }
  bool ng = g.node(table.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  if (ng) {
    Graph<Real>* gp = &g;
    int ti = table.i;
    auto icopy = std::make_shared<std::vector<int>>(idx);
    g.node(oi).back = [gp, ti, oi, d, icopy]() {
      if (auto* dt = gp->grad_sink(ti)) {
        const auto& go = gp->node(oi).grad;
        for (size_t r = 0; r < icopy->size(); ++r) {
          Real* dst = dt->data.data() + static_cast<size_t>((*icopy)[r]) * d;
          const Real* src = go.data.data() + r * static_cast<size_t>(d);
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
    };
  }
  return g.wrap(oi);
}

namespace detail {

template <class Real>
Var<Real> reduce_op(const char* name, Var<Real> a, bool mean, bool keep_last) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  const int n = keep_last ? av.last_dim() : static_cast<int>(av.numel());
  const int64_t rows = av.numel() / n;
  Shape os;
  if (keep_last) {
    os = av.shape;
    os.back() = 1;
  } else {
    os = {1};
  }
  const double w = mean ? 1.0 / static_cast<double>(n) : 1.0;
  TensorT<Real> out = detail::pooled_uninit<Real>(os);
  for (int64_t r = 0; r < rows; ++r) {
    const Real* x = av.data.data() + r * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += static_cast<double>(x[j]);
    out.data[r] = static_cast<Real>(s * w);
  }
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, name);
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    g.node(oi).back = [gp, ai, oi, n, rows, w]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        for (int64_t r = 0; r < rows; ++r) {
          Real gr = static_cast<Real>(static_cast<double>(go.data[r]) * w);
          Real* dx = da->data.data() + r * n;
          for (int j = 0; j < n; ++j) dx[j] += gr;
        }
      }
    };
  }
  return g.wrap(oi);
}

}  // namespace detail

template <class Real>
Var<Real> sum_last(Var<Real> a) {
  return detail::reduce_op("sum_last", a, false, true);
}
template <class Real>
Var<Real> mean_last(Var<Real> a) {
  return detail::reduce_op("mean_last", a, true, true);
}
template <class Real>
Var<Real> sum_all(Var<Real> a) {
  return detail::reduce_op("sum_all", a, false, false);
}
template <class Real>
Var<Real> mean_all(Var<Real> a) {
  return detail::reduce_op("mean_all", a, true, false);
}

template <class Real>
Var<Real> reshape(Var<Real> a, Shape s) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  detail::require(shape_numel(s) == av.numel(), "reshape: " + shape_str(av.shape) +
                                                    " cannot view as " + shape_str(s));
  TensorT<Real> out = detail::pooled_uninit<Real>(std::move(s));
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    g.node(oi).back = [gp, ai, oi]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        for (int64_t i = 0; i < go.numel(); ++i) da->data[i] += go.data[i];
      }
    };
  }
  return g.wrap(oi);
}

// Concatenate along the last axis; all parts agree on leading extents.
template <class Real>
Var<Real> concat_last(const std::vector<Var<Real>>& parts) {
  detail::require(!parts.empty(), "concat_last: no operands");
  Graph<Real>& g = *parts[0].g;
  Shape lead = g.node(parts[0].i).val.shape;
  lead.pop_back();
  int total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p, "concat_last");
    Shape s = g.node(p.i).val.shape;
    int last = s.back();
    s.pop_back();
    detail::require(s == lead, "concat_last: leading extents disagree");
    total += last;
    ng = ng || g.node(p.i).needs_grad;
  }
  const int64_t rows = shape_numel(lead);
  Shape os = lead;
  os.push_back(total);
  TensorT<Real> out = detail::pooled_uninit<Real>(os);
  int off = 0;
  std::vector<std::pair<int, int>> spans;  // node index, width
  for (const auto& p : parts) {
    const TensorT<Real>& pv = g.node(p.i).val;
    const int w = pv.last_dim();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data.data() + r * total + off, pv.data.data() + r * w,
                  sizeof(Real) * static_cast<size_t>(w));
    spans.emplace_back(p.i, w);
    off += w;
  }
  int oi = g.push(std::move(out), ng);
  if (ng) {
    Graph<Real>* gp = &g;
    auto sp = std::make_shared<std::vector<std::pair<int, int>>>(std::move(spans));
    g.node(oi).back = [gp, oi, rows, total, sp]() {
      const auto& go = gp->node(oi).grad;
      int off2 = 0;
      for (auto [pi, w] : *sp) {
        if (auto* dp = gp->grad_sink(pi)) {
          for (int64_t r = 0; r < rows; ++r) {
            const Real* src = go.data.data() + r * total + off2;
            Real* dst = dp->data.data() + r * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        off2 += w;
      }
    };
  }
  return g.wrap(oi);
}

template <class Real>
Var<Real> slice_last(Var<Real> a, int start, int len) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  const int n = av.last_dim();
  detail::require(start >= 0 && len >= 1 && start + len <= n,
                  "slice_last: range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") outside extent " + std::to_string(n));
  const int64_t rows = av.numel() / n;
  Shape os = av.shape;
  os.back() = len;
  TensorT<Real> out = detail::pooled_uninit<Real>(os);
  for (int64_t r = 0; r < rows; ++r)
    std::memcpy(out.data.data() + r * len, av.data.data() + r * n + start,
                sizeof(Real) * static_cast<size_t>(len));
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    g.node(oi).back = [gp, ai, oi, start, len, n, rows]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        for (int64_t r = 0; r < rows; ++r) {
          const Real* src = go.data.data() + r * len;
          Real* dst = da->data.data() + r * n + start;
          for (int j = 0; j < len; ++j) dst[j] += src[j];
        }
      }
    };
  }
  return g.wrap(oi);
}

// Concatenate rank-3 tensors (B,Ti,d) along the middle axis.
template <class Real>
Var<Real> concat_mid(const std::vector<Var<Real>>& parts) {
  detail::require(!parts.empty(), "concat_mid: no operands");
  Graph<Real>& g = *parts[0].g;
  const TensorT<Real>& first = g.node(parts[0].i).val;
  detail::require(first.rank() == 3, "concat_mid: rank-3 operands required");
  const int b = first.dim(0), d = first.dim(2);
  int total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    detail::same_graph(parts[0], p, "concat_mid");
    const TensorT<Real>& pv = g.node(p.i).val;
    detail::require(pv.rank() == 3 && pv.dim(0) == b && pv.dim(2) == d,
                    "concat_mid: shapes disagree: " + shape_str(first.shape) + " vs " +
                        shape_str(pv.shape));
    total += pv.dim(1);
    ng = ng || g.node(p.i).needs_grad;
  }
  TensorT<Real> out = detail::pooled_uninit<Real>({b, total, d});
  int off = 0;
  std::vector<std::pair<int, int>> spans;
  for (const auto& p : parts) {
    const TensorT<Real>& pv = g.node(p.i).val;
    const int t = pv.dim(1);
    for (int r = 0; r < b; ++r)
      std::memcpy(out.data.data() + (static_cast<size_t>(r) * total + off) * d,
                  pv.data.data() + static_cast<size_t>(r) * t * d,
                  sizeof(Real) * static_cast<size_t>(t) * d);
    spans.emplace_back(p.i, t);
    off += t;
  }
  int oi = g.push(std::move(out), ng);
  if (ng) {
    Graph<Real>* gp = &g;
    auto sp = std::make_shared<std::vector<std::pair<int, int>>>(std::move(spans));
    g.node(oi).back = [gp, oi, b, d, total, sp]() {
      const auto& go = gp->node(oi).grad;
      int off2 = 0;
      for (auto [pi, t] : *sp) {
        if (auto* dp = gp->grad_sink(pi)) {
          for (int r = 0; r < b; ++r) {
            const Real* src = go.data.data() + (static_cast<size_t>(r) * total + off2) * d;
            Real* dst = dp->data.data() + static_cast<size_t>(r) * t * d;
            for (int64_t j = 0; j < static_cast<int64_t>(t) * d; ++j) dst[j] += src[j];
          }
        }
        off2 += t;
      }
    };
  }
  return g.wrap(oi);
}

// (B,T,d) -> (B,d) at middle index t.
template <class Real>
Var<Real> select_mid(Var<Real> a, int t) {
  Graph<Real>& g = *a.g;
  const TensorT<Real>& av = g.node(a.i).val;
  detail::require(av.rank() == 3, "select_mid: rank-3 input required");
  const int b = av.dim(0), tt = av.dim(1), d = av.dim(2);
  detail::require(t >= 0 && t < tt, "select_mid: index " + std::to_string(t) +
                                        " outside extent " + std::to_string(tt));
  TensorT<Real> out = detail::pooled_uninit<Real>({b, d});
  for (int r = 0; r < b; ++r)
    std::memcpy(out.data.data() + static_cast<size_t>(r) * d,
                av.data.data() + (static_cast<size_t>(r) * tt + t) * d,
                sizeof(Real) * static_cast<size_t>(d));
  bool ng = g.node(a.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  if (ng) {
    Graph<Real>* gp = &g;
    int ai = a.i;
    g.node(oi).back = [gp, ai, oi, t, tt, d, b]() {
      if (auto* da = gp->grad_sink(ai)) {
        const auto& go = gp->node(oi).grad;
        for (int r = 0; r < b; ++r) {
          const Real* src = go.data.data() + static_cast<size_t>(r) * d;
          Real* dst = da->data.data() + (static_cast<size_t>(r) * tt + t) * d;
          for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
      }
    };
  }
  return g.wrap(oi);
}

// Fused layer norm over the last axis: y = gamma * (x - mu) / max(sigma, floor)
// + beta, population statistics per row. Gradients flow through sigma only on
// the un-floored branch, matching the sqrt_floor composite.
template <class Real>
Var<Real> layer_norm_fused(Var<Real> x, Var<Real> gamma, Var<Real> beta,
                           double sigma_floor = 1e-5) {
  detail::same_graph(x, gamma, "layer_norm");
  detail::same_graph(x, beta, "layer_norm");
  Graph<Real>& g = *x.g;
  const TensorT<Real>& xv = g.node(x.i).val;
  const int n = xv.last_dim();
  const TensorT<Real>& gv = g.node(gamma.i).val;
  const TensorT<Real>& bv = g.node(beta.i).val;
  detail::require(gv.numel() == n && bv.numel() == n,
                  "layer_norm: gain/shift width " + shape_str(gv.shape) +
                      " does not match last axis of " + shape_str(xv.shape));
  const int64_t rows = xv.numel() / n;
  const Real fl = static_cast<Real>(sigma_floor);

  TensorT<Real> out = detail::pooled_uninit<Real>(xv.shape);
  auto xhat = std::make_shared<std::vector<Real>>(static_cast<size_t>(xv.numel()));
  auto sigma = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows));
  auto floored = std::make_shared<std::vector<char>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const Real* xr = xv.data.data() + r * n;
    double mu = 0;
    for (int j = 0; j < n; ++j) mu += static_cast<double>(xr[j]);
    mu /= n;
    double var = 0;
    for (int j = 0; j < n; ++j) {
      const double t = static_cast<double>(xr[j]) - mu;
      var += t * t;
    }
    var /= n;
    const double sd_raw = std::sqrt(var);
    const bool fl_hit = !(sd_raw > static_cast<double>(fl));
    const Real sd = fl_hit ? fl : static_cast<Real>(sd_raw);
    (*sigma)[static_cast<size_t>(r)] = sd;
    (*floored)[static_cast<size_t>(r)] = fl_hit ? 1 : 0;
    Real* xh = xhat->data() + r * n;
    Real* yr = out.data.data() + r * n;
    for (int j = 0; j < n; ++j) {
      xh[j] = static_cast<Real>((static_cast<double>(xr[j]) - mu) / static_cast<double>(sd));
      yr[j] = gv.data[static_cast<size_t>(j)] * xh[j] + bv.data[static_cast<size_t>(j)];
    }
  }
  bool ng = g.node(x.i).needs_grad || g.node(gamma.i).needs_grad || g.node(beta.i).needs_grad;
  int oi = g.push(std::move(out), ng);
  g.check_val(g.node(oi).val, "layer_norm");
  if (ng) {
    Graph<Real>* gp = &g;
    int xi = x.i, gi = gamma.i, bi = beta.i;
    g.node(oi).back = [gp, xi, gi, bi, oi, n, rows, xhat, sigma, floored]() {
      const auto& go = gp->node(oi).grad;
      const auto& gv2 = gp->node(gi).val;
      TensorT<Real>* dx = gp->grad_sink(xi);
      TensorT<Real>* dg = gp->grad_sink(gi);
      TensorT<Real>* db = gp->grad_sink(bi);
      for (int64_t r = 0; r < rows; ++r) {
        const Real* dy = go.data.data() + r * n;
        const Real* xh = xhat->data() + r * n;
        if (dg)
          for (int j = 0; j < n; ++j)
            dg->data[static_cast<size_t>(j)] += dy[j] * xh[j];
        if (db)
          for (int j = 0; j < n; ++j) db->data[static_cast<size_t>(j)] += dy[j];
        if (dx) {
          double mean_g = 0, mean_gx = 0;
          for (int j = 0; j < n; ++j) {
            const double gj = static_cast<double>(dy[j]) * gv2.data[static_cast<size_t>(j)];
            mean_g += gj;
            mean_gx += gj * static_cast<double>(xh[j]);
          }
          mean_g /= n;
          mean_gx /= n;
          const double inv_sd = 1.0 / static_cast<double>((*sigma)[static_cast<size_t>(r)]);
          const bool fl_hit = (*floored)[static_cast<size_t>(r)] != 0;
          Real* dxr = dx->data.data() + r * n;
          for (int j = 0; j < n; ++j) {
            const double gj = static_cast<double>(dy[j]) * gv2.data[static_cast<size_t>(j)];
            double v = gj - mean_g;
            if (!fl_hit) v -= static_cast<double>(xh[j]) * mean_gx;
            dxr[j] += static_cast<Real>(v * inv_sd);
          }
        }
      }
    };
  }
  return g.wrap(oi);
}

// Forward-only log-softmax over a plain row (used by beam scoring).
template <class Real>
std::vector<double> log_softmax_row(const Real* x, int n) {
  double mx = static_cast<double>(x[0]);
  for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(x[j]));
  double s = 0.0;
  for (int j = 0; j < n; ++j) s += std::exp(static_cast<double>(x[j]) - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) out[static_cast<size_t>(j)] = static_cast<double>(x[j]) - lse;
  return out;
}

}  // namespace unger
