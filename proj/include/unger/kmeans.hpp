#pragma once

#include "unger/common.hpp"

namespace unger {

struct KmeansResult {
  std::vector<std::vector<double>> centroids;  // live clusters only
  std::vector<int> assignment;                 // per point, indexes centroids
  double sse = 0.0;
  std::vector<double> objective_history;  // SSE after each Lloyd assignment
};

namespace detail {

inline double sqdist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

inline int nearest_centroid(const double* p, const std::vector<std::vector<double>>& cs,
                            int d, double* dist_out) {
  int best = 0;
  double bd = sqdist(p, cs[0].data(), d);
  for (size_t k = 1; k < cs.size(); ++k) {
    const double dd = sqdist(p, cs[k].data(), d);
    if (dd < bd) {  // ties keep the lower index
      bd = dd;
      best = static_cast<int>(k);
    }
  }
  if (dist_out) *dist_out = bd;
  return best;
}

inline std::vector<std::vector<double>> kmeanspp_seed(const std::vector<double>& pts, int n,
                                                      int d, int k, Rng& rng) {
  std::vector<std::vector<double>> cs;
  cs.reserve(static_cast<size_t>(k));
  auto point = [&](int i) { return pts.data() + static_cast<size_t>(i) * d; };
  int first = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
  cs.emplace_back(point(first), point(first) + d);
  std::vector<double> d2(static_cast<size_t>(n));
  while (static_cast<int>(cs.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double dd;
      nearest_centroid(point(i), cs, d, &dd);
      d2[static_cast<size_t>(i)] = dd;
      total += dd;
    }
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    } else {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    }
    cs.emplace_back(point(pick), point(pick) + d);
  }
  return cs;
}

}  // namespace detail

// Lloyd iterations over k-means++ seeds. Clusters that empty out are dropped,
// so the result may hold fewer than k live centroids. All distance work is in
// double. Deterministic for a given rng state; `restarts` independent seedings
// keep the best SSE.
inline KmeansResult kmeans(const std::vector<double>& pts, int n, int d, int k, Rng& rng,
                           int max_iters = 25, int restarts = 4) {
  if (n < 1) fail("kmeans: no points");
  if (k < 1) fail("kmeans: k must be >= 1");
  if (static_cast<int64_t>(n) * d != static_cast<int64_t>(pts.size()))
    fail("kmeans: point buffer size mismatch");
  auto point = [&](int i) { return pts.data() + static_cast<size_t>(i) * d; };

  KmeansResult best;
  bool have_best = false;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    auto cs = detail::kmeanspp_seed(pts, n, d, std::min(k, n), rng);
    KmeansResult cur;
    cur.assignment.assign(static_cast<size_t>(n), -1);
    for (int it = 0; it < max_iters; ++it) {
      // assign
      bool changed = false;
      double sse = 0.0;
      for (int i = 0; i < n; ++i) {
        double dd;
        const int a = detail::nearest_centroid(point(i), cs, d, &dd);
        if (a != cur.assignment[static_cast<size_t>(i)]) changed = true;
        cur.assignment[static_cast<size_t>(i)] = a;
        sse += dd;
      }
      cur.objective_history.push_back(sse);
      cur.sse = sse;
      // assignments must stay consistent with the stored centroids, so the
      // loop always ends right after an assign pass
      if (!changed || it == max_iters - 1) break;
      // update means; drop clusters that lost all members
      std::vector<std::vector<double>> sums(cs.size(), std::vector<double>(static_cast<size_t>(d), 0.0));
      std::vector<int> counts(cs.size(), 0);
      for (int i = 0; i < n; ++i) {
        const int a = cur.assignment[static_cast<size_t>(i)];
        ++counts[static_cast<size_t>(a)];
        const double* p = point(i);
        auto& s = sums[static_cast<size_t>(a)];
        for (int j = 0; j < d; ++j) s[static_cast<size_t>(j)] += p[j];
      }
      std::vector<int> remap(cs.size(), -1);
      std::vector<std::vector<double>> live;
      for (size_t c = 0; c < cs.size(); ++c) {
        if (counts[c] == 0) continue;
        remap[c] = static_cast<int>(live.size());
        auto& s = sums[c];
        for (int j = 0; j < d; ++j) s[static_cast<size_t>(j)] /= counts[c];
        live.push_back(std::move(s));
      }
      cs = std::move(live);
      for (auto& a : cur.assignment) a = remap[static_cast<size_t>(a)];
    }
    cur.centroids = std::move(cs);
    if (!have_best || cur.sse < best.sse) {
      best = std::move(cur);
      have_best = true;
    }
  }
  return best;
}

}  // namespace unger
