#pragma once

#include "unger/embedding.hpp"
#include "unger/kmeans.hpp"

namespace unger {

// ---------------------------------------------------------------------------
// PCA (sample covariance, cyclic Jacobi eigensolver)
// ---------------------------------------------------------------------------

struct Pca {
  std::vector<double> mean;                     // per column
  std::vector<std::vector<double>> components;  // row-major, eigenvalue-descending
  std::vector<double> eigenvalues;              // descending
};

namespace detail {

// Cyclic Jacobi for symmetric matrices; returns eigenvalues (diagonal) and
// eigenvectors as rows of v.
inline void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& eig,
                         std::vector<std::vector<double>>& v) {
  const int n = static_cast<int>(a.size());
  v.assign(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)][static_cast<size_t>(i)] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                                             a[static_cast<size_t>(i)][static_cast<size_t>(j)];
    if (off < 1e-24) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[static_cast<size_t>(p)][static_cast<size_t>(q)];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[static_cast<size_t>(p)][static_cast<size_t>(p)];
        const double aqq = a[static_cast<size_t>(q)][static_cast<size_t>(q)];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < n; ++i) {
          const double aip = a[static_cast<size_t>(i)][static_cast<size_t>(p)];
          const double aiq = a[static_cast<size_t>(i)][static_cast<size_t>(q)];
          a[static_cast<size_t>(i)][static_cast<size_t>(p)] = c * aip - s * aiq;
          a[static_cast<size_t>(i)][static_cast<size_t>(q)] = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          const double api = a[static_cast<size_t>(p)][static_cast<size_t>(i)];
          const double aqi = a[static_cast<size_t>(q)][static_cast<size_t>(i)];
          a[static_cast<size_t>(p)][static_cast<size_t>(i)] = c * api - s * aqi;
          a[static_cast<size_t>(q)][static_cast<size_t>(i)] = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          const double vpi = v[static_cast<size_t>(p)][static_cast<size_t>(i)];
          const double vqi = v[static_cast<size_t>(q)][static_cast<size_t>(i)];
          v[static_cast<size_t>(p)][static_cast<size_t>(i)] = c * vpi - s * vqi;
          v[static_cast<size_t>(q)][static_cast<size_t>(i)] = s * vpi + c * vqi;
        }
      }
  }
  eig.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = a[static_cast<size_t>(i)][static_cast<size_t>(i)];
}

}  // namespace detail

inline Pca pca_fit(const EmbeddingMatrix& m) {
  if (m.n_items < 2) fail("pca_fit: need at least 2 rows");
  const int n = m.n_items, d = m.dim;
  Pca p;
  p.mean.assign(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) p.mean[static_cast<size_t>(j)] += m.at(i, j);
  for (auto& v : p.mean) v /= n;
  std::vector<std::vector<double>> cov(static_cast<size_t>(d),
                                       std::vector<double>(static_cast<size_t>(d), 0.0));
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double xa = m.at(i, a) - p.mean[static_cast<size_t>(a)];
      for (int b = a; b < d; ++b)
        cov[static_cast<size_t>(a)][static_cast<size_t>(b)] +=
            xa * (m.at(i, b) - p.mean[static_cast<size_t>(b)]);
    }
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b) {
      cov[static_cast<size_t>(a)][static_cast<size_t>(b)] /= (n - 1);
      cov[static_cast<size_t>(b)][static_cast<size_t>(a)] = cov[static_cast<size_t>(a)][static_cast<size_t>(b)];
    }
  std::vector<double> eig;
  std::vector<std::vector<double>> vecs;
  detail::jacobi_eigen(std::move(cov), eig, vecs);
  std::vector<int> order(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return eig[static_cast<size_t>(a)] > eig[static_cast<size_t>(b)];
  });
  for (int i : order) {
    // sign convention: largest-magnitude coordinate positive
    auto comp = vecs[static_cast<size_t>(i)];
    int arg = 0;
    for (int j = 1; j < d; ++j)
      if (std::abs(comp[static_cast<size_t>(j)]) > std::abs(comp[static_cast<size_t>(arg)])) arg = j;
    if (comp[static_cast<size_t>(arg)] < 0)
      for (auto& v : comp) v = -v;
    p.components.push_back(std::move(comp));
    p.eigenvalues.push_back(eig[static_cast<size_t>(i)]);
  }
  return p;
}

// Projects onto the top-k components. Components whose eigenvalue carries no
// variance (rank deficiency) produce zero columns; n_padded counts them.
inline EmbeddingMatrix pca_project(const EmbeddingMatrix& m, const Pca& p, int k,
                                   int* n_padded = nullptr) {
  const int d = m.dim;
  const double tol = 1e-10 * std::max(p.eigenvalues.empty() ? 0.0 : p.eigenvalues[0], 0.0);
  EmbeddingMatrix out = EmbeddingMatrix::zeros(m.n_items, k);
  out.tokens = m.tokens;
  int padded = 0;
  for (int c = 0; c < k; ++c) {
    const bool live = c < static_cast<int>(p.components.size()) &&
                      p.eigenvalues[static_cast<size_t>(c)] > tol;
    if (!live) {
      ++padded;
      continue;
    }
    const auto& comp = p.components[static_cast<size_t>(c)];
    for (int i = 0; i < m.n_items; ++i) {
      double s = 0;
      for (int j = 0; j < d; ++j)
        s += (m.at(i, j) - p.mean[static_cast<size_t>(j)]) * comp[static_cast<size_t>(j)];
      out.at(i, c) = static_cast<float>(s);
    }
  }
  if (n_padded) *n_padded = padded;
  return out;
}

namespace detail {

// Per-column z-score in place; fails when the whole matrix is constant.
inline void zscore_columns(EmbeddingMatrix& m, const std::string& what) {
  double max_std = 0;
  std::vector<double> mean(static_cast<size_t>(m.dim), 0.0), sd(static_cast<size_t>(m.dim), 0.0);
  for (int i = 0; i < m.n_items; ++i)
    for (int j = 0; j < m.dim; ++j) mean[static_cast<size_t>(j)] += m.at(i, j);
  for (auto& v : mean) v /= m.n_items;
  for (int i = 0; i < m.n_items; ++i)
    for (int j = 0; j < m.dim; ++j) {
      const double t = m.at(i, j) - mean[static_cast<size_t>(j)];
      sd[static_cast<size_t>(j)] += t * t;
    }
  for (auto& v : sd) {
    v = std::sqrt(v / m.n_items);
    max_std = std::max(max_std, v);
  }
  if (max_std <= 0.0) fail("degenerate matrix (zero variance): " + what);
  for (int i = 0; i < m.n_items; ++i)
    for (int j = 0; j < m.dim; ++j) {
      const double s = sd[static_cast<size_t>(j)] > 0 ? sd[static_cast<size_t>(j)] : 1.0;
      m.at(i, j) = static_cast<float>((m.at(i, j) - mean[static_cast<size_t>(j)]) / s);
    }
}

}  // namespace detail

// The concatenation fusion baseline: PCA reduces the semantic side onto the
// collaborative width when the dimensions differ, both halves are z-scored
// per column, then concatenated row-wise.
inline EmbeddingMatrix concat_baseline(const EmbeddingMatrix& s, const EmbeddingMatrix& c,
                                       int* n_padded = nullptr) {
  if (s.n_items != c.n_items)
    fail("concat_baseline: matrices cover different item sets (" +
         std::to_string(s.n_items) + " vs " + std::to_string(c.n_items) + ")");
  EmbeddingMatrix sh;
  int padded = 0;
  if (s.dim == c.dim) {
    sh = s;  // nothing to reduce
  } else {
    sh = pca_project(s, pca_fit(s), c.dim, &padded);
  }
  if (n_padded) *n_padded = padded;
  EmbeddingMatrix ch = c;
  detail::zscore_columns(sh, "semantic half");
  detail::zscore_columns(ch, "collaborative half");
  EmbeddingMatrix out = EmbeddingMatrix::zeros(c.n_items, 2 * c.dim);
  out.tokens = c.tokens.empty() ? s.tokens : c.tokens;
  for (int i = 0; i < c.n_items; ++i) {
    std::memcpy(out.row(i), sh.row(i), sizeof(float) * static_cast<size_t>(c.dim));
    std::memcpy(out.row(i) + c.dim, ch.row(i), sizeof(float) * static_cast<size_t>(c.dim));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semantic-dominance analysis
// ---------------------------------------------------------------------------

struct DominanceReport {
  double similarity_semantic = 0.0;
  double similarity_collaborative = 0.0;
  double kl_s_e = 0.0;
  double kl_c_e = 0.0;
  int n_clusters = 0;
};

namespace detail {

// Basis-free row representation: each item becomes its cosine-similarity
// profile against every item of the same matrix, z-scored per matrix. Rows of
// different matrices (learned in unrelated bases and widths) are then
// directly comparable through the shared item axis.
inline std::vector<std::vector<double>> similarity_profiles(const EmbeddingMatrix& m,
                                                            const std::string& what) {
  const int n = m.n_items, d = m.dim;
  std::vector<std::vector<double>> unit(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(d)));
  for (int i = 0; i < n; ++i) {
    double norm2 = 0;
    for (int j = 0; j < d; ++j) norm2 += static_cast<double>(m.at(i, j)) * m.at(i, j);
    const double inv = 1.0 / std::max(std::sqrt(norm2), 1e-12);
    for (int j = 0; j < d; ++j) unit[static_cast<size_t>(i)][static_cast<size_t>(j)] = m.at(i, j) * inv;
  }
  std::vector<std::vector<double>> rows(static_cast<size_t>(n),
                                        std::vector<double>(static_cast<size_t>(n)));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double dot = 0;
      for (int k = 0; k < d; ++k)
        dot += unit[static_cast<size_t>(i)][static_cast<size_t>(k)] *
               unit[static_cast<size_t>(j)][static_cast<size_t>(k)];
      rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = dot;
      rows[static_cast<size_t>(j)][static_cast<size_t>(i)] = dot;
    }
  // z-score per profile coordinate within the matrix
  std::vector<double> mean(static_cast<size_t>(n), 0.0), sd(static_cast<size_t>(n), 0.0);
  for (const auto& r : rows)
    for (int j = 0; j < n; ++j) mean[static_cast<size_t>(j)] += r[static_cast<size_t>(j)];
  for (auto& v : mean) v /= n;
  for (const auto& r : rows)
    for (int j = 0; j < n; ++j) {
      const double t = r[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
      sd[static_cast<size_t>(j)] += t * t;
    }
  double max_std = 0;
  for (auto& v : sd) {
    v = std::sqrt(v / n);
    max_std = std::max(max_std, v);
  }
  if (max_std <= 0.0) fail("degenerate matrix (zero variance): " + what);
  for (auto& r : rows)
    for (int j = 0; j < n; ++j) {
      const double s = sd[static_cast<size_t>(j)] > 0 ? sd[static_cast<size_t>(j)] : 1.0;
      r[static_cast<size_t>(j)] = (r[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)]) / s;
    }
  return rows;
}

inline std::vector<double> cluster_histogram(const std::vector<std::vector<double>>& rows,
                                             const std::vector<std::vector<double>>& centroids,
                                             int d) {
  std::vector<double> hist(centroids.size(), 1.0);  // Laplace +1
  for (const auto& r : rows) {
    double unused;
    hist[static_cast<size_t>(nearest_centroid(r.data(), centroids, d, &unused))] += 1.0;
  }
  double total = 0;
  for (double v : hist) total += v;
  for (double& v : hist) v /= total;
  return hist;
}

inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0;
  for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

}  // namespace detail

// Reduces each matrix to a cluster-assignment distribution over one shared
// k-means fit. Rows enter the pooled fit as per-matrix-standardized
// cosine-similarity profiles over the common item set (raw coordinates of
// independently learned matrices live in unrelated bases and widths and would
// cluster by source rather than by structure); the pool is sorted so the fit
// is invariant to argument order. Then
//   similarity_semantic      = 1 - KL(S||E) / (KL(S||E) + KL(C||E))
//   similarity_collaborative = 1 - KL(C||E) / (KL(S||E) + KL(C||E)).
// The shares are winner-take-all-ish when sources form tight profile bundles;
// averaging reports over a few seeds gives a smoother estimate (the
// acceptance harness does exactly that).
inline DominanceReport dominance_similarity(const EmbeddingMatrix& s, const EmbeddingMatrix& c,
                                            const EmbeddingMatrix& e, int n_clusters = 10,
                                            uint64_t seed = 2024) {
  if (s.n_items != c.n_items || s.n_items != e.n_items)
    fail("dominance_similarity: matrices cover different item sets");
  if (s.n_items < 1) fail("dominance_similarity: empty matrices");
  if (n_clusters < 1) fail("dominance_similarity: need at least one cluster");
  const int n = s.n_items;
  auto sr = detail::similarity_profiles(s, "semantic matrix");
  auto cr = detail::similarity_profiles(c, "collaborative matrix");
  auto er = detail::similarity_profiles(e, "integrated matrix");

  std::vector<std::vector<double>> pooled;
  pooled.reserve(sr.size() + cr.size() + er.size());
  for (const auto* set : {&sr, &cr, &er})
    for (const auto& r : *set) pooled.push_back(r);
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> flat;
  flat.reserve(pooled.size() * static_cast<size_t>(n));
  for (const auto& r : pooled) flat.insert(flat.end(), r.begin(), r.end());
  Rng rng(derive_seed(seed, "dominance-kmeans"));
  auto km = kmeans(flat, static_cast<int>(pooled.size()), n, n_clusters, rng);

  auto hs = detail::cluster_histogram(sr, km.centroids, n);
  auto hc = detail::cluster_histogram(cr, km.centroids, n);
  auto he = detail::cluster_histogram(er, km.centroids, n);

  DominanceReport rep;
  rep.n_clusters = static_cast<int>(km.centroids.size());
  rep.kl_s_e = detail::kl_divergence(hs, he);
  rep.kl_c_e = detail::kl_divergence(hc, he);
  const double total = rep.kl_s_e + rep.kl_c_e;
  if (total <= 0.0) {
    rep.similarity_semantic = 0.5;
    rep.similarity_collaborative = 0.5;
  } else {
    rep.similarity_semantic = 1.0 - rep.kl_s_e / total;
    rep.similarity_collaborative = 1.0 - rep.kl_c_e / total;
  }
  return rep;
}

// Instrument-seed-averaged shares: the pooled clustering is a randomized
// measurement, so repeated fits give a stabler estimate of the balance.
inline DominanceReport dominance_similarity_averaged(const EmbeddingMatrix& s,
                                                     const EmbeddingMatrix& c,
                                                     const EmbeddingMatrix& e,
                                                     int n_clusters = 10, uint64_t seed = 2024,
                                                     int repeats = 5) {
  DominanceReport acc;
  acc.n_clusters = n_clusters;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    auto rep = dominance_similarity(s, c, e, n_clusters, derive_seed(seed, "rep" + std::to_string(r)));
    acc.similarity_semantic += rep.similarity_semantic;
    acc.similarity_collaborative += rep.similarity_collaborative;
    acc.kl_s_e += rep.kl_s_e;
    acc.kl_c_e += rep.kl_c_e;
  }
  const double inv = 1.0 / std::max(1, repeats);
  acc.similarity_semantic *= inv;
  acc.similarity_collaborative *= inv;
  acc.kl_s_e *= inv;
  acc.kl_c_e *= inv;
  return acc;
}

}  // namespace unger
