#pragma once

#include <chrono>

#include "unger/beam.hpp"

namespace unger {

// Unified-vs-dual decoding cost comparison. Dual mode decodes two
// model/table streams per query and merges the lists by raw log-probability
// (keeping an item's best score), which mirrors two-code setups that rank by
// confidence; no cross-stream normalization is applied.
struct CostReport {
  std::string mode;
  int n_queries = 0;
  int beam_width = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  int64_t decoder_forwards = 0;
  int64_t table_bytes = 0;
};

namespace detail {

// Canonical in-memory footprint: one 32-bit cell per code position.
inline int64_t table_storage_bytes(const UnicodeTable& t) {
  int64_t cells = 0;
  for (const auto& c : t.codes) cells += static_cast<int64_t>(c.size());
  return cells * 4;
}

inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.empty()) return 0.0;
  const double pos = q * (static_cast<double>(v.size()) - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return v[lo] * (1 - f) + v[hi] * f;
}

inline RankedList merge_by_score(const RankedList& a, const RankedList& b, int k) {
  std::unordered_map<int, double> best;
  for (const auto& s : a)
    if (!best.count(s.item) || best[s.item] < s.logprob) best[s.item] = s.logprob;
  for (const auto& s : b)
    if (!best.count(s.item) || best[s.item] < s.logprob) best[s.item] = s.logprob;
  RankedList out;
  out.reserve(best.size());
  for (const auto& [item, lp] : best) out.push_back({item, lp});
  std::sort(out.begin(), out.end(), [](const ScoredItem& x, const ScoredItem& y) {
    if (x.logprob != y.logprob) return x.logprob > y.logprob;
    return x.item < y.item;
  });
  if (static_cast<int>(out.size()) > k) out.resize(static_cast<size_t>(k));
  return out;
}

}  // namespace detail

template <class Real>
CostReport bench_cost_unified(GenModel<Real>& model, const UnicodeTable& table,
                              const std::vector<std::vector<int>>& queries, int beam_width,
                              int k) {
  BeamDecoder<Real> dec(model, table);
  CostReport r;
  r.mode = "unified";
  r.n_queries = static_cast<int>(queries.size());
  r.beam_width = beam_width;
  r.table_bytes = detail::table_storage_bytes(table);
  std::vector<double> ms;
  ms.reserve(queries.size());
  for (const auto& q : queries) {
    typename BeamDecoder<Real>::QueryStats st;
    const auto t0 = std::chrono::steady_clock::now();
    dec.decode(q, beam_width, k, &st);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    r.decoder_forwards += st.decoder_forwards;
  }
  double total = 0;
  for (double v : ms) total += v;
  r.mean_ms = ms.empty() ? 0.0 : total / static_cast<double>(ms.size());
  r.p50_ms = detail::percentile(ms, 0.50);
  r.p95_ms = detail::percentile(ms, 0.95);
  return r;
}

template <class Real>
CostReport bench_cost_dual(GenModel<Real>& model_a, const UnicodeTable& table_a,
                           GenModel<Real>& model_b, const UnicodeTable& table_b,
                           const std::vector<std::vector<int>>& queries, int beam_width,
                           int k) {
  BeamDecoder<Real> da(model_a, table_a);
  BeamDecoder<Real> db(model_b, table_b);
  CostReport r;
  r.mode = "dual";
  r.n_queries = static_cast<int>(queries.size());
  r.beam_width = beam_width;
  r.table_bytes = detail::table_storage_bytes(table_a) + detail::table_storage_bytes(table_b);
  std::vector<double> ms;
  ms.reserve(queries.size());
  for (const auto& q : queries) {
    typename BeamDecoder<Real>::QueryStats sa, sb;
    const auto t0 = std::chrono::steady_clock::now();
    auto la = da.decode(q, beam_width, k, &sa);
    auto lb = db.decode(q, beam_width, k, &sb);
    detail::merge_by_score(la, lb, k);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    r.decoder_forwards += sa.decoder_forwards + sb.decoder_forwards;
  }
  double total = 0;
  for (double v : ms) total += v;
  r.mean_ms = ms.empty() ? 0.0 : total / static_cast<double>(ms.size());
  r.p50_ms = detail::percentile(ms, 0.50);
  r.p95_ms = detail::percentile(ms, 0.95);
  return r;
}

}  // namespace unger
