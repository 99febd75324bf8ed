#pragma once

#include <iomanip>
#include <map>

#include "unger/beam.hpp"

namespace unger {

struct MetricReport {
  std::map<int, double> recall_at;
  std::map<int, double> ndcg_at;
  int n_users = 0;
  int n_missing = 0;  // truth users without a ranked list, scored as misses
};

namespace detail {

// 0-based rank of the truth item, or -1 when absent.
inline int rank_of(const RankedList& list, int truth) {
  for (size_t i = 0; i < list.size(); ++i)
    if (list[i].item == truth) return static_cast<int>(i);
  return -1;
}

}  // namespace detail

// Mean over users of [rank(truth) < K].
inline double recall_at_k(const std::map<int, RankedList>& ranked,
                          const std::map<int, int>& truth, int k, int* missing = nullptr) {
  if (k < 1) fail("recall_at_k: K must be >= 1");
  if (truth.empty()) fail("recall_at_k: no users");
  int miss_count = 0;
  double hits = 0;
  for (const auto& [user, item] : truth) {
    auto it = ranked.find(user);
    if (it == ranked.end()) {
      ++miss_count;
      continue;
    }
    const int r = detail::rank_of(it->second, item);
    if (r >= 0 && r < k) hits += 1.0;
  }
  if (missing) *missing = miss_count;
  return hits / static_cast<double>(truth.size());
}

// Single-relevant-item NDCG: DCG = 1/log2(rank+2) on a top-K hit, iDCG = 1.
inline double ndcg_at_k(const std::map<int, RankedList>& ranked,
                        const std::map<int, int>& truth, int k, int* missing = nullptr) {
  if (k < 1) fail("ndcg_at_k: K must be >= 1");
  if (truth.empty()) fail("ndcg_at_k: no users");
  int miss_count = 0;
  double total = 0;
  for (const auto& [user, item] : truth) {
    auto it = ranked.find(user);
    if (it == ranked.end()) {
      ++miss_count;
      continue;
    }
    const int r = detail::rank_of(it->second, item);
    if (r >= 0 && r < k) total += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  if (missing) *missing = miss_count;
  return total / static_cast<double>(truth.size());
}

inline MetricReport metric_report(const std::map<int, RankedList>& ranked,
                                  const std::map<int, int>& truth,
                                  const std::vector<int>& ks) {
  MetricReport rep;
  rep.n_users = static_cast<int>(truth.size());
  for (int k : ks) {
    rep.recall_at[k] = recall_at_k(ranked, truth, k, &rep.n_missing);
    rep.ndcg_at[k] = ndcg_at_k(ranked, truth, k, nullptr);
  }
  return rep;
}

// Convenience for corpus-aligned vectors of rankings.
inline MetricReport metric_report(const std::vector<RankedList>& ranked,
                                  const std::vector<int>& truth, const std::vector<int>& ks) {
  std::map<int, RankedList> rm;
  std::map<int, int> tm;
  for (size_t u = 0; u < truth.size(); ++u) {
    tm[static_cast<int>(u)] = truth[u];
    if (u < ranked.size()) rm[static_cast<int>(u)] = ranked[u];
  }
  return metric_report(rm, tm, ks);
}

// Aligned-column text rendering.
inline std::string metrics_table(const MetricReport& rep) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "metric";
  for (const auto& [k, v] : rep.recall_at) os << std::right << std::setw(12) << ("@" + std::to_string(k));
  os << '\n' << std::left << std::setw(10) << "recall";
  os << std::fixed << std::setprecision(6);
  for (const auto& [k, v] : rep.recall_at) os << std::right << std::setw(12) << v;
  os << '\n' << std::left << std::setw(10) << "ndcg";
  for (const auto& [k, v] : rep.ndcg_at) os << std::right << std::setw(12) << v;
  os << '\n';
  return os.str();
}

}  // namespace unger
