#pragma once

#include <algorithm>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "unger/common.hpp"

namespace unger {

// Per-user chronologically ordered interactions with a leave-one-out split:
// the last item of each sequence is test, the one before it validation,
// everything earlier is training. Sequences always have length >= 3.
struct InteractionCorpus {
  std::vector<std::string> item_tokens;
  std::vector<std::string> user_tokens;
  std::vector<std::vector<int>> sequences;
  int64_t n_interactions = 0;
  int n_dropped_users = 0;  // users reduced below 3 interactions by filtering

  int n_items() const { return static_cast<int>(item_tokens.size()); }
  int n_users() const { return static_cast<int>(user_tokens.size()); }

  const std::vector<int>& sequence(int u) const { return sequences[static_cast<size_t>(u)]; }
  int train_len(int u) const { return static_cast<int>(sequence(u).size()) - 2; }
  int valid_item(int u) const { return sequence(u)[sequence(u).size() - 2]; }
  int test_item(int u) const { return sequence(u).back(); }

  int item_index(const std::string& token) const {
    for (int i = 0; i < n_items(); ++i)
      if (item_tokens[static_cast<size_t>(i)] == token) return i;
    return -1;
  }
};

struct RawEvent {
  std::string user, item;
  int64_t ts;
  int64_t order;  // file position, breaks timestamp ties
};

namespace detail {

inline InteractionCorpus corpus_from_events(std::vector<RawEvent> events, int min_core) {
  // Iterated k-core: drop every user and item with fewer than min_core
  // surviving interactions until nothing changes.
  std::unordered_set<std::string> dead_users, dead_items;
  if (min_core > 0) {
    for (;;) {
      std::unordered_map<std::string, int> uc, ic;
      for (const auto& e : events) {
        if (dead_users.count(e.user) || dead_items.count(e.item)) continue;
        ++uc[e.user];
        ++ic[e.item];
      }
      bool changed = false;
      for (const auto& [u, c] : uc)
        if (c < min_core) changed |= dead_users.insert(u).second;
      for (const auto& [i, c] : ic)
        if (c < min_core) changed |= dead_items.insert(i).second;
      if (!changed) break;
    }
  }

  std::vector<const RawEvent*> alive;
  alive.reserve(events.size());
  for (const auto& e : events)
    if (!dead_users.count(e.user) && !dead_items.count(e.item)) alive.push_back(&e);

  // Group by user preserving file order, then sort each sequence by
  // (timestamp, file order).
  std::unordered_map<std::string, std::vector<const RawEvent*>> by_user;
  std::vector<std::string> user_order;
  for (const auto* e : alive) {
    auto [it, fresh] = by_user.try_emplace(e->user);
    if (fresh) user_order.push_back(e->user);
    it->second.push_back(e);
  }

  InteractionCorpus c;
  std::unordered_map<std::string, int> item_idx;
  for (const auto& u : user_order) {
    auto& ev = by_user[u];
    if (ev.size() < 3) {
      ++c.n_dropped_users;
      continue;
    }
    std::sort(ev.begin(), ev.end(), [](const RawEvent* a, const RawEvent* b) {
      return a->ts != b->ts ? a->ts < b->ts : a->order < b->order;
    });
    std::vector<int> seq;
    seq.reserve(ev.size());
    for (const auto* e : ev) {
      auto [it, fresh] = item_idx.try_emplace(e->item, static_cast<int>(c.item_tokens.size()));
      if (fresh) c.item_tokens.push_back(e->item);
      seq.push_back(it->second);
    }
    c.n_interactions += static_cast<int64_t>(seq.size());
    c.user_tokens.push_back(u);
    c.sequences.push_back(std::move(seq));
  }
  return c;
}

}  // namespace detail

// UTF-8 TSV `user <TAB> item <TAB> timestamp` -> filtered, split corpus.
inline InteractionCorpus load_interactions(const std::string& path, int min_core) {
  std::ifstream in(path);
  if (!in) fail("cannot open interactions file: " + path);
  std::vector<RawEvent> events;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      fail(path + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
    RawEvent e;
    e.user = line.substr(0, t1);
    e.item = line.substr(t1 + 1, t2 - t1 - 1);
    const std::string ts = line.substr(t2 + 1);
    if (e.user.empty() || e.item.empty())
      fail(path + ":" + std::to_string(line_no) + ": empty user or item token");
    char* end = nullptr;
    e.ts = std::strtoll(ts.c_str(), &end, 10);
    if (ts.empty() || end == nullptr || *end != '\0')
      fail(path + ":" + std::to_string(line_no) + ": bad timestamp '" + ts + "'");
    e.order = line_no;
    events.push_back(std::move(e));
  }
  return detail::corpus_from_events(std::move(events), min_core);
}

inline void save_interactions(const InteractionCorpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write interactions file: " + path);
  for (int u = 0; u < c.n_users(); ++u) {
    const auto& seq = c.sequence(u);
    for (size_t t = 0; t < seq.size(); ++t)
      out << c.user_tokens[static_cast<size_t>(u)] << '\t'
          << c.item_tokens[static_cast<size_t>(seq[t])] << '\t' << t << '\n';
  }
  if (!out) fail("write failed: " + path);
}

namespace detail {

struct TrainPair {
  int user;
  int t;  // target position within the train prefix (>= 1)
};

// Every (history, next item) position inside the train prefixes.
inline std::vector<TrainPair> training_pairs(const InteractionCorpus& c) {
  std::vector<TrainPair> pairs;
  for (int u = 0; u < c.n_users(); ++u)
    for (int t = 1; t < c.train_len(u); ++t) pairs.push_back({u, t});
  if (pairs.empty()) fail("corpus has no training pairs (sequences too short)");
  return pairs;
}

inline void fill_batch(const InteractionCorpus& c, const std::vector<TrainPair>& pairs,
                       Rng& rng, int batch, int window,
                       std::vector<std::vector<int>>& histories, std::vector<int>& targets) {
  histories.clear();
  targets.clear();
  for (int i = 0; i < batch; ++i) {
    const TrainPair& p = pairs[rng.below(pairs.size())];
    const auto& seq = c.sequence(p.user);
    const int lo = std::max(0, p.t - window);
    histories.emplace_back(seq.begin() + lo, seq.begin() + p.t);
    targets.push_back(seq[static_cast<size_t>(p.t)]);
  }
}

}  // namespace detail

// Last `max_len` training items of a user, order preserved.
inline std::vector<int> history_window(const InteractionCorpus& c, int user, int max_len = 20) {
  if (user < 0 || user >= c.n_users()) fail("history_window: no such user");
  const auto& seq = c.sequence(user);
  const int train = static_cast<int>(seq.size()) - 2;
  const int take = std::min(train, max_len);
  return std::vector<int>(seq.begin() + (train - take), seq.begin() + train);
}

}  // namespace unger
