#pragma once

#include <thread>

#include "unger/generator.hpp"

namespace unger {

struct ScoredItem {
  int item;
  double logprob;
};

// Ordered top-k predictions: scores descending, ties broken by lower item.
using RankedList = std::vector<ScoredItem>;

// Trie-constrained beam decoding. The encoder runs once per query; each level
// batches every live hypothesis through the decoder and keeps the best
// beam_width trie-valid continuations. Scores are sums of per-level
// log-softmax values, comparable across hypotheses because every trie path
// has the table's full depth (disambiguation subtrees included).
template <class Real>
class BeamDecoder {
 public:
  BeamDecoder(GenModel<Real>& model, const UnicodeTable& table)
      : m_(&model), t_(&table) {
    if (table.trie.empty()) fail("beam_decode: table has no trie (call build_trie)");
    if (table.n_items() == 0) fail("beam_decode: empty unicode table");
  }

  struct QueryStats {
    int64_t decoder_forwards = 0;  // one per level expansion
  };

  RankedList decode(const std::vector<int>& history, int beam_width, int k,
                    QueryStats* stats = nullptr) const {
    if (beam_width < k)
      fail("beam_decode: beam width " + std::to_string(beam_width) +
           " is smaller than k = " + std::to_string(k));
    Encoded enc = encode_history(history);

    struct Hyp {
      int node;
      double score;
      std::vector<int> prefix;
    };
    std::vector<Hyp> active{{0, 0.0, {}}};
    std::vector<ScoredItem> completed;

    const int max_depth = t_->width();
    for (int depth = 0; depth < max_depth && !active.empty(); ++depth) {
      // retire leaves (shorter codes inside a ragged table)
      std::vector<Hyp> expanding;
      for (auto& h : active) {
        const int item = t_->trie[static_cast<size_t>(h.node)].item;
        if (item != -1)
          completed.push_back({item, h.score});
        else
          expanding.push_back(std::move(h));
      }
      if (expanding.empty()) break;

      auto logits = level_logits_for(enc, expanding, depth, stats);
      const int vocab = logits.dim(1);
      struct Cand {
        double score;
        int hyp;
        int code;
        int node;
      };
      std::vector<Cand> cands;
      for (int hi = 0; hi < static_cast<int>(expanding.size()); ++hi) {
        auto lps = log_softmax_row(logits.data.data() + static_cast<size_t>(hi) * vocab, vocab);
        for (const auto& [code, child] : t_->trie[static_cast<size_t>(expanding[static_cast<size_t>(hi)].node)].children) {
          if (code >= vocab)
            fail("beam_decode: table code " + std::to_string(code) +
                 " outside the model's level vocabulary");
          cands.push_back({expanding[static_cast<size_t>(hi)].score + lps[static_cast<size_t>(code)],
                           hi, code, child});
        }
      }
      std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.hyp != b.hyp) return a.hyp < b.hyp;
        return a.code < b.code;
      });
      if (static_cast<int>(cands.size()) > beam_width) cands.resize(static_cast<size_t>(beam_width));
      std::vector<Hyp> next;
      next.reserve(cands.size());
      for (const auto& c : cands) {
        Hyp h;
        h.node = c.node;
        h.score = c.score;
        h.prefix = expanding[static_cast<size_t>(c.hyp)].prefix;
        h.prefix.push_back(c.code);
        next.push_back(std::move(h));
      }
      active = std::move(next);
    }
    for (const auto& h : active) {
      const int item = t_->trie[static_cast<size_t>(h.node)].item;
      if (item != -1) completed.push_back({item, h.score});
    }
    std::sort(completed.begin(), completed.end(), [](const ScoredItem& a, const ScoredItem& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      return a.item < b.item;
    });
    if (static_cast<int>(completed.size()) > k) completed.resize(static_cast<size_t>(k));
    return completed;
  }

  // Incremental per-level log-probability of one code sequence; numerically
  // identical to the sums decode() accumulates along that path.
  double sequence_logprob(const std::vector<int>& history, const std::vector<int>& code) const {
    Encoded enc = encode_history(history);
    return sequence_logprob(enc, code);
  }

  // --- shared pieces, exposed for batch decoding and benchmarks ---

  struct Encoded {
    TensorT<Real> h;  // (1,S,d)
    std::vector<std::vector<bool>> valid;
  };

  Encoded encode_history(const std::vector<int>& history) const {
    Graph<Real> g;
    auto bound = m_->bind(g, false);
    auto eb = m_->make_encoder_batch({history}, *t_);
    auto h = m_->encode(g, bound, eb);
    return Encoded{h.value(), eb.valid};
  }

  double sequence_logprob(const Encoded& enc, const std::vector<int>& code) const {
    struct Hyp {
      int node;
      double score;
      std::vector<int> prefix;
    };
    double score = 0.0;
    std::vector<int> prefix;
    for (size_t l = 0; l < code.size(); ++l) {
      std::vector<HypView> one{{prefix}};
      auto logits = prefix_logits(enc, one, static_cast<int>(l), nullptr);
      auto lps = log_softmax_row(logits.data.data(), logits.dim(1));
      if (code[l] < 0 || code[l] >= logits.dim(1))
        fail("sequence_logprob: code outside the level vocabulary");
      score += lps[static_cast<size_t>(code[l])];
      prefix.push_back(code[l]);
    }
    return score;
  }

 private:
  struct HypView {
    const std::vector<int>& prefix;
  };

  template <class HypT>
  TensorT<Real> level_logits_for(const Encoded& enc, const std::vector<HypT>& hyps, int depth,
                                 QueryStats* stats) const {
    std::vector<HypView> views;
    views.reserve(hyps.size());
    for (const auto& h : hyps) views.push_back({h.prefix});
    return prefix_logits(enc, views, depth, stats);
  }

  TensorT<Real> prefix_logits(const Encoded& enc, const std::vector<HypView>& hyps, int depth,
                              QueryStats* stats) const {
    const int n = static_cast<int>(hyps.size());
    const int s = enc.valid[0].empty() ? 0 : static_cast<int>(enc.valid[0].size());
    const int d = m_->config().d_model;
    // replicate the encoder output across hypotheses
    TensorT<Real> h_rep = TensorT<Real>::zeros({n, s, d});
    for (int r = 0; r < n; ++r)
      std::copy(enc.h.data.begin(), enc.h.data.end(),
                h_rep.data.begin() + static_cast<size_t>(r) * enc.h.data.size());
    std::vector<std::vector<bool>> valid(static_cast<size_t>(n), enc.valid[0]);

    std::vector<int> tokens;
    tokens.reserve(static_cast<size_t>(n) * (depth + 1));
    for (const auto& h : hyps) {
      tokens.push_back(GenModel<Real>::kBos);
      for (size_t l = 0; l < h.prefix.size(); ++l)
        tokens.push_back(m_->dec_token_id(static_cast<int>(l), h.prefix[l]));
    }
    Graph<Real> g;
    auto bound = m_->bind(g, false);
    auto h_var = g.input(h_rep, "encoder output");
    auto hidden = m_->decode(g, bound, h_var, valid, tokens, depth + 1);
    if (stats) ++stats->decoder_forwards;
    return m_->level_logits(bound, hidden, depth).value();
  }

  GenModel<Real>* m_;
  const UnicodeTable* t_;
};

enum class EvalSplit { kValid, kTest };

// History used to predict the held-out item of the chosen split.
inline std::vector<int> split_history(const InteractionCorpus& c, int user, EvalSplit split) {
  const auto& seq = c.sequence(user);
  const size_t cut = split == EvalSplit::kTest ? seq.size() - 1 : seq.size() - 2;
  return std::vector<int>(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(cut));
}

// Decodes every user of the split. Pure per user; `threads` (capped by
// UNGER_THREADS when 0) splits users across a pool with byte-identical output
// regardless of the thread count.
template <class Real>
std::vector<RankedList> batch_recommend(GenModel<Real>& model, const UnicodeTable& table,
                                        const InteractionCorpus& corpus, EvalSplit split,
                                        int beam_width, int k, int threads = 0) {
  BeamDecoder<Real> dec(model, table);
  const int n = corpus.n_users();
  std::vector<RankedList> out(static_cast<size_t>(n));
  if (threads <= 0) threads = env_thread_cap();
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int u = 0; u < n; ++u)
      out[static_cast<size_t>(u)] = dec.decode(split_history(corpus, u, split), beam_width, k);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::string> errors(static_cast<size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (int u = w; u < n; u += threads)
          out[static_cast<size_t>(u)] =
              dec.decode(split_history(corpus, u, split), beam_width, k);
      } catch (const std::exception& e) {
        errors[static_cast<size_t>(w)] = e.what();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) fail("batch_recommend worker: " + e);
  return out;
}

}  // namespace unger
