#pragma once

#include "unger/corpus.hpp"
#include "unger/embedding.hpp"
#include "unger/nn.hpp"
#include "unger/optim.hpp"

namespace unger {

struct FusionConfig {
  int d_c = 96;     // collaborative / integrated width
  int hidden = 256; // pooled-vector feed-forward width
  double tau = 1.0;
  double alpha = 1.0;
  bool align_include_positive = true;
  int history_window = 20;
  int batch_size = 256;
  int steps = 20000;
  AdamConfig adam;
  uint64_t seed = 2024;
};

// Stage I model: a trainable item table (the collaborative embeddings), a
// learned-query attention-pooling sequence encoder, and the modality
// adaptation layer that maps semantic rows into the collaborative space.
template <class Real>
class FusionModel {
 public:
  FusionModel(int n_items, int d_s, FusionConfig cfg)
      : n_items_(n_items), d_s_(d_s), cfg_(cfg) {
    const int d = cfg.d_c;
    Rng rng(derive_seed(cfg.seed, "fusion-init"));
    item_table = Param<Real>("item_table", TensorT<Real>::zeros({n_items, d}));
    init_xavier_uniform(item_table, n_items, d, rng);
    attn_key_w = Param<Real>("attn_key_w", TensorT<Real>::zeros({d, d}));
    init_xavier_uniform(attn_key_w, d, d, rng);
    attn_query = Param<Real>("attn_query", TensorT<Real>::zeros({1, d}));
    init_xavier_uniform(attn_query, d, 1, rng);
    ff1_w = Param<Real>("ff1_w", TensorT<Real>::zeros({cfg.hidden, d}));
    init_xavier_uniform(ff1_w, d, cfg.hidden, rng);
    ff1_b = Param<Real>("ff1_b", TensorT<Real>::zeros({cfg.hidden}));
    ff2_w = Param<Real>("ff2_w", TensorT<Real>::zeros({d, cfg.hidden}));
    init_xavier_uniform(ff2_w, cfg.hidden, d, rng);
    ff2_b = Param<Real>("ff2_b", TensorT<Real>::zeros({d}));
    adapt_w = Param<Real>("adapt_w", TensorT<Real>::zeros({d, d_s}));
    init_xavier_uniform(adapt_w, d_s, d, rng);
    adapt_b = Param<Real>("adapt_b", TensorT<Real>::zeros({d}));
    // conditioning starts as plain layer norm: gamma = 1, delta = 0
    cond_w = Param<Real>("cond_w", TensorT<Real>::zeros({2 * d, d}));
    cond_b = Param<Real>("cond_b", TensorT<Real>::zeros({2 * d}));
    for (int j = 0; j < d; ++j) cond_b.value.at(j) = Real(1);
  }

  int n_items() const { return n_items_; }
  int d_c() const { return cfg_.d_c; }
  int d_s() const { return d_s_; }
  const FusionConfig& config() const { return cfg_; }

  Param<Real> item_table, attn_key_w, attn_query, ff1_w, ff1_b, ff2_w, ff2_b;
  Param<Real> adapt_w, adapt_b, cond_w, cond_b;

  std::vector<Param<Real>*> params() {
    return {&item_table, &attn_key_w, &attn_query, &ff1_w, &ff1_b, &ff2_w, &ff2_b,
            &adapt_w,    &adapt_b,    &cond_w,     &cond_b};
  }
  std::vector<Param<Real>*> adaptation_params() {
    return {&adapt_w, &adapt_b, &cond_w, &cond_b};
  }

  struct Bound {
    Var<Real> table, attn_key_w, attn_query, ff1_w, ff1_b, ff2_w, ff2_b;
    Var<Real> adapt_w, adapt_b, cond_w, cond_b;
  };

  Bound bind(Graph<Real>& g, bool trainable = true) {
    return Bound{g.param(item_table, trainable),  g.param(attn_key_w, trainable),
                 g.param(attn_query, trainable),  g.param(ff1_w, trainable),
                 g.param(ff1_b, trainable),       g.param(ff2_w, trainable),
                 g.param(ff2_b, trainable),       g.param(adapt_w, trainable),
                 g.param(adapt_b, trainable),     g.param(cond_w, trainable),
                 g.param(cond_b, trainable)};
  }

  // Modality adaptation (AdaLN): h = W e + b; gamma/delta are linear in h;
  // output = gamma * (h - mu) / max(sigma, 1e-5) + delta.
  Var<Real> adapt_rows(Graph<Real>& g, Bound& b, Var<Real> rows) {
    if (rows.shape().back() != d_s_)
      fail("adapt: input dim " + std::to_string(rows.shape().back()) + " != semantic dim " +
           std::to_string(d_s_));
    auto h = add(matmul(rows, b.adapt_w, false, true), b.adapt_b);
    auto mu = mean_last(h);
    auto cent = sub(h, mu);
    auto var = mean_last(mul(cent, cent));
    auto sd = sqrt_floor(var, 1e-5);
    auto normed = div(cent, sd);
    auto gd = add(matmul(h, b.cond_w, false, true), b.cond_b);
    auto gamma = slice_last(gd, 0, cfg_.d_c);
    auto delta = slice_last(gd, cfg_.d_c, cfg_.d_c);
    return add(mul(gamma, normed), delta);
  }

  // Histories as a padded (B,T) index matrix -> attention-pooled user vectors.
  Var<Real> user_vectors(Graph<Real>& g, Bound& b,
                         const std::vector<std::vector<int>>& histories) {
    const int bsz = static_cast<int>(histories.size());
    int t = 0;
    for (const auto& h : histories) {
      if (h.empty()) fail("next_item_loss: empty history");
      t = std::max(t, static_cast<int>(h.size()));
    }
    std::vector<int> idx(static_cast<size_t>(bsz) * t, 0);
    TensorT<Real> mask = TensorT<Real>::zeros({bsz, t});
    for (int r = 0; r < bsz; ++r) {
      const auto& h = histories[static_cast<size_t>(r)];
      for (int j = 0; j < t; ++j) {
        if (j < static_cast<int>(h.size())) {
          idx[static_cast<size_t>(r) * t + j] = h[static_cast<size_t>(j)];
        } else {
          mask.at(r, j) = Real(-1e30);
        }
      }
    }
    auto emb = gather_rows(b.table, idx, {bsz, t});
    auto keys = matmul(emb, b.attn_key_w, false, true);
    auto logits = reshape(matmul(keys, b.attn_query, false, true), {bsz, t});
    auto weights = softmax_last(add(logits, g.input(mask, "history mask")));
    auto pooled = reshape(matmul(reshape(weights, {bsz, 1, t}), emb), {bsz, cfg_.d_c});
    auto hidden = relu(add(matmul(pooled, b.ff1_w, false, true), b.ff1_b));
    auto ffn = add(matmul(hidden, b.ff2_w, false, true), b.ff2_b);
    return add(ffn, pooled);
  }

  Var<Real> item_logits(Graph<Real>& g, Bound& b, Var<Real> users) {
    (void)g;
    return matmul(users, b.table, false, true);
  }

 private:
  int n_items_, d_s_;
  FusionConfig cfg_;
};

// InfoNCE over cosine similarities; positives on the diagonal, in-batch
// negatives elsewhere. The positive term sits in the denominator by default;
// the exclusive variant follows the printed form of the loss.
template <class Real>
Var<Real> align_loss(Graph<Real>& g, Var<Real> ec, Var<Real> et, double tau,
                     bool include_positive = true) {
  const int b = ec.shape()[0];
  if (b < 2) fail("align_loss: batch of " + std::to_string(b) + " has no negatives");
  if (tau <= 0.0) fail("align_loss: temperature must be positive");
  auto normalize = [&](Var<Real> x) {
    auto n = sqrt_floor(sum_last(mul(x, x)), 1e-12);
    return div(x, n);
  };
  auto cn = normalize(ec);
  auto tn = normalize(et);
  auto sims = scale(matmul(cn, tn, false, true), 1.0 / tau);
  std::vector<int> diag(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) diag[static_cast<size_t>(i)] = i;
  if (include_positive) return cross_entropy_mean(sims, diag);
  TensorT<Real> diag_mask = TensorT<Real>::zeros({b, b});
  for (int i = 0; i < b; ++i) diag_mask.at(i, i) = Real(-1e30);
  auto denom = reshape(lse_last(add(sims, g.input(diag_mask, "diag mask"))), {b});
  auto pos = take_per_row(sims, diag);
  return mean_all(sub(denom, pos));
}

// Mean cross-entropy of the next item over the full corpus.
template <class Real>
Var<Real> next_item_loss(FusionModel<Real>& m, Graph<Real>& g,
                         typename FusionModel<Real>::Bound& b,
                         const std::vector<std::vector<int>>& histories,
                         const std::vector<int>& targets) {
  auto users = m.user_vectors(g, b, histories);
  return cross_entropy_mean(m.item_logits(g, b, users), targets);
}

struct Stage1Curve {
  std::vector<double> seq_loss;
  std::vector<double> align_loss;
  std::vector<double> total_loss;
};

// Joint Stage I optimization: L_seq + alpha * L_align with Adam warmup.
// The alignment batch reuses the prediction batch's target items. With
// monitor_align the alignment loss is still evaluated (not optimized) when
// alpha == 0, which leaves the parameter trajectory bit-identical.
template <class Real>
Stage1Curve train_stage1(FusionModel<Real>& m, const InteractionCorpus& corpus,
                         const EmbeddingMatrix& semantic, bool monitor_align = false) {
  const FusionConfig& cfg = m.config();
  if (semantic.n_items != corpus.n_items())
    fail("train_stage1: semantic matrix rows != corpus items (bind it first)");
  const auto pairs = detail::training_pairs(corpus);
  TensorT<Real> es = semantic.as_tensor<Real>();
  Rng rng(derive_seed(cfg.seed, "stage1-batches"));
  Adam<Real> opt(m.params(), cfg.adam);
  Stage1Curve curve;
  std::vector<std::vector<int>> histories;
  std::vector<int> targets;
  for (int step = 0; step < cfg.steps; ++step) {
    detail::fill_batch(corpus, pairs, rng, cfg.batch_size, cfg.history_window, histories,
                       targets);
    Graph<Real> g;
    auto bound = m.bind(g);
    auto es_var = g.input(es, "semantic embeddings");
    auto l_seq = next_item_loss(m, g, bound, histories, targets);
    double seq_v = static_cast<double>(l_seq.value().data[0]);
    double align_v = 0.0;
    Var<Real> loss = l_seq;
    if (cfg.alpha != 0.0 || monitor_align) {
      auto ec = gather_rows(bound.table, targets, {cfg.batch_size});
      auto et = m.adapt_rows(g, bound, gather_rows(es_var, targets, {cfg.batch_size}));
      auto l_align = align_loss(g, ec, et, cfg.tau, cfg.align_include_positive);
      align_v = static_cast<double>(l_align.value().data[0]);
      if (cfg.alpha != 0.0) loss = add(l_seq, scale(l_align, cfg.alpha));
    }
    g.backward(loss);
    opt.step();
    curve.seq_loss.push_back(seq_v);
    curve.align_loss.push_back(align_v);
    curve.total_loss.push_back(seq_v + cfg.alpha * align_v);
  }
  return curve;
}

enum class IntegratedVariant { kTable, kMean };

// The integrated embeddings: by default the post-training item table (the
// alignment task has already pulled semantic knowledge into it); the mean
// variant averages the table with the adapted semantic rows.
template <class Real>
EmbeddingMatrix export_integrated(FusionModel<Real>& m, const EmbeddingMatrix& semantic,
                                  std::vector<std::string> tokens,
                                  IntegratedVariant variant = IntegratedVariant::kTable) {
  if (variant == IntegratedVariant::kTable)
    return EmbeddingMatrix::from_tensor(m.item_table.value, std::move(tokens));
  Graph<Real> g;
  auto bound = m.bind(g, false);
  auto et = m.adapt_rows(g, bound, g.input(semantic.as_tensor<Real>(), "semantic"));
  auto mean = scale(add(bound.table, et), 0.5);
  return EmbeddingMatrix::from_tensor(mean.value(), std::move(tokens));
}

}  // namespace unger
