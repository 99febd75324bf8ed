#pragma once

#include "unger/corpus.hpp"
#include "unger/embedding.hpp"
#include "unger/nn.hpp"
#include "unger/optim.hpp"
#include "unger/quantizer.hpp"

namespace unger {

struct GenConfig {
  int d_model = 96;
  int hidden = 256;
  int heads = 6;
  int enc_layers = 1;
  int dec_layers = 4;
  int history_window = 20;  // items; each contributes `width` code tokens
  int batch_size = 256;
  int steps = 20000;
  double beta = 1.0;
  int n_neg = 128;
  AdamConfig adam;
  uint64_t seed = 2024;
};

// Stage II model: an encoder over flattened history unicode sequences and a
// causal decoder that emits one code per level through level-specific heads.
// Vocabularies are level-specific; the decoder carries BOS and the learnable
// distillation token, the encoder a PAD token.
template <class Real>
class GenModel {
 public:
  GenModel(std::vector<int> level_sizes, int d_c, GenConfig cfg)
      : levels_(std::move(level_sizes)), d_c_(d_c), cfg_(cfg) {
    if (levels_.empty()) fail("generator: no code levels");
    for (int k : levels_)
      if (k < 1) fail("generator: empty level vocabulary");
    offsets_.resize(levels_.size());
    int total = 0;
    for (size_t l = 0; l < levels_.size(); ++l) {
      offsets_[l] = total;
      total += levels_[l];
    }
    total_codes_ = total;

    const int d = cfg.d_model;
    max_enc_tokens_ = cfg.history_window * width();
    Rng rng(derive_seed(cfg.seed, "gen-init"));
    auto mat = [&](const std::string& name, int r, int c, int fi, int fo) {
      Param<Real> p(name, TensorT<Real>::zeros({r, c}));
      init_xavier_uniform(p, fi, fo, rng);
      return p;
    };
    auto vec = [&](const std::string& name, int n) {
      return Param<Real>(name, TensorT<Real>::zeros({n}));
    };
    auto ones = [&](const std::string& name, int n) {
      return Param<Real>(name, TensorT<Real>::full({n}, Real(1)));
    };

    enc_tok = mat("enc_tok", 1 + total, d, 1 + total, d);
    enc_pos = mat("enc_pos", max_enc_tokens_, d, max_enc_tokens_, d);
    dec_tok = mat("dec_tok", 2 + total, d, 2 + total, d);
    dec_pos = mat("dec_pos", width() + 2, d, width() + 2, d);

    auto attn = [&](const std::string& p) {
      return AttnWeights<Real>{mat(p + ".wq", d, d, d, d), mat(p + ".wk", d, d, d, d),
                               mat(p + ".wv", d, d, d, d), mat(p + ".wo", d, d, d, d)};
    };
    for (int l = 0; l < cfg.enc_layers; ++l) {
      const std::string p = "enc" + std::to_string(l);
      enc_layers.push_back(EncLayer{attn(p + ".self"), ones(p + ".ln1_g", d),
                                    vec(p + ".ln1_b", d),
                                    mat(p + ".ff1_w", cfg.hidden, d, d, cfg.hidden),
                                    vec(p + ".ff1_b", cfg.hidden),
                                    mat(p + ".ff2_w", d, cfg.hidden, cfg.hidden, d),
                                    vec(p + ".ff2_b", d), ones(p + ".ln2_g", d),
                                    vec(p + ".ln2_b", d)});
    }
    enc_final_g = ones("enc_final_g", d);
    enc_final_b = vec("enc_final_b", d);
    for (int l = 0; l < cfg.dec_layers; ++l) {
      const std::string p = "dec" + std::to_string(l);
      dec_layers.push_back(DecLayer{attn(p + ".self"), attn(p + ".cross"),
                                    ones(p + ".ln1_g", d), vec(p + ".ln1_b", d),
                                    ones(p + ".ln2_g", d), vec(p + ".ln2_b", d),
                                    mat(p + ".ff1_w", cfg.hidden, d, d, cfg.hidden),
                                    vec(p + ".ff1_b", cfg.hidden),
                                    mat(p + ".ff2_w", d, cfg.hidden, cfg.hidden, d),
                                    vec(p + ".ff2_b", d), ones(p + ".ln3_g", d),
                                    vec(p + ".ln3_b", d)});
    }
    dec_final_g = ones("dec_final_g", d);
    dec_final_b = vec("dec_final_b", d);
    for (size_t l = 0; l < levels_.size(); ++l) {
      heads_w.push_back(mat("head" + std::to_string(l) + "_w", levels_[l], d, d, levels_[l]));
      heads_b.push_back(vec("head" + std::to_string(l) + "_b", levels_[l]));
    }
    distill_w = mat("distill_w", d_c, d, d, d_c);
    distill_b = vec("distill_b", d_c);
  }

  static GenModel from_table(const UnicodeTable& t, int d_c, GenConfig cfg) {
    if (!t.uniform_width())
      fail("generator: unicode table has ragged code widths; Stage II needs one width");
    std::vector<int> sizes;
    for (int l = 0; l < t.width(); ++l) sizes.push_back(t.level_vocab(l));
    return GenModel(std::move(sizes), d_c, cfg);
  }

  int width() const { return static_cast<int>(levels_.size()); }
  int level_size(int l) const { return levels_[static_cast<size_t>(l)]; }
  const std::vector<int>& level_sizes() const { return levels_; }
  int d_c() const { return d_c_; }
  int max_enc_tokens() const { return max_enc_tokens_; }
  const GenConfig& config() const { return cfg_; }

  int enc_token_id(int level, int code) const { return 1 + offsets_[static_cast<size_t>(level)] + code; }
  int dec_token_id(int level, int code) const { return 1 + offsets_[static_cast<size_t>(level)] + code; }
  static constexpr int kPad = 0;
  static constexpr int kBos = 0;
  int cdis_token() const { return 1 + total_codes_; }

  struct EncLayer {
    AttnWeights<Real> self;
    Param<Real> ln1_g, ln1_b;
    Param<Real> ff1_w, ff1_b, ff2_w, ff2_b;
    Param<Real> ln2_g, ln2_b;
  };
  struct DecLayer {
    AttnWeights<Real> self, cross;
    Param<Real> ln1_g, ln1_b, ln2_g, ln2_b;
    Param<Real> ff1_w, ff1_b, ff2_w, ff2_b;
    Param<Real> ln3_g, ln3_b;
  };

  Param<Real> enc_tok, enc_pos, dec_tok, dec_pos;
  std::vector<EncLayer> enc_layers;
  Param<Real> enc_final_g, enc_final_b;
  std::vector<DecLayer> dec_layers;
  Param<Real> dec_final_g, dec_final_b;
  std::vector<Param<Real>> heads_w, heads_b;
  Param<Real> distill_w, distill_b;

  std::vector<Param<Real>*> params() {
    std::vector<Param<Real>*> out{&enc_tok, &enc_pos, &dec_tok, &dec_pos};
    auto attn = [&](AttnWeights<Real>& a) {
      out.push_back(&a.wq);
      out.push_back(&a.wk);
      out.push_back(&a.wv);
      out.push_back(&a.wo);
    };
    for (auto& l : enc_layers) {
      attn(l.self);
      for (auto* p : {&l.ln1_g, &l.ln1_b, &l.ff1_w, &l.ff1_b, &l.ff2_w, &l.ff2_b, &l.ln2_g,
                      &l.ln2_b})
        out.push_back(p);
    }
    out.push_back(&enc_final_g);
    out.push_back(&enc_final_b);
    for (auto& l : dec_layers) {
      attn(l.self);
      attn(l.cross);
      for (auto* p : {&l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b, &l.ff1_w, &l.ff1_b, &l.ff2_w,
                      &l.ff2_b, &l.ln3_g, &l.ln3_b})
        out.push_back(p);
    }
    out.push_back(&dec_final_g);
    out.push_back(&dec_final_b);
    for (size_t l = 0; l < heads_w.size(); ++l) {
      out.push_back(&heads_w[l]);
      out.push_back(&heads_b[l]);
    }
    out.push_back(&distill_w);
    out.push_back(&distill_b);
    return out;
  }

  // --- graph builders (shared by training and beam decoding) ---

  struct EncoderBatch {
    std::vector<int> tokens;               // (B,S) flattened, PAD = 0
    std::vector<std::vector<bool>> valid;  // (B,S)
    int b = 0, s = 0;
  };

  // Flattens the last `history_window` items of each history into code tokens.
  EncoderBatch make_encoder_batch(const std::vector<std::vector<int>>& histories,
                                  const UnicodeTable& table) const {
    EncoderBatch eb;
    eb.b = static_cast<int>(histories.size());
    const int w = width();
    int s = 0;
    std::vector<std::vector<int>> kept(histories.size());
    for (size_t r = 0; r < histories.size(); ++r) {
      const auto& h = histories[r];
      if (h.empty()) fail("encode: empty history");
      const int take = std::min<int>(cfg_.history_window, static_cast<int>(h.size()));
      kept[r].assign(h.end() - take, h.end());
      s = std::max(s, take * w);
    }
    eb.s = s;
    eb.tokens.assign(static_cast<size_t>(eb.b) * s, kPad);
    eb.valid.assign(static_cast<size_t>(eb.b), std::vector<bool>(static_cast<size_t>(s), false));
    for (size_t r = 0; r < kept.size(); ++r) {
      int pos = 0;
      for (int item : kept[r]) {
        if (item < 0 || item >= table.n_items()) fail("encode: item outside the table");
        const auto& code = table.codes[static_cast<size_t>(item)];
        for (int l = 0; l < w; ++l) {
          const int c = code[static_cast<size_t>(l)];
          if (c >= levels_[static_cast<size_t>(l)])
            fail("encode: code " + std::to_string(c) + " outside level " + std::to_string(l) +
                 " vocabulary");
          eb.tokens[r * static_cast<size_t>(s) + pos] = enc_token_id(l, c);
          eb.valid[r][static_cast<size_t>(pos)] = true;
          ++pos;
        }
      }
    }
    return eb;
  }

  struct Bound {
    Graph<Real>* g = nullptr;
    bool trainable = true;
    std::unordered_map<const Param<Real>*, Var<Real>> vars;
    Var<Real> get(Param<Real>& p) {
      auto it = vars.find(&p);
      if (it != vars.end()) return it->second;
      auto v = g->param(p, trainable);
      vars.emplace(&p, v);
      return v;
    }
  };

  Bound bind(Graph<Real>& g, bool trainable = true) { return Bound{&g, trainable, {}}; }

  Var<Real> layer_norm_p(Bound& b, Var<Real> x, Param<Real>& gp, Param<Real>& bp) {
    return layer_norm(x, b.get(gp), b.get(bp));
  }

  Var<Real> ffn(Bound& b, Var<Real> x, Param<Real>& w1, Param<Real>& b1, Param<Real>& w2,
                Param<Real>& b2) {
    auto h = relu(add(matmul(x, b.get(w1), false, true), b.get(b1)));
    return add(matmul(h, b.get(w2), false, true), b.get(b2));
  }

  Var<Real> mha(Graph<Real>& g, Bound& b, Var<Real> xq, Var<Real> xkv, AttnWeights<Real>& w,
                Var<Real>* mask) {
    const int d = cfg_.d_model;
    const int dh = d / cfg_.heads;
    auto q = matmul(xq, b.get(w.wq), false, true);
    auto k = matmul(xkv, b.get(w.wk), false, true);
    auto v = matmul(xkv, b.get(w.wv), false, true);
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var<Real>> hs;
    for (int h = 0; h < cfg_.heads; ++h)
      hs.push_back(attention(slice_last(q, h * dh, dh), slice_last(k, h * dh, dh),
                             slice_last(v, h * dh, dh), mask, scl));
    return matmul(concat_last(hs), b.get(w.wo), false, true);
  }

  // Encoder stack over a prepared batch; returns (B,S,d).
  Var<Real> encode(Graph<Real>& g, Bound& b, const EncoderBatch& eb) {
    bool any_valid = false;
    for (const auto& row : eb.valid)
      for (bool v : row) any_valid = any_valid || v;
    if (!any_valid) fail("encode: all positions are PAD");
    if (eb.s > max_enc_tokens_)
      fail("encode: " + std::to_string(eb.s) + " tokens exceed the positional table (" +
           std::to_string(max_enc_tokens_) + ")");
    auto x = gather_rows(b.get(enc_tok), eb.tokens, {eb.b, eb.s});
    std::vector<int> iota(static_cast<size_t>(eb.s));
    for (int i = 0; i < eb.s; ++i) iota[static_cast<size_t>(i)] = i;
    x = add(x, gather_rows(b.get(enc_pos), iota, {eb.s}));
    auto mask = g.input(key_padding_mask<Real>(eb.valid, eb.s), "pad mask");
    for (auto& l : enc_layers) {
      auto h = layer_norm_p(b, x, l.ln1_g, l.ln1_b);
      x = add(x, mha(g, b, h, h, l.self, &mask));
      auto h2 = layer_norm_p(b, x, l.ln2_g, l.ln2_b);
      x = add(x, ffn(b, h2, l.ff1_w, l.ff1_b, l.ff2_w, l.ff2_b));
    }
    return layer_norm_p(b, x, enc_final_g, enc_final_b);
  }

  // Decoder stack. dec_tokens is a (B,T) id matrix; h_valid masks encoder
  // positions for cross-attention. Returns (B,T,d).
  Var<Real> decode(Graph<Real>& g, Bound& b, Var<Real> h_enc,
                   const std::vector<std::vector<bool>>& h_valid,
                   const std::vector<int>& dec_tokens, int t) {
    const int bsz = h_enc.shape()[0];
    auto x = gather_rows(b.get(dec_tok), dec_tokens, {bsz, t});
    std::vector<int> iota(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) iota[static_cast<size_t>(i)] = i;
    x = add(x, gather_rows(b.get(dec_pos), iota, {t}));
    auto causal = g.input(causal_mask<Real>(t), "causal mask");
    auto cross = g.input(key_padding_mask<Real>(h_valid, t), "cross pad mask");
    for (auto& l : dec_layers) {
      auto h = layer_norm_p(b, x, l.ln1_g, l.ln1_b);
      x = add(x, mha(g, b, h, h, l.self, &causal));
      auto h2 = layer_norm_p(b, x, l.ln2_g, l.ln2_b);
      x = add(x, mha(g, b, h2, h_enc, l.cross, &cross));
      auto h3 = layer_norm_p(b, x, l.ln3_g, l.ln3_b);
      x = add(x, ffn(b, h3, l.ff1_w, l.ff1_b, l.ff2_w, l.ff2_b));
    }
    return layer_norm_p(b, x, dec_final_g, dec_final_b);
  }

  // Logits for level l from decoder position l (input [BOS, c_1..c_{l-1}] ...).
  Var<Real> level_logits(Bound& b, Var<Real> hidden, int level) {
    auto h = select_mid(hidden, level);
    return add(matmul(h, b.get(heads_w[static_cast<size_t>(level)]), false, true),
               b.get(heads_b[static_cast<size_t>(level)]));
  }

  Var<Real> distill_vector(Bound& b, Var<Real> hidden, int cdis_position) {
    auto h = select_mid(hidden, cdis_position);
    return add(matmul(h, b.get(distill_w), false, true), b.get(distill_b));
  }

  // Decoder token ids [BOS, c_1..c_L, c_dis] for a batch of full codes.
  std::vector<int> teacher_tokens(const std::vector<const std::vector<int>*>& codes,
                                  bool with_cdis) const {
    const int w = width();
    const int t = w + 1 + (with_cdis ? 1 : 0);
    std::vector<int> out;
    out.reserve(codes.size() * static_cast<size_t>(t));
    for (const auto* code : codes) {
      if (static_cast<int>(code->size()) != w) fail("generator: code width mismatch");
      out.push_back(kBos);
      for (int l = 0; l < w; ++l) {
        const int c = (*code)[static_cast<size_t>(l)];
        if (c < 0 || c >= levels_[static_cast<size_t>(l)])
          fail("generator: code " + std::to_string(c) + " outside level " +
               std::to_string(l) + " vocabulary of " + std::to_string(levels_[static_cast<size_t>(l)]));
        out.push_back(dec_token_id(l, c));
      }
      if (with_cdis) out.push_back(cdis_token());
    }
    return out;
  }

 private:
  std::vector<int> levels_;
  std::vector<int> offsets_;
  int total_codes_ = 0;
  int d_c_;
  int max_enc_tokens_ = 0;
  GenConfig cfg_;
};

// Mean over levels of the per-level next-code cross-entropy.
template <class Real>
Var<Real> gen_loss(GenModel<Real>& m, Graph<Real>& g, typename GenModel<Real>::Bound& b,
                   Var<Real> hidden, const std::vector<std::vector<int>>& target_codes) {
  const int w = m.width();
  Var<Real> total;
  for (int l = 0; l < w; ++l) {
    std::vector<int> tl;
    tl.reserve(target_codes.size());
    for (const auto& c : target_codes) tl.push_back(c[static_cast<size_t>(l)]);
    auto ce = cross_entropy_mean(m.level_logits(b, hidden, l), tl);
    total = l == 0 ? ce : add(total, ce);
  }
  return scale(total, 1.0 / w);
}

// InfoNCE between the distillation-token output (projected to d_c) and the
// target item's integrated embedding, against uniformly sampled negatives.
template <class Real>
Var<Real> distill_loss(GenModel<Real>& m, Graph<Real>& g, typename GenModel<Real>::Bound& b,
                       Var<Real> hidden, const std::vector<int>& target_items,
                       const std::vector<std::vector<int>>& negatives,
                       const EmbeddingMatrix& integrated) {
  const int bsz = static_cast<int>(target_items.size());
  if (integrated.dim != m.d_c())
    fail("distill_loss: integrated dim " + std::to_string(integrated.dim) +
         " != model d_c " + std::to_string(m.d_c()));
  const int nn = static_cast<int>(negatives[0].size());
  if (nn < 1) fail("distill_loss: need at least one negative");
  auto chat = m.distill_vector(b, hidden, m.width() + 1);  // (B, d_c)
  TensorT<Real> cand = TensorT<Real>::zeros({bsz, 1 + nn, m.d_c()});
  for (int r = 0; r < bsz; ++r) {
    const float* pos = integrated.row(target_items[static_cast<size_t>(r)]);
    for (int j = 0; j < m.d_c(); ++j) cand.at(r, 0, j) = static_cast<Real>(pos[j]);
    for (int k = 0; k < nn; ++k) {
      const float* neg = integrated.row(negatives[static_cast<size_t>(r)][static_cast<size_t>(k)]);
      for (int j = 0; j < m.d_c(); ++j) cand.at(r, 1 + k, j) = static_cast<Real>(neg[j]);
    }
  }
  auto logits = reshape(matmul(g.input(cand, "distill candidates"),
                               reshape(chat, {bsz, m.d_c(), 1})),
                        {bsz, 1 + nn});
  return cross_entropy_mean(logits, std::vector<int>(static_cast<size_t>(bsz), 0));
}

// Uniform negatives excluding the target; without replacement, capped at the
// corpus size minus one.
inline std::vector<int> sample_negatives(int n_items, int target, int n_neg, Rng& rng) {
  const int nn = std::min(n_neg, n_items - 1);
  if (nn < 1) fail("sample_negatives: corpus too small for any negative");
  std::vector<int> pool(static_cast<size_t>(n_items - 1));
  for (int i = 0, j = 0; i < n_items; ++i)
    if (i != target) pool[static_cast<size_t>(j++)] = i;
  for (int i = 0; i < nn; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(pool.size() - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(nn));
  return pool;
}

struct Stage2Curve {
  std::vector<double> gen_loss;
  std::vector<double> distill_loss;
  std::vector<double> total_loss;
};

// Joint Stage II optimization: L_gen + beta * L_distillation over
// (history window, next item) pairs from every user's train prefix.
template <class Real>
Stage2Curve train_stage2(GenModel<Real>& m, const InteractionCorpus& corpus,
                         const UnicodeTable& table, const EmbeddingMatrix& integrated,
                         bool monitor_distill = false) {
  const GenConfig& cfg = m.config();
  if (table.n_items() != corpus.n_items())
    fail("train_stage2: unicode table does not cover the corpus (bind it first)");
  if (cfg.beta != 0.0 && integrated.n_items != corpus.n_items())
    fail("train_stage2: integrated embeddings do not cover the corpus");
  const auto pairs = detail::training_pairs(corpus);
  Rng rng(derive_seed(cfg.seed, "stage2-batches"));
  Rng neg_rng(derive_seed(cfg.seed, "stage2-negatives"));
  Adam<Real> opt(m.params(), cfg.adam);
  Stage2Curve curve;
  std::vector<std::vector<int>> histories;
  std::vector<int> targets;
  const bool want_distill = cfg.beta != 0.0 || monitor_distill;
  for (int step = 0; step < cfg.steps; ++step) {
    detail::fill_batch(corpus, pairs, rng, cfg.batch_size, cfg.history_window, histories,
                       targets);
    Graph<Real> g;
    auto bound = m.bind(g);
    auto eb = m.make_encoder_batch(histories, table);
    auto h = m.encode(g, bound, eb);
    std::vector<const std::vector<int>*> codes;
    codes.reserve(targets.size());
    for (int t : targets) codes.push_back(&table.codes[static_cast<size_t>(t)]);
    auto toks = m.teacher_tokens(codes, true);
    auto hidden = m.decode(g, bound, h, eb.valid, toks, m.width() + 2);
    std::vector<std::vector<int>> target_codes;
    target_codes.reserve(codes.size());
    for (const auto* c : codes) target_codes.push_back(*c);
    auto l_gen = gen_loss(m, g, bound, hidden, target_codes);
    double gen_v = static_cast<double>(l_gen.value().data[0]);
    double dis_v = 0.0;
    Var<Real> loss = l_gen;
    if (want_distill) {
      std::vector<std::vector<int>> negatives;
      negatives.reserve(targets.size());
      for (int t : targets)
        negatives.push_back(sample_negatives(corpus.n_items(), t, cfg.n_neg, neg_rng));
      auto l_dis = distill_loss(m, g, bound, hidden, targets, negatives, integrated);
      dis_v = static_cast<double>(l_dis.value().data[0]);
      if (cfg.beta != 0.0) loss = add(l_gen, scale(l_dis, cfg.beta));
    }
    g.backward(loss);
    opt.step();
    curve.gen_loss.push_back(gen_v);
    curve.distill_loss.push_back(dis_v);
    curve.total_loss.push_back(gen_v + cfg.beta * dis_v);
  }
  return curve;
}

}  // namespace unger
