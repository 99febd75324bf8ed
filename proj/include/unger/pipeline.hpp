#pragma once

#include "unger/bench.hpp"
#include "unger/checkpoint.hpp"
#include "unger/dominance.hpp"
#include "unger/metrics.hpp"

namespace unger {

// Items ranked by train-prefix frequency (ties toward the lower index); the
// same list serves every user.
inline RankedList popularity_ranking(const InteractionCorpus& c, int k) {
  std::vector<int64_t> counts(static_cast<size_t>(c.n_items()), 0);
  for (int u = 0; u < c.n_users(); ++u)
    for (int t = 0; t < c.train_len(u); ++t)
      ++counts[static_cast<size_t>(c.sequence(u)[static_cast<size_t>(t)])];
  std::vector<int> order(static_cast<size_t>(c.n_items()));
  for (int i = 0; i < c.n_items(); ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<size_t>(a)] > counts[static_cast<size_t>(b)];
  });
  RankedList out;
  for (int i = 0; i < k && i < c.n_items(); ++i)
    out.push_back({order[static_cast<size_t>(i)],
                   -static_cast<double>(i)});  // descending pseudo-scores
  return out;
}

inline std::vector<int> split_truth(const InteractionCorpus& c, EvalSplit split) {
  std::vector<int> truth(static_cast<size_t>(c.n_users()));
  for (int u = 0; u < c.n_users(); ++u)
    truth[static_cast<size_t>(u)] = split == EvalSplit::kTest ? c.test_item(u) : c.valid_item(u);
  return truth;
}

inline MetricReport popularity_metrics(const InteractionCorpus& c, const std::vector<int>& ks,
                                       EvalSplit split) {
  int max_k = 0;
  for (int k : ks) max_k = std::max(max_k, k);
  auto list = popularity_ranking(c, max_k);
  std::vector<RankedList> ranked(static_cast<size_t>(c.n_users()), list);
  return metric_report(ranked, split_truth(c, split), ks);
}

// Stage I for the requested ablation mode; returns the matrix that feeds the
// quantizer plus (for the fused modes) the trained model.
struct Stage1Output {
  EmbeddingMatrix integrated;
  Stage1Curve curve;
  std::unique_ptr<FusionModel<float>> model;
};

inline Stage1Output run_stage1(const RunConfig& cfg, const InteractionCorpus& corpus,
                               const EmbeddingMatrix& semantic, double alpha_override = -1.0,
                               bool monitor_align = false) {
  FusionConfig f = cfg.fusion_config();
  if (alpha_override >= 0.0) f.alpha = alpha_override;
  Stage1Output out;
  out.model = std::make_unique<FusionModel<float>>(corpus.n_items(), semantic.dim, f);
  out.curve = train_stage1(*out.model, corpus, semantic, monitor_align);
  const auto variant = cfg.integrated_variant == "mean" ? IntegratedVariant::kMean
                                                        : IntegratedVariant::kTable;
  out.integrated = export_integrated(*out.model, semantic, corpus.item_tokens, variant);
  return out;
}

struct Stage2Output {
  std::unique_ptr<GenModel<float>> model;
  Stage2Curve curve;
};

inline Stage2Output run_stage2(const RunConfig& cfg, const InteractionCorpus& corpus,
                               const UnicodeTable& table, const EmbeddingMatrix& integrated) {
  GenConfig g = cfg.gen_config();
  g.d_model = cfg.embedding_dim;
  Stage2Output out;
  out.model =
      std::make_unique<GenModel<float>>(GenModel<float>::from_table(table, integrated.dim, g));
  out.curve = train_stage2(*out.model, corpus, table, integrated);
  return out;
}

inline MetricReport evaluate_model(const RunConfig& cfg, GenModel<float>& model,
                                   const UnicodeTable& table, const InteractionCorpus& corpus,
                                   EvalSplit split) {
  auto ranked = batch_recommend(model, table, corpus, split, cfg.beam_width,
                                std::max(cfg.recommend_k, *std::max_element(
                                                              cfg.eval_topk.begin(),
                                                              cfg.eval_topk.end())),
                                cfg.threads);
  return metric_report(ranked, split_truth(corpus, split), cfg.eval_topk);
}

// Full pipeline for one ablation mode. `collaborative`, when already trained
// for another mode, avoids re-running the alpha=0 fit that the concat mode
// needs.
struct VariantRun {
  std::string mode;
  EmbeddingMatrix integrated;  // what the quantizer consumed
  MetricReport metrics;
  double quant_error = 0.0;
};

inline VariantRun run_variant(const RunConfig& cfg, const InteractionCorpus& corpus,
                              const EmbeddingMatrix& semantic, const std::string& mode,
                              const EmbeddingMatrix* collaborative = nullptr) {
  VariantRun out;
  out.mode = mode;
  if (mode == "semantic_only") {
    out.integrated = semantic;
  } else if (mode == "collaborative_only") {
    out.integrated =
        collaborative ? *collaborative : run_stage1(cfg, corpus, semantic, 0.0).integrated;
  } else if (mode == "concat") {
    EmbeddingMatrix collab =
        collaborative ? *collaborative : run_stage1(cfg, corpus, semantic, 0.0).integrated;
    out.integrated = concat_baseline(semantic, collab);
  } else if (mode == "ours" || mode == "random_codes") {
    out.integrated = run_stage1(cfg, corpus, semantic).integrated;
  } else {
    fail("unknown ablation mode: " + mode);
  }

  UnicodeTable table;
  if (mode == "random_codes") {
    table = random_assignment(corpus.n_items(), cfg.clusters, cfg.depth, cfg.seed);
    table.tokens = corpus.item_tokens;
  } else {
    auto q = quantize_fit(out.integrated, cfg.clusters, cfg.depth, cfg.seed);
    out.quant_error = quantization_error(out.integrated, q.codebooks, q.table);
    table = std::move(q.table);
  }
  auto s2 = run_stage2(cfg, corpus, table, out.integrated);
  out.metrics = evaluate_model(cfg, *s2.model, table, corpus,
                               cfg.eval_split == "valid" ? EvalSplit::kValid : EvalSplit::kTest);
  return out;
}

inline Json metrics_to_json(const MetricReport& rep) {
  Json j;
  for (const auto& [k, v] : rep.recall_at) j["recall@" + std::to_string(k)] = v;
  for (const auto& [k, v] : rep.ndcg_at) j["ndcg@" + std::to_string(k)] = v;
  j["n_users"] = rep.n_users;
  j["n_missing"] = rep.n_missing;
  return j;
}

inline Json dominance_to_json(const DominanceReport& rep) {
  return Json{{"similarity_semantic", rep.similarity_semantic},
              {"similarity_collaborative", rep.similarity_collaborative},
              {"kl_s_e", rep.kl_s_e},
              {"kl_c_e", rep.kl_c_e},
              {"n_clusters", rep.n_clusters}};
}

inline Json cost_to_json(const CostReport& r) {
  return Json{{"mode", r.mode},
              {"n_queries", r.n_queries},
              {"beam_width", r.beam_width},
              {"mean_ms", r.mean_ms},
              {"p50_ms", r.p50_ms},
              {"p95_ms", r.p95_ms},
              {"decoder_forwards", r.decoder_forwards},
              {"table_bytes", r.table_bytes}};
}

}  // namespace unger
