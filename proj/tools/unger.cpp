// unger: two-stage generative recommender with a unified item code.
// Subcommands cover the whole pipeline: data preparation, Stage I fusion
// training, hierarchical residual quantization, Stage II generation training,
// constrained-beam recommendation, evaluation, dominance analysis, the
// unified-vs-dual cost benchmark, and the ablation grid.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>

#include "unger/pipeline.hpp"

namespace fs = std::filesystem;
using namespace unger;

namespace {

// Removes this invocation's outputs unless commit() ran, so failed
// subcommands leave no partial artifacts behind.
class OutputGuard {
 public:
  std::string track(const std::string& path) {
    tracked_.push_back(path);
    return path;
  }
  void commit() { committed_ = true; }
  ~OutputGuard() {
    if (committed_) return;
    for (const auto& p : tracked_) {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  }

 private:
  std::vector<std::string> tracked_;
  bool committed_ = false;
};

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir = ".";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON run configuration")->required();
  cmd->add_option("--set", args.sets, "override config values (key=value, dotted paths)");
  cmd->add_option("--out", args.out_dir, "output directory");
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

void write_manifest(const std::string& out_dir, const std::string& command,
                    const RunConfig& cfg, double wall_ms,
                    const std::vector<std::string>& outputs) {
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  Json j{{"command", command},
         {"config_hash", std::string(hash)},
         {"seed", cfg.seed},
         {"version", version_string()},
         {"wall_ms", wall_ms},
         {"config", config_to_json(cfg)},
         {"outputs", outputs}};
  write_json_file(out_dir + "/manifest_" + command + ".json", j);
}

InteractionCorpus load_corpus_artifact(const RunConfig& cfg) {
  if (cfg.paths.corpus.empty()) fail("config: paths.corpus is required for this command");
  // canonical corpus files are already filtered; re-filtering is idempotent
  return load_interactions(cfg.paths.corpus, cfg.min_core);
}

EmbeddingMatrix load_semantic_artifact(const RunConfig& cfg, const InteractionCorpus& corpus) {
  if (cfg.paths.semantic.empty()) fail("config: paths.semantic is required for this command");
  return bind_to_corpus(load_embeddings(cfg.paths.semantic), corpus);
}

int run_subcommand(const std::string& name, const CommonArgs& args) {
  RunConfig cfg = load_config(args.config_path, args.sets);
  fs::create_directories(args.out_dir);
  OutputGuard guard;
  Timer timer;
  std::vector<std::string> outputs;
  auto out = [&](const std::string& file) {
    outputs.push_back(file);
    return guard.track(args.out_dir + "/" + file);
  };

  if (name == "synth-data") {
    auto data = generate_synthetic(cfg.synthetic);
    save_interactions(data.corpus, out("corpus.tsv"));
    save_embeddings(out("semantic.unge"), data.semantic);
    guard.track(args.out_dir + "/semantic.unge.items.txt");
  } else if (name == "prepare-data") {
    if (cfg.paths.interactions.empty()) fail("config: paths.interactions is required");
    auto corpus = load_interactions(cfg.paths.interactions, cfg.min_core);
    if (corpus.n_dropped_users > 0)
      std::cerr << "warning: dropped " << corpus.n_dropped_users
                << " users with fewer than 3 interactions after filtering\n";
    save_interactions(corpus, out("corpus.tsv"));
    Json stats{{"n_users", corpus.n_users()},
               {"n_items", corpus.n_items()},
               {"n_interactions", corpus.n_interactions},
               {"n_dropped_users", corpus.n_dropped_users}};
    write_json_file(out("corpus_stats.json"), stats);
  } else if (name == "train-stage1") {
    auto corpus = load_corpus_artifact(cfg);
    auto semantic = load_semantic_artifact(cfg, corpus);
    auto s1 = run_stage1(cfg, corpus, semantic);
    guard.track(args.out_dir + "/fusion");
    outputs.push_back("fusion");
    save_fusion(args.out_dir + "/fusion", *s1.model, corpus.n_items(), semantic.dim);
    Json curve{{"seq_loss", s1.curve.seq_loss},
               {"align_loss", s1.curve.align_loss},
               {"total_loss", s1.curve.total_loss}};
    write_json_file(out("stage1_curve.json"), curve);
  } else if (name == "export-embeddings") {
    auto corpus = load_corpus_artifact(cfg);
    auto semantic = load_semantic_artifact(cfg, corpus);
    if (cfg.paths.fusion_dir.empty()) fail("config: paths.fusion_dir is required");
    auto model = load_fusion<float>(cfg.paths.fusion_dir);
    const auto variant = cfg.integrated_variant == "mean" ? IntegratedVariant::kMean
                                                          : IntegratedVariant::kTable;
    auto integrated = export_integrated(model, semantic, corpus.item_tokens, variant);
    save_embeddings(out("integrated.unge"), integrated);
    guard.track(args.out_dir + "/integrated.unge.items.txt");
  } else if (name == "quantize") {
    if (cfg.paths.integrated.empty()) fail("config: paths.integrated is required");
    auto integrated = load_embeddings(cfg.paths.integrated);
    auto q = quantize_fit(integrated, cfg.clusters, cfg.depth, cfg.seed);
    save_table(out("unicode_table.tsv"), q.table);
    guard.track(args.out_dir + "/codebooks");
    outputs.push_back("codebooks");
    fs::create_directories(args.out_dir + "/codebooks");
    save_codebooks(args.out_dir + "/codebooks", q.codebooks);
    Json manifest{{"K", cfg.clusters},
                  {"L", cfg.depth},
                  {"dim", integrated.dim},
                  {"seed", cfg.seed},
                  {"levels", q.codebooks.n_levels()},
                  {"table_width", q.table.width()},
                  {"quantization_error",
                   quantization_error(integrated, q.codebooks, q.table)}};
    write_json_file(out("quantizer.json"), manifest);
  } else if (name == "train-stage2") {
    auto corpus = load_corpus_artifact(cfg);
    if (cfg.paths.table.empty()) fail("config: paths.table is required");
    if (cfg.paths.integrated.empty()) fail("config: paths.integrated is required");
    auto table = bind_to_corpus(load_table(cfg.paths.table), corpus);
    auto integrated = bind_to_corpus(load_embeddings(cfg.paths.integrated), corpus);
    auto s2 = run_stage2(cfg, corpus, table, integrated);
    guard.track(args.out_dir + "/generator");
    outputs.push_back("generator");
    save_generator(args.out_dir + "/generator", *s2.model);
    Json curve{{"gen_loss", s2.curve.gen_loss},
               {"distill_loss", s2.curve.distill_loss},
               {"total_loss", s2.curve.total_loss}};
    write_json_file(out("stage2_curve.json"), curve);
  } else if (name == "recommend" || name == "evaluate") {
    auto corpus = load_corpus_artifact(cfg);
    if (cfg.paths.table.empty()) fail("config: paths.table is required");
    if (cfg.paths.generator_dir.empty()) fail("config: paths.generator_dir is required");
    auto table = bind_to_corpus(load_table(cfg.paths.table), corpus);
    auto model = load_generator<float>(cfg.paths.generator_dir);
    const auto split = cfg.eval_split == "valid" ? EvalSplit::kValid : EvalSplit::kTest;
    if (name == "recommend") {
      auto ranked = batch_recommend(model, table, corpus, split, cfg.beam_width,
                                    cfg.recommend_k, cfg.threads);
      Json j;
      j["k"] = cfg.recommend_k;
      j["beam_width"] = cfg.beam_width;
      j["split"] = cfg.eval_split;
      Json users = Json::object();
      for (int u = 0; u < corpus.n_users(); ++u) {
        Json list = Json::array();
        for (const auto& si : ranked[static_cast<size_t>(u)])
          list.push_back({{"item", corpus.item_tokens[static_cast<size_t>(si.item)]},
                          {"logprob", si.logprob}});
        users[corpus.user_tokens[static_cast<size_t>(u)]] = std::move(list);
      }
      j["users"] = std::move(users);
      write_json_file(out("rankings.json"), j);
    } else {
      auto rep = evaluate_model(cfg, model, table, corpus, split);
      write_json_file(out("metrics.json"), metrics_to_json(rep));
      std::ofstream txt(out("metrics.txt"), std::ios::binary);
      txt << metrics_table(rep);
      std::cout << metrics_table(rep);
    }
  } else if (name == "dominance") {
    if (cfg.paths.semantic.empty() || cfg.paths.collaborative.empty() ||
        cfg.paths.integrated.empty())
      fail("config: paths.semantic, paths.collaborative and paths.integrated are required");
    auto s = load_embeddings(cfg.paths.semantic);
    auto c = load_embeddings(cfg.paths.collaborative);
    auto e = load_embeddings(cfg.paths.integrated);
    auto rep = dominance_similarity(s, c, e, 10, cfg.seed);
    write_json_file(out("dominance.json"), dominance_to_json(rep));
    std::ofstream txt(out("dominance.txt"), std::ios::binary);
    char line[160];
    std::snprintf(line, sizeof(line), "%-16s%14s%20s\n", "measure", "semantic",
                  "collaborative");
    txt << line;
    std::snprintf(line, sizeof(line), "%-16s%14.4f%20.4f\n", "similarity",
                  rep.similarity_semantic, rep.similarity_collaborative);
    txt << line;
    std::snprintf(line, sizeof(line), "%-16s%14.6f%20.6f\n", "kl_to_final", rep.kl_s_e,
                  rep.kl_c_e);
    txt << line;
  } else if (name == "bench-cost") {
    auto corpus = load_corpus_artifact(cfg);
    if (cfg.paths.table.empty()) fail("config: paths.table is required");
    if (cfg.paths.generator_dir.empty()) fail("config: paths.generator_dir is required");
    auto table = bind_to_corpus(load_table(cfg.paths.table), corpus);
    auto model = load_generator<float>(cfg.paths.generator_dir);
    // the second stream defaults to the same model/table, which matches the
    // equal-setting comparison the analysis calls for
    auto table_b = cfg.paths.table2.empty()
                       ? table
                       : bind_to_corpus(load_table(cfg.paths.table2), corpus);
    auto model_b = cfg.paths.generator_dir2.empty()
                       ? load_generator<float>(cfg.paths.generator_dir)
                       : load_generator<float>(cfg.paths.generator_dir2);
    std::vector<std::vector<int>> queries;
    Rng rng(derive_seed(cfg.seed, "bench-queries"));
    for (int q = 0; q < cfg.bench_queries; ++q) {
      const int u = static_cast<int>(rng.below(static_cast<uint64_t>(corpus.n_users())));
      queries.push_back(split_history(corpus, u, EvalSplit::kTest));
    }
    auto uni = bench_cost_unified(model, table, queries, cfg.beam_width, cfg.recommend_k);
    auto dual = bench_cost_dual(model, table, model_b, table_b, queries, cfg.beam_width,
                                cfg.recommend_k);
    Json j{{"unified", cost_to_json(uni)},
           {"dual", cost_to_json(dual)},
           {"slowdown_dual_over_unified", dual.mean_ms / uni.mean_ms},
           {"storage_ratio", static_cast<double>(dual.table_bytes) /
                                 static_cast<double>(uni.table_bytes)}};
    write_json_file(out("cost.json"), j);
    std::cout << j.dump(2) << '\n';
  } else if (name == "ablate") {
    auto corpus = load_corpus_artifact(cfg);
    auto semantic = load_semantic_artifact(cfg, corpus);
    // collaborative embeddings are shared by two variants; fit them once
    auto collab = run_stage1(cfg, corpus, semantic, 0.0).integrated;
    Json rows = Json::object();
    std::ostringstream tbl;
    tbl << std::left << std::setw(20) << "variant";
    for (int k : cfg.eval_topk)
      tbl << std::right << std::setw(12) << ("recall@" + std::to_string(k));
    for (int k : cfg.eval_topk)
      tbl << std::right << std::setw(12) << ("ndcg@" + std::to_string(k));
    tbl << '\n';
    auto emit = [&](const std::string& label, const MetricReport& rep) {
      tbl << std::left << std::setw(20) << label << std::fixed << std::setprecision(6);
      for (int k : cfg.eval_topk) tbl << std::right << std::setw(12) << rep.recall_at.at(k);
      for (int k : cfg.eval_topk) tbl << std::right << std::setw(12) << rep.ndcg_at.at(k);
      tbl << '\n';
    };
    for (const std::string mode :
         {"semantic_only", "collaborative_only", "concat", "random_codes", "ours"}) {
      auto run = run_variant(cfg, corpus, semantic, mode, &collab);
      rows[mode] = metrics_to_json(run.metrics);
      emit(mode, run.metrics);
    }
    auto pop = popularity_metrics(
        corpus, cfg.eval_topk, cfg.eval_split == "valid" ? EvalSplit::kValid : EvalSplit::kTest);
    rows["popularity"] = metrics_to_json(pop);
    emit("popularity", pop);
    write_json_file(out("ablation.json"), rows);
    std::ofstream txt(out("ablation.txt"), std::ios::binary);
    txt << tbl.str();
    std::cout << tbl.str();
  } else {
    fail("unknown subcommand: " + name);
  }

  write_manifest(args.out_dir, name, cfg, timer.ms(), outputs);
  guard.track(args.out_dir + "/manifest_" + name + ".json");
  guard.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unger: unified-code generative recommendation pipeline"};
  app.require_subcommand(1);

  static const std::vector<std::string> kCommands{
      "prepare-data", "synth-data",   "train-stage1", "export-embeddings",
      "quantize",     "train-stage2", "recommend",    "evaluate",
      "dominance",    "bench-cost",   "ablate"};
  std::map<std::string, CommonArgs> args;
  for (const auto& name : kCommands) {
    auto* cmd = app.add_subcommand(name);
    add_common(cmd, args[name]);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& name : kCommands)
      if (app.get_subcommand(name)->parsed()) return run_subcommand(name, args[name]);
    std::cerr << "error: no subcommand selected\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
