#pragma once

#include <json.hpp>

#include "unger/fusion.hpp"
#include "unger/generator.hpp"
#include "unger/synthetic.hpp"

namespace unger {

using Json = nlohmann::json;

// One JSON document drives every subcommand; unknown keys are rejected and
// every field is validated on load. `--set key=value` overrides use dotted
// paths into this structure.
struct RunConfig {
  uint64_t seed = 2024;
  int embedding_dim = 96;  // d_c
  int hidden_size = 256;
  int heads = 6;
  int encoder_layers = 1;
  int decoder_layers = 4;
  int clusters = 256;  // K
  int depth = 4;       // L
  double learning_rate = 1e-3;
  int batch_size = 256;
  int stage1_steps = 20000;
  int stage2_steps = 20000;
  double dropout = 0.0;
  int beam_width = 100;
  double weight_decay = 1e-7;
  int warmup_steps = 2000;
  double warmup_init_lr = 1e-7;
  double alpha = 1.0;
  double beta = 1.0;
  double tau = 1.0;
  int n_neg = 128;
  int history_window = 20;
  int min_core = 5;
  std::vector<int> eval_topk{10, 20};
  int recommend_k = 10;
  std::string eval_split = "test";  // test | valid
  std::string ablation = "ours";
  std::string integrated_variant = "table";  // table | mean
  bool align_include_positive = true;
  int bench_queries = 200;
  int threads = 0;  // 0 -> UNGER_THREADS (default 1)
  SyntheticSpec synthetic;

  struct Paths {
    std::string interactions;
    std::string corpus;
    std::string semantic;
    std::string fusion_dir;
    std::string integrated;
    std::string collaborative;
    std::string quantizer_dir;
    std::string table;
    std::string generator_dir;
    std::string generator_dir2;
    std::string table2;
    std::string rankings;
  } paths;

  FusionConfig fusion_config() const {
    FusionConfig f;
    f.d_c = embedding_dim;
    f.hidden = hidden_size;
    f.tau = tau;
    f.alpha = alpha;
    f.align_include_positive = align_include_positive;
    f.history_window = history_window;
    f.batch_size = batch_size;
    f.steps = stage1_steps;
    f.adam = adam_config();
    f.seed = seed;
    return f;
  }

  GenConfig gen_config() const {
    GenConfig g;
    g.d_model = embedding_dim;
    g.hidden = hidden_size;
    g.heads = heads;
    g.enc_layers = encoder_layers;
    g.dec_layers = decoder_layers;
    g.history_window = history_window;
    g.batch_size = batch_size;
    g.steps = stage2_steps;
    g.beta = beta;
    g.n_neg = n_neg;
    g.adam = adam_config();
    g.seed = seed;
    return g;
  }

  AdamConfig adam_config() const {
    AdamConfig a;
    a.learning_rate = learning_rate;
    a.weight_decay = weight_decay;
    a.warmup_steps = warmup_steps;
    a.warmup_init_lr = warmup_init_lr;
    return a;
  }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v < 1) fail(std::string("config: ") + what + " must be >= 1");
    };
    positive(embedding_dim, "embedding_dim");
    positive(hidden_size, "hidden_size");
    positive(heads, "heads");
    positive(encoder_layers, "encoder_layers");
    positive(decoder_layers, "decoder_layers");
    positive(clusters, "clusters");
    positive(depth, "depth");
    positive(batch_size, "batch_size");
    positive(stage1_steps, "stage1_steps");
    positive(stage2_steps, "stage2_steps");
    positive(beam_width, "beam_width");
    positive(n_neg, "n_neg");
    positive(history_window, "history_window");
    positive(recommend_k, "recommend_k");
    positive(bench_queries, "bench_queries");
    if (embedding_dim % heads != 0)
      fail("config: embedding_dim must be divisible by heads");
    if (min_core < 0) fail("config: min_core must be >= 0");
    if (threads < 0) fail("config: threads must be >= 0");
    if (learning_rate <= 0 || warmup_init_lr < 0)
      fail("config: learning rates must be positive");
    if (warmup_steps < 0) fail("config: warmup_steps must be >= 0");
    if (weight_decay < 0) fail("config: weight_decay must be >= 0");
    if (dropout != 0.0)
      fail("config: dropout is fixed at 0 (the supported setting); got " +
           std::to_string(dropout));
    if (tau <= 0) fail("config: tau must be positive");
    if (alpha < 0 || beta < 0) fail("config: loss weights must be >= 0");
    if (eval_topk.empty()) fail("config: eval_topk must not be empty");
    for (int k : eval_topk)
      if (k < 1) fail("config: eval_topk entries must be >= 1");
    if (eval_split != "test" && eval_split != "valid")
      fail("config: eval_split must be 'test' or 'valid'");
    static const std::vector<std::string> kAblations{
        "ours", "semantic_only", "collaborative_only", "concat", "random_codes"};
    if (std::find(kAblations.begin(), kAblations.end(), ablation) == kAblations.end())
      fail("config: unknown ablation mode '" + ablation + "'");
    if (integrated_variant != "table" && integrated_variant != "mean")
      fail("config: integrated_variant must be 'table' or 'mean'");
    synthetic.validate();
    int max_k = 0;
    for (int k : eval_topk) max_k = std::max(max_k, k);
    if (beam_width < max_k || beam_width < recommend_k)
      fail("config: beam_width must cover the largest requested k");
  }
};

namespace detail {

template <class T>
void assign_field(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline void check_known_keys(const Json& j, const std::vector<std::string>& known,
                             const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      fail("config: unknown key '" + (scope.empty() ? it.key() : scope + "." + it.key()) + "'");
}

}  // namespace detail

inline RunConfig config_from_json(const Json& j) {
  if (!j.is_object()) fail("config: top level must be a JSON object");
  static const std::vector<std::string> kTop{
      "seed",          "embedding_dim",   "hidden_size",     "heads",
      "encoder_layers", "decoder_layers", "clusters",        "depth",
      "learning_rate", "batch_size",      "stage1_steps",    "stage2_steps",
      "dropout",       "beam_width",      "weight_decay",    "warmup_steps",
      "warmup_init_lr", "alpha",          "beta",            "tau",
      "n_neg",         "history_window",  "min_core",        "eval_topk",
      "recommend_k",   "eval_split",      "ablation",        "integrated_variant",
      "align_include_positive", "bench_queries", "threads",  "synthetic",
      "paths"};
  detail::check_known_keys(j, kTop, "");
  RunConfig c;
  detail::assign_field(j, "seed", c.seed);
  detail::assign_field(j, "embedding_dim", c.embedding_dim);
  detail::assign_field(j, "hidden_size", c.hidden_size);
  detail::assign_field(j, "heads", c.heads);
  detail::assign_field(j, "encoder_layers", c.encoder_layers);
  detail::assign_field(j, "decoder_layers", c.decoder_layers);
  detail::assign_field(j, "clusters", c.clusters);
  detail::assign_field(j, "depth", c.depth);
  detail::assign_field(j, "learning_rate", c.learning_rate);
  detail::assign_field(j, "batch_size", c.batch_size);
  detail::assign_field(j, "stage1_steps", c.stage1_steps);
  detail::assign_field(j, "stage2_steps", c.stage2_steps);
  detail::assign_field(j, "dropout", c.dropout);
  detail::assign_field(j, "beam_width", c.beam_width);
  detail::assign_field(j, "weight_decay", c.weight_decay);
  detail::assign_field(j, "warmup_steps", c.warmup_steps);
  detail::assign_field(j, "warmup_init_lr", c.warmup_init_lr);
  detail::assign_field(j, "alpha", c.alpha);
  detail::assign_field(j, "beta", c.beta);
  detail::assign_field(j, "tau", c.tau);
  detail::assign_field(j, "n_neg", c.n_neg);
  detail::assign_field(j, "history_window", c.history_window);
  detail::assign_field(j, "min_core", c.min_core);
  detail::assign_field(j, "eval_topk", c.eval_topk);
  detail::assign_field(j, "recommend_k", c.recommend_k);
  detail::assign_field(j, "eval_split", c.eval_split);
  detail::assign_field(j, "ablation", c.ablation);
  detail::assign_field(j, "integrated_variant", c.integrated_variant);
  detail::assign_field(j, "align_include_positive", c.align_include_positive);
  detail::assign_field(j, "bench_queries", c.bench_queries);
  detail::assign_field(j, "threads", c.threads);
  if (j.contains("synthetic")) {
    const Json& s = j.at("synthetic");
    static const std::vector<std::string> kSynth{
        "n_categories", "items_per_category", "n_users", "sequence_length",
        "within_category_transition_prob", "embedding_noise_std", "semantic_dim", "seed"};
    detail::check_known_keys(s, kSynth, "synthetic");
    detail::assign_field(s, "n_categories", c.synthetic.n_categories);
    detail::assign_field(s, "items_per_category", c.synthetic.items_per_category);
    detail::assign_field(s, "n_users", c.synthetic.n_users);
    detail::assign_field(s, "sequence_length", c.synthetic.sequence_length);
    detail::assign_field(s, "within_category_transition_prob",
                         c.synthetic.within_category_transition_prob);
    detail::assign_field(s, "embedding_noise_std", c.synthetic.embedding_noise_std);
    detail::assign_field(s, "semantic_dim", c.synthetic.semantic_dim);
    detail::assign_field(s, "seed", c.synthetic.seed);
  } else {
    c.synthetic.seed = c.seed;
  }
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    static const std::vector<std::string> kPaths{
        "interactions", "corpus",         "semantic",       "fusion_dir",
        "integrated",   "collaborative",  "quantizer_dir",  "table",
        "generator_dir", "generator_dir2", "table2",        "rankings"};
    detail::check_known_keys(p, kPaths, "paths");
    detail::assign_field(p, "interactions", c.paths.interactions);
    detail::assign_field(p, "corpus", c.paths.corpus);
    detail::assign_field(p, "semantic", c.paths.semantic);
    detail::assign_field(p, "fusion_dir", c.paths.fusion_dir);
    detail::assign_field(p, "integrated", c.paths.integrated);
    detail::assign_field(p, "collaborative", c.paths.collaborative);
    detail::assign_field(p, "quantizer_dir", c.paths.quantizer_dir);
    detail::assign_field(p, "table", c.paths.table);
    detail::assign_field(p, "generator_dir", c.paths.generator_dir);
    detail::assign_field(p, "generator_dir2", c.paths.generator_dir2);
    detail::assign_field(p, "table2", c.paths.table2);
    detail::assign_field(p, "rankings", c.paths.rankings);
  }
  if (!j.contains("synthetic") || !j.at("synthetic").contains("seed"))
    c.synthetic.seed = c.seed;
  c.validate();
  return c;
}

inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["embedding_dim"] = c.embedding_dim;
  j["hidden_size"] = c.hidden_size;
  j["heads"] = c.heads;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["clusters"] = c.clusters;
  j["depth"] = c.depth;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["stage1_steps"] = c.stage1_steps;
  j["stage2_steps"] = c.stage2_steps;
  j["dropout"] = c.dropout;
  j["beam_width"] = c.beam_width;
  j["weight_decay"] = c.weight_decay;
  j["warmup_steps"] = c.warmup_steps;
  j["warmup_init_lr"] = c.warmup_init_lr;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["tau"] = c.tau;
  j["n_neg"] = c.n_neg;
  j["history_window"] = c.history_window;
  j["min_core"] = c.min_core;
  j["eval_topk"] = c.eval_topk;
  j["recommend_k"] = c.recommend_k;
  j["eval_split"] = c.eval_split;
  j["ablation"] = c.ablation;
  j["integrated_variant"] = c.integrated_variant;
  j["align_include_positive"] = c.align_include_positive;
  j["bench_queries"] = c.bench_queries;
  j["threads"] = c.threads;
  j["synthetic"] = {{"n_categories", c.synthetic.n_categories},
                    {"items_per_category", c.synthetic.items_per_category},
                    {"n_users", c.synthetic.n_users},
                    {"sequence_length", c.synthetic.sequence_length},
                    {"within_category_transition_prob", c.synthetic.within_category_transition_prob},
                    {"embedding_noise_std", c.synthetic.embedding_noise_std},
                    {"semantic_dim", c.synthetic.semantic_dim},
                    {"seed", c.synthetic.seed}};
  j["paths"] = {{"interactions", c.paths.interactions},
                {"corpus", c.paths.corpus},
                {"semantic", c.paths.semantic},
                {"fusion_dir", c.paths.fusion_dir},
                {"integrated", c.paths.integrated},
                {"collaborative", c.paths.collaborative},
                {"quantizer_dir", c.paths.quantizer_dir},
                {"table", c.paths.table},
                {"generator_dir", c.paths.generator_dir},
                {"generator_dir2", c.paths.generator_dir2},
                {"table2", c.paths.table2},
                {"rankings", c.paths.rankings}};
  return j;
}

// Dotted-path override: `paths.table=/x/t.tsv`, `synthetic.n_users=100`.
inline void apply_override(Json& j, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    fail("--set expects key=value, got '" + kv + "'");
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  Json* node = &j;
  size_t start = 0;
  for (;;) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) fail("--set: empty key segment in '" + path + "'");
    if (dot == std::string::npos) {
      Json parsed = Json::parse(raw, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? Json(raw) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& sets) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) fail("config file is not valid JSON: " + path);
  for (const auto& kv : sets) apply_override(j, kv);
  return config_from_json(j);
}

inline uint64_t config_hash(const RunConfig& c) { return fnv1a64(config_to_json(c).dump()); }

inline std::string version_string() { return "unger 0.1.0"; }

}  // namespace unger
