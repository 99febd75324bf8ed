#pragma once

#include <filesystem>

#include "unger/config.hpp"

namespace unger {

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) fail("write failed: " + path);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) fail("not valid JSON: " + path);
  return j;
}

namespace detail {

// Parameters persist as UNGE matrices: rank-1 tensors as one row, rank-2 as-is.
template <class Real>
EmbeddingMatrix param_matrix(const Param<Real>& p) {
  const auto& t = p.value;
  if (t.rank() == 1) {
    EmbeddingMatrix m = EmbeddingMatrix::zeros(1, t.dim(0));
    for (int j = 0; j < t.dim(0); ++j) m.at(0, j) = static_cast<float>(t.at(j));
    return m;
  }
  if (t.rank() == 2) return EmbeddingMatrix::from_tensor(t);
  fail("cannot persist parameter of shape " + shape_str(t.shape));
}

template <class Real>
void load_param(const std::string& file, Param<Real>& p) {
  auto m = load_embeddings(file);
  if (static_cast<int64_t>(m.data.size()) != p.value.numel())
    fail("checkpoint parameter " + p.name + " has " + std::to_string(m.data.size()) +
         " values, expected " + std::to_string(p.value.numel()));
  for (size_t i = 0; i < m.data.size(); ++i) p.value.data[i] = static_cast<Real>(m.data[i]);
}

template <class Real>
void save_params(const std::string& dir, std::vector<Param<Real>*> params) {
  std::filesystem::create_directories(dir + "/params");
  for (const auto* p : params)
    save_embeddings(dir + "/params/" + p->name + ".unge", param_matrix(*p));
}

template <class Real>
void load_params(const std::string& dir, std::vector<Param<Real>*> params) {
  for (auto* p : params) load_param(dir + "/params/" + p->name + ".unge", *p);
}

}  // namespace detail

// --- fusion checkpoints ---

template <class Real>
void save_fusion(const std::string& dir, FusionModel<Real>& m, int n_items, int d_s) {
  std::filesystem::create_directories(dir);
  const FusionConfig& f = m.config();
  Json j{{"type", "fusion"},
         {"n_items", n_items},
         {"d_s", d_s},
         {"d_c", f.d_c},
         {"hidden", f.hidden},
         {"tau", f.tau},
         {"alpha", f.alpha},
         {"align_include_positive", f.align_include_positive},
         {"history_window", f.history_window},
         {"seed", f.seed}};
  write_json_file(dir + "/manifest.json", j);
  detail::save_params(dir, m.params());
}

template <class Real>
FusionModel<Real> load_fusion(const std::string& dir) {
  Json j = read_json_file(dir + "/manifest.json");
  if (j.value("type", "") != "fusion") fail(dir + " is not a fusion checkpoint");
  FusionConfig f;
  f.d_c = j.at("d_c").get<int>();
  f.hidden = j.at("hidden").get<int>();
  f.tau = j.at("tau").get<double>();
  f.alpha = j.at("alpha").get<double>();
  f.align_include_positive = j.at("align_include_positive").get<bool>();
  f.history_window = j.at("history_window").get<int>();
  f.seed = j.at("seed").get<uint64_t>();
  FusionModel<Real> m(j.at("n_items").get<int>(), j.at("d_s").get<int>(), f);
  detail::load_params(dir, m.params());
  return m;
}

// --- generator checkpoints ---

template <class Real>
void save_generator(const std::string& dir, GenModel<Real>& m) {
  std::filesystem::create_directories(dir);
  const GenConfig& c = m.config();
  Json j{{"type", "generator"},
         {"level_sizes", m.level_sizes()},
         {"d_c", m.d_c()},
         {"d_model", c.d_model},
         {"hidden", c.hidden},
         {"heads", c.heads},
         {"enc_layers", c.enc_layers},
         {"dec_layers", c.dec_layers},
         {"history_window", c.history_window},
         {"beta", c.beta},
         {"n_neg", c.n_neg},
         {"seed", c.seed}};
  write_json_file(dir + "/manifest.json", j);
  detail::save_params(dir, m.params());
}

template <class Real>
GenModel<Real> load_generator(const std::string& dir) {
  Json j = read_json_file(dir + "/manifest.json");
  if (j.value("type", "") != "generator") fail(dir + " is not a generator checkpoint");
  GenConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.heads = j.at("heads").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.history_window = j.at("history_window").get<int>();
  c.beta = j.at("beta").get<double>();
  c.n_neg = j.at("n_neg").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  GenModel<Real> m(j.at("level_sizes").get<std::vector<int>>(), j.at("d_c").get<int>(), c);
  detail::load_params(dir, m.params());
  return m;
}

}  // namespace unger
