#pragma once

#include <cstring>
#include <fstream>

#include "unger/corpus.hpp"
#include "unger/tensor.hpp"

namespace unger {

// Dense row-major item-vector matrix (float storage). `tokens`, when present,
// names each row and drives corpus binding.
struct EmbeddingMatrix {
  int n_items = 0;
  int dim = 0;
  std::vector<float> data;
  std::vector<std::string> tokens;

  static EmbeddingMatrix zeros(int n, int d) {
    EmbeddingMatrix m;
    m.n_items = n;
    m.dim = d;
    m.data.assign(static_cast<size_t>(n) * static_cast<size_t>(d), 0.0f);
    return m;
  }

  float* row(int i) { return data.data() + static_cast<size_t>(i) * dim; }
  const float* row(int i) const { return data.data() + static_cast<size_t>(i) * dim; }
  float& at(int i, int j) { return data[static_cast<size_t>(i) * dim + j]; }
  float at(int i, int j) const { return data[static_cast<size_t>(i) * dim + j]; }

  template <class Real>
  TensorT<Real> as_tensor() const {
    TensorT<Real> t = TensorT<Real>::zeros({n_items, dim});
    for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<Real>(data[i]);
    return t;
  }

  template <class Real>
  static EmbeddingMatrix from_tensor(const TensorT<Real>& t,
                                     std::vector<std::string> tokens = {}) {
    if (t.rank() != 2) fail("embedding matrix must be rank 2, got " + shape_str(t.shape));
    EmbeddingMatrix m = zeros(t.dim(0), t.dim(1));
    for (size_t i = 0; i < t.data.size(); ++i) m.data[i] = static_cast<float>(t.data[i]);
    m.tokens = std::move(tokens);
    return m;
  }
};

namespace detail {

constexpr uint32_t kUngeVersion = 1;

inline void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail("truncated header in " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline std::string items_companion(const std::string& path) { return path + ".items.txt"; }

}  // namespace detail

// Binary format: magic "UNGE", u32 LE version=1, u32 n_items, u32 dim,
// then n_items*dim little-endian IEEE-754 f32, row-major. When tokens are
// present a companion `<path>.items.txt` lists one token per row.
inline void save_embeddings(const std::string& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write embedding file: " + path);
  out.write("UNGE", 4);
  detail::put_u32(out, detail::kUngeVersion);
  detail::put_u32(out, static_cast<uint32_t>(m.n_items));
  detail::put_u32(out, static_cast<uint32_t>(m.dim));
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * 4));
  if (!out) fail("write failed: " + path);
  if (!m.tokens.empty()) {
    if (static_cast<int>(m.tokens.size()) != m.n_items)
      fail("token count does not match embedding rows");
    std::ofstream t(detail::items_companion(path), std::ios::binary);
    if (!t) fail("cannot write " + detail::items_companion(path));
    for (const auto& tok : m.tokens) t << tok << '\n';
  }
}

inline EmbeddingMatrix load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open embedding file: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "UNGE", 4) != 0)
    fail("bad magic in embedding file: " + path);
  const uint32_t version = detail::get_u32(in, path);
  if (version != detail::kUngeVersion)
    fail("unsupported embedding file version " + std::to_string(version) + " in " + path);
  const uint32_t n = detail::get_u32(in, path);
  const uint32_t d = detail::get_u32(in, path);
  EmbeddingMatrix m = EmbeddingMatrix::zeros(static_cast<int>(n), static_cast<int>(d));
  const std::streamsize want = static_cast<std::streamsize>(m.data.size() * 4);
  in.read(reinterpret_cast<char*>(m.data.data()), want);
  if (in.gcount() != want)
    fail("truncated payload in " + path + ": expected " + std::to_string(want) +
         " bytes, got " + std::to_string(in.gcount()));
  char extra;
  if (in.read(&extra, 1)) fail("trailing bytes after payload in " + path);
  for (uint32_t i = 0; i < n; ++i)
    for (uint32_t j = 0; j < d; ++j)
      if (!std::isfinite(m.at(static_cast<int>(i), static_cast<int>(j))))
        fail("non-finite value at row " + std::to_string(i) + " in " + path);

  std::ifstream t(detail::items_companion(path));
  if (t) {
    std::string tok;
    while (std::getline(t, tok)) {
      if (!tok.empty() && tok.back() == '\r') tok.pop_back();
      m.tokens.push_back(tok);
    }
    if (static_cast<int>(m.tokens.size()) != m.n_items)
      fail(detail::items_companion(path) + " lists " + std::to_string(m.tokens.size()) +
           " tokens for " + std::to_string(m.n_items) + " rows");
  }
  return m;
}

// Reorders rows into corpus item-index order, matching by token. A matrix
// without tokens must already align row-for-row.
inline EmbeddingMatrix bind_to_corpus(const EmbeddingMatrix& m, const InteractionCorpus& c) {
  if (m.tokens.empty()) {
    if (m.n_items != c.n_items())
      fail("embedding matrix has " + std::to_string(m.n_items) + " rows but corpus has " +
           std::to_string(c.n_items()) + " items and no tokens to bind by");
    return m;
  }
  std::unordered_map<std::string, int> pos;
  for (int i = 0; i < m.n_items; ++i) pos[m.tokens[static_cast<size_t>(i)]] = i;
  EmbeddingMatrix out = EmbeddingMatrix::zeros(c.n_items(), m.dim);
  out.tokens = c.item_tokens;
  for (int i = 0; i < c.n_items(); ++i) {
    auto it = pos.find(c.item_tokens[static_cast<size_t>(i)]);
    if (it == pos.end())
      fail("no embedding row for item token '" + c.item_tokens[static_cast<size_t>(i)] + "'");
    std::memcpy(out.row(i), m.row(it->second), sizeof(float) * static_cast<size_t>(m.dim));
  }
  return out;
}

}  // namespace unger
