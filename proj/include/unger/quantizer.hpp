#pragma once

#include <map>
#include <sstream>

#include "unger/embedding.hpp"
#include "unger/kmeans.hpp"

namespace unger {

// Per-level centroid matrices from the hierarchical residual fit. The
// disambiguation level, when a table has one, carries no centroids.
struct Codebooks {
  int dim = 0;
  std::vector<std::vector<std::vector<double>>> levels;  // [level][cluster][dim]

  int n_levels() const { return static_cast<int>(levels.size()); }
  int level_size(int l) const { return static_cast<int>(levels[static_cast<size_t>(l)].size()); }
  const std::vector<double>& centroid(int l, int k) const {
    return levels[static_cast<size_t>(l)][static_cast<size_t>(k)];
  }
};

// Item -> discrete code sequence, plus the prefix trie used by constrained
// decoding. Codes from fit() share one width; hand-written tables may be
// ragged as long as no full code is a prefix of another.
struct UnicodeTable {
  std::vector<std::vector<int>> codes;
  std::vector<std::string> tokens;  // aligned with codes; optional

  struct TrieNode {
    std::map<int, int> children;  // code -> node index
    int item = -1;                // leaf payload
  };
  std::vector<TrieNode> trie;

  int n_items() const { return static_cast<int>(codes.size()); }

  int width() const {
    size_t w = 0;
    for (const auto& c : codes) w = std::max(w, c.size());
    return static_cast<int>(w);
  }

  bool uniform_width() const {
    for (const auto& c : codes)
      if (c.size() != codes[0].size()) return false;
    return true;
  }

  // Smallest vocabulary covering every code at this level.
  int level_vocab(int l) const {
    int v = 0;
    for (const auto& c : codes)
      if (l < static_cast<int>(c.size())) v = std::max(v, c[static_cast<size_t>(l)] + 1);
    return v;
  }

  void build_trie() {
    trie.assign(1, TrieNode{});
    for (int i = 0; i < n_items(); ++i) {
      const auto& code = codes[static_cast<size_t>(i)];
      if (code.empty()) fail("unicode table: empty code for item " + std::to_string(i));
      int node = 0;
      for (size_t l = 0; l < code.size(); ++l) {
        if (code[l] < 0) fail("unicode table: negative code for item " + std::to_string(i));
        if (trie[static_cast<size_t>(node)].item != -1)
          fail("unicode table: code of item " + std::to_string(i) +
               " extends the full code of item " +
               std::to_string(trie[static_cast<size_t>(node)].item));
        auto [it, fresh] = trie[static_cast<size_t>(node)].children.try_emplace(
            code[l], static_cast<int>(trie.size()));
        if (fresh) trie.emplace_back();
        node = it->second;
      }
      TrieNode& leaf = trie[static_cast<size_t>(node)];
      if (leaf.item != -1)
        fail("unicode table: duplicate full code for items " + std::to_string(leaf.item) +
             " and " + std::to_string(i));
      if (!leaf.children.empty())
        fail("unicode table: full code of item " + std::to_string(i) +
             " is a prefix of another item's code");
      leaf.item = i;
    }
  }

  // Follows a full code from the root; -1 when the path is absent.
  int lookup(const std::vector<int>& code) const {
    int node = 0;
    for (int c : code) {
      auto it = trie[static_cast<size_t>(node)].children.find(c);
      if (it == trie[static_cast<size_t>(node)].children.end()) return -1;
      node = it->second;
    }
    return trie[static_cast<size_t>(node)].item;
  }
};

namespace detail {

// Groups identical full codes and appends one extra level: colliding items
// get 0,1,2,... in ascending item order, unique items get 0.
inline bool append_disambiguation(std::vector<std::vector<int>>& codes) {
  std::map<std::vector<int>, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(codes.size()); ++i)
    groups[codes[static_cast<size_t>(i)]].push_back(i);
  bool any = false;
  for (const auto& [c, members] : groups) any = any || members.size() > 1;
  if (!any) return false;
  for (const auto& [c, members] : groups)
    for (size_t r = 0; r < members.size(); ++r)
      codes[static_cast<size_t>(members[r])].push_back(static_cast<int>(r));
  return true;
}

}  // namespace detail

struct QuantizeResult {
  Codebooks codebooks;
  UnicodeTable table;
  std::vector<double> final_residuals;            // n_items x dim, row-major
  std::vector<std::vector<double>> lloyd_history;  // per level, winning restart
};

// Algorithm: residuals start at the embeddings; each level runs k-means over
// all residuals, assigns every item its nearest centroid and subtracts it.
inline QuantizeResult quantize_fit(const EmbeddingMatrix& e, int k, int l, uint64_t seed,
                                   int max_iters = 25, int restarts = 4) {
  if (e.n_items < 1) fail("quantize_fit: empty embedding matrix");
  if (k < 1 || l < 1) fail("quantize_fit: K and L must be >= 1");
  const int n = e.n_items, d = e.dim;

  QuantizeResult out;
  out.codebooks.dim = d;
  out.table.codes.assign(static_cast<size_t>(n), {});
  out.table.tokens = e.tokens;

  std::vector<double> residuals(static_cast<size_t>(n) * d);
  for (size_t i = 0; i < residuals.size(); ++i) residuals[i] = static_cast<double>(e.data[i]);

  for (int level = 0; level < l; ++level) {
    Rng rng(derive_seed(seed, "hkmeans-level-" + std::to_string(level)));
    KmeansResult km = kmeans(residuals, n, d, k, rng, max_iters, restarts);
    for (int i = 0; i < n; ++i) {
      const int a = km.assignment[static_cast<size_t>(i)];
      out.table.codes[static_cast<size_t>(i)].push_back(a);
      const auto& c = km.centroids[static_cast<size_t>(a)];
      double* r = residuals.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) r[j] -= c[static_cast<size_t>(j)];
    }
    out.lloyd_history.push_back(std::move(km.objective_history));
    out.codebooks.levels.push_back(std::move(km.centroids));
  }
  out.final_residuals = std::move(residuals);
  detail::append_disambiguation(out.table.codes);
  out.table.build_trie();
  return out;
}

// Mean squared norm of what the codebooks fail to explain.
inline double quantization_error(const EmbeddingMatrix& e, const Codebooks& cb,
                                 const UnicodeTable& t) {
  if (e.n_items != t.n_items()) fail("quantization_error: table does not cover the matrix");
  const int d = e.dim;
  double total = 0.0;
  for (int i = 0; i < e.n_items; ++i) {
    const auto& code = t.codes[static_cast<size_t>(i)];
    for (int j = 0; j < d; ++j) {
      double r = static_cast<double>(e.at(i, j));
      for (int l = 0; l < cb.n_levels(); ++l)
        r -= cb.centroid(l, code[static_cast<size_t>(l)])[static_cast<size_t>(j)];
      total += r * r;
    }
  }
  return total / static_cast<double>(e.n_items);
}

// Uniform random codes (the quantizer baseline). With `exhaustive` set the
// codes are a seeded permutation of the whole K^L space, so they are unique
// by construction and no disambiguation level appears.
inline UnicodeTable random_assignment(int n_items, int k, int l, uint64_t seed,
                                      bool exhaustive = false) {
  if (n_items < 1 || k < 1 || l < 1) fail("random_assignment: counts must be >= 1");
  UnicodeTable t;
  t.codes.assign(static_cast<size_t>(n_items), {});
  Rng rng(derive_seed(seed, "random-codes"));
  if (exhaustive) {
    double space = std::pow(static_cast<double>(k), static_cast<double>(l));
    if (space > 4e6) fail("random_assignment: exhaustive mode over a space of " +
                          std::to_string(space) + " codes");
    const int64_t total = static_cast<int64_t>(space + 0.5);
    if (n_items > total)
      fail("random_assignment: " + std::to_string(n_items) + " items exceed K^L = " +
           std::to_string(total));
    std::vector<int64_t> perm(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);
    for (int i = 0; i < n_items; ++i) {
      int64_t v = perm[static_cast<size_t>(i)];
      std::vector<int> code(static_cast<size_t>(l));
      for (int j = l - 1; j >= 0; --j) {
        code[static_cast<size_t>(j)] = static_cast<int>(v % k);
        v /= k;
      }
      t.codes[static_cast<size_t>(i)] = std::move(code);
    }
  } else {
    for (int i = 0; i < n_items; ++i)
      for (int j = 0; j < l; ++j)
        t.codes[static_cast<size_t>(i)].push_back(
            static_cast<int>(rng.below(static_cast<uint64_t>(k))));
    detail::append_disambiguation(t.codes);
  }
  t.build_trie();
  return t;
}

// Text format: `item_token <TAB> c1 c2 ... cL` per line.
inline void save_table(const std::string& path, const UnicodeTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write unicode table: " + path);
  for (int i = 0; i < t.n_items(); ++i) {
    const std::string tok = i < static_cast<int>(t.tokens.size())
                                ? t.tokens[static_cast<size_t>(i)]
                                : "i" + std::to_string(i);
    out << tok << '\t';
    const auto& code = t.codes[static_cast<size_t>(i)];
    for (size_t j = 0; j < code.size(); ++j) out << (j ? " " : "") << code[j];
    out << '\n';
  }
  if (!out) fail("write failed: " + path);
}

inline UnicodeTable load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open unicode table: " + path);
  UnicodeTable t;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      fail(path + ":" + std::to_string(line_no) + ": expected `token<TAB>codes`");
    t.tokens.push_back(line.substr(0, tab));
    std::istringstream cs(line.substr(tab + 1));
    std::vector<int> code;
    long v;
    while (cs >> v) {
      if (v < 0) fail(path + ":" + std::to_string(line_no) + ": negative code");
      code.push_back(static_cast<int>(v));
    }
    if (!cs.eof()) fail(path + ":" + std::to_string(line_no) + ": bad code token");
    if (code.empty()) fail(path + ":" + std::to_string(line_no) + ": no codes");
    t.codes.push_back(std::move(code));
  }
  t.build_trie();
  return t;
}

// Reorders table rows into corpus item order, matching by token.
inline UnicodeTable bind_to_corpus(const UnicodeTable& t, const InteractionCorpus& c) {
  if (t.tokens.empty()) {
    if (t.n_items() != c.n_items())
      fail("unicode table has " + std::to_string(t.n_items()) + " rows but corpus has " +
           std::to_string(c.n_items()) + " items and no tokens to bind by");
    return t;
  }
  std::unordered_map<std::string, int> pos;
  for (int i = 0; i < t.n_items(); ++i) pos[t.tokens[static_cast<size_t>(i)]] = i;
  UnicodeTable out;
  out.tokens = c.item_tokens;
  out.codes.reserve(static_cast<size_t>(c.n_items()));
  for (int i = 0; i < c.n_items(); ++i) {
    auto it = pos.find(c.item_tokens[static_cast<size_t>(i)]);
    if (it == pos.end())
      fail("no unicode for item token '" + c.item_tokens[static_cast<size_t>(i)] + "'");
    out.codes.push_back(t.codes[static_cast<size_t>(it->second)]);
  }
  out.build_trie();
  return out;
}

// Codebook persistence: one UNGE matrix per level plus a JSON-ish manifest
// written by the CLI layer (see config.hpp).
inline void save_codebooks(const std::string& dir, const Codebooks& cb) {
  for (int l = 0; l < cb.n_levels(); ++l) {
    EmbeddingMatrix m = EmbeddingMatrix::zeros(cb.level_size(l), cb.dim);
    for (int k = 0; k < cb.level_size(l); ++k)
      for (int j = 0; j < cb.dim; ++j)
        m.at(k, j) = static_cast<float>(cb.centroid(l, k)[static_cast<size_t>(j)]);
    save_embeddings(dir + "/codebook_level" + std::to_string(l) + ".unge", m);
  }
}

inline Codebooks load_codebooks(const std::string& dir, int n_levels) {
  Codebooks cb;
  for (int l = 0; l < n_levels; ++l) {
    auto m = load_embeddings(dir + "/codebook_level" + std::to_string(l) + ".unge");
    cb.dim = m.dim;
    std::vector<std::vector<double>> level(static_cast<size_t>(m.n_items));
    for (int k = 0; k < m.n_items; ++k) {
      level[static_cast<size_t>(k)].resize(static_cast<size_t>(m.dim));
      for (int j = 0; j < m.dim; ++j)
        level[static_cast<size_t>(k)][static_cast<size_t>(j)] = static_cast<double>(m.at(k, j));
    }
    cb.levels.push_back(std::move(level));
  }
  return cb;
}

}  // namespace unger
