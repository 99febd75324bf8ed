#pragma once

#include "unger/embedding.hpp"

namespace unger {

// Planted-structure generator: items partition into categories whose unit-norm
// centroids carry the semantic signal, and user sequences follow a category
// Markov chain so the collaborative signal carries the same partition.
struct SyntheticSpec {
  int n_categories = 8;
  int items_per_category = 32;
  int n_users = 2000;
  int sequence_length = 12;
  double within_category_transition_prob = 0.9;
  double embedding_noise_std = 0.1;
  int semantic_dim = 64;
  uint64_t seed = 2024;

  void validate() const {
    if (n_categories < 1 || items_per_category < 1 || n_users < 1 || semantic_dim < 1)
      fail("synthetic spec: all counts must be >= 1");
    if (sequence_length < 3)
      fail("synthetic spec: sequence_length must be >= 3 for leave-one-out");
    if (within_category_transition_prob < 0.0 || within_category_transition_prob > 1.0)
      fail("synthetic spec: transition probability outside [0,1]");
    if (embedding_noise_std < 0.0) fail("synthetic spec: negative noise std");
  }
};

struct SyntheticData {
  InteractionCorpus corpus;
  EmbeddingMatrix semantic;
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int n_items = spec.n_categories * spec.items_per_category;

  SyntheticData out;
  out.corpus.item_tokens.reserve(static_cast<size_t>(n_items));
  for (int i = 0; i < n_items; ++i) out.corpus.item_tokens.push_back("i" + std::to_string(i));

  // Category centroids: random unit vectors (near-orthogonal at these dims).
  Rng erng(derive_seed(spec.seed, "synthetic-embeddings"));
  std::vector<std::vector<double>> centroids(static_cast<size_t>(spec.n_categories));
  for (auto& c : centroids) {
    c.resize(static_cast<size_t>(spec.semantic_dim));
    double norm2 = 0.0;
    for (auto& v : c) {
      v = erng.gaussian();
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
    for (auto& v : c) v *= inv;
  }
  out.semantic = EmbeddingMatrix::zeros(n_items, spec.semantic_dim);
  out.semantic.tokens = out.corpus.item_tokens;
  for (int i = 0; i < n_items; ++i) {
    const auto& c = centroids[static_cast<size_t>(i / spec.items_per_category)];
    for (int j = 0; j < spec.semantic_dim; ++j)
      out.semantic.at(i, j) =
          static_cast<float>(c[static_cast<size_t>(j)] + spec.embedding_noise_std * erng.gaussian());
  }

  // Sequences: stay in the current category with probability p, otherwise
  // jump uniformly to one of the other categories; items uniform within.
  Rng srng(derive_seed(spec.seed, "synthetic-sequences"));
  out.corpus.user_tokens.reserve(static_cast<size_t>(spec.n_users));
  out.corpus.sequences.reserve(static_cast<size_t>(spec.n_users));
  for (int u = 0; u < spec.n_users; ++u) {
    out.corpus.user_tokens.push_back("u" + std::to_string(u));
    std::vector<int> seq(static_cast<size_t>(spec.sequence_length));
    int cat = static_cast<int>(srng.below(static_cast<uint64_t>(spec.n_categories)));
    for (int t = 0; t < spec.sequence_length; ++t) {
      if (t > 0 && spec.n_categories > 1 &&
          srng.uniform() >= spec.within_category_transition_prob) {
        int j = static_cast<int>(srng.below(static_cast<uint64_t>(spec.n_categories - 1)));
        cat = j >= cat ? j + 1 : j;
      }
      seq[static_cast<size_t>(t)] =
          cat * spec.items_per_category +
          static_cast<int>(srng.below(static_cast<uint64_t>(spec.items_per_category)));
    }
    out.corpus.n_interactions += spec.sequence_length;
    out.corpus.sequences.push_back(std::move(seq));
  }
  return out;
}

}  // namespace unger
