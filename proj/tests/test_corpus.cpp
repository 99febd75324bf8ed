#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "unger/synthetic.hpp"

using namespace unger;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path p;
  TempDir() {
    p = fs::temp_directory_path() /
        ("unger_test_" + std::to_string(::getpid()) + "_" +
         std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(p);
  }
  ~TempDir() { fs::remove_all(p); }
  std::string file(const std::string& name) const { return (p / name).string(); }
};

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

}  // namespace

TEST_CASE("already 5-core corpus is fully retained") {
  TempDir td;
  std::string body;
  // 5 users x 5 shared items: every user and item count is exactly 5
  for (int u = 0; u < 5; ++u)
    for (int i = 0; i < 5; ++i)
      body += "u" + std::to_string(u) + "\ti" + std::to_string(i) + "\t" +
              std::to_string(i) + "\n";
  write_file(td.file("x.tsv"), body);
  auto c = load_interactions(td.file("x.tsv"), 5);
  REQUIRE(c.n_users() == 5);
  REQUIRE(c.n_items() == 5);
  REQUIRE(c.n_interactions == 25);
  REQUIRE(c.n_dropped_users == 0);
}

TEST_CASE("singleton item is removed and filtering re-runs") {
  TempDir td;
  std::string body;
  // 5-core base, plus one extra item seen once by u0
  for (int u = 0; u < 5; ++u)
    for (int i = 0; i < 5; ++i)
      body += "u" + std::to_string(u) + "\ti" + std::to_string(i) + "\t" +
              std::to_string(i) + "\n";
  body += "u0\trare\t99\n";
  write_file(td.file("x.tsv"), body);
  auto c = load_interactions(td.file("x.tsv"), 5);
  REQUIRE(c.n_items() == 5);
  REQUIRE(c.n_interactions == 25);
  for (const auto& t : c.item_tokens) REQUIRE(t != "rare");
}

TEST_CASE("five-core property holds after filtering a random corpus") {
  TempDir td;
  Rng rng(123);
  std::string body;
  for (int e = 0; e < 400; ++e)
    body += "u" + std::to_string(rng.below(40)) + "\ti" + std::to_string(rng.below(30)) +
            "\t" + std::to_string(rng.below(1000)) + "\n";
  write_file(td.file("x.tsv"), body);
  auto c = load_interactions(td.file("x.tsv"), 5);
  std::vector<int> icount(static_cast<size_t>(c.n_items()), 0);
  for (int u = 0; u < c.n_users(); ++u) {
    REQUIRE(c.sequence(u).size() >= 5);
    for (int it : c.sequence(u)) ++icount[static_cast<size_t>(it)];
  }
  for (int n : icount) REQUIRE(n >= 5);
}

TEST_CASE("k-core filtering reaches a fixpoint with cascading removals") {
  TempDir td;
  // u3 only interacts with items that die once u3's count drops below core.
  std::string body;
  for (int u = 0; u < 2; ++u)
    for (int i = 0; i < 4; ++i)
      body += "u" + std::to_string(u) + "\ti" + std::to_string(i) + "\t" +
              std::to_string(i) + "\n";
  body += "u0\tx\t10\nu1\tx\t10\nu3\tx\t10\nu3\ty\t11\n";
  write_file(td.file("x.tsv"), body);
  auto c = load_interactions(td.file("x.tsv"), 2);
  // recount: every retained user and item appears >= 2 times
  std::vector<int> icount(static_cast<size_t>(c.n_items()), 0);
  for (int u = 0; u < c.n_users(); ++u) {
    REQUIRE(c.sequence(u).size() >= 2);
    for (int it : c.sequence(u)) ++icount[static_cast<size_t>(it)];
  }
  for (int n : icount) REQUIRE(n >= 2);
}

TEST_CASE("malformed lines are rejected with their line number") {
  TempDir td;
  write_file(td.file("bad.tsv"), "u0\ti0\t1\nu0\ti1\n");
  REQUIRE_THROWS_WITH(load_interactions(td.file("bad.tsv"), 0),
                      Catch::Matchers::ContainsSubstring(":2:"));
  write_file(td.file("badts.tsv"), "u0\ti0\tnotanumber\n");
  REQUIRE_THROWS_WITH(load_interactions(td.file("badts.tsv"), 0),
                      Catch::Matchers::ContainsSubstring("timestamp"));
}

TEST_CASE("timestamps sort per user with ties broken by file order") {
  TempDir td;
  write_file(td.file("x.tsv"),
             "u0\tlate\t9\nu0\ttie_a\t5\nu0\ttie_b\t5\nu0\tearly\t1\n");
  auto c = load_interactions(td.file("x.tsv"), 0);
  REQUIRE(c.n_users() == 1);
  std::vector<std::string> got;
  for (int it : c.sequence(0)) got.push_back(c.item_tokens[static_cast<size_t>(it)]);
  REQUIRE(got == std::vector<std::string>{"early", "tie_a", "tie_b", "late"});
}

TEST_CASE("users dropped below 3 interactions are counted") {
  TempDir td;
  write_file(td.file("x.tsv"), "u0\ta\t1\nu0\tb\t2\nu0\tc\t3\nu1\ta\t1\nu1\tb\t2\n");
  auto c = load_interactions(td.file("x.tsv"), 0);
  REQUIRE(c.n_users() == 1);
  REQUIRE(c.n_dropped_users == 1);
}

TEST_CASE("split reconstructs the full sequence") {
  auto data = generate_synthetic(SyntheticSpec{4, 4, 20, 8, 0.8, 0.1, 16, 7});
  const auto& c = data.corpus;
  for (int u = 0; u < c.n_users(); ++u) {
    const auto& seq = c.sequence(u);
    std::vector<int> rebuilt(seq.begin(), seq.begin() + c.train_len(u));
    rebuilt.push_back(c.valid_item(u));
    rebuilt.push_back(c.test_item(u));
    REQUIRE(rebuilt == seq);
  }
}

TEST_CASE("history_window keeps the last max_len training items") {
  InteractionCorpus c;
  c.item_tokens.resize(40, "i");
  c.user_tokens = {"u0", "u1"};
  std::vector<int> short_seq{0, 1, 2, 3, 4, 5, 6};  // train = first 5
  std::vector<int> long_seq(32);
  for (int i = 0; i < 32; ++i) long_seq[static_cast<size_t>(i)] = i;
  c.sequences = {short_seq, long_seq};
  REQUIRE(history_window(c, 0) == std::vector<int>{0, 1, 2, 3, 4});
  auto w = history_window(c, 1);  // train = 30 items, default window 20
  REQUIRE(w.size() == 20);
  REQUIRE(w.front() == 10);
  REQUIRE(w.back() == 29);
  REQUIRE(history_window(c, 1, 5) == std::vector<int>{25, 26, 27, 28, 29});
  REQUIRE_THROWS_AS(history_window(c, 2), Error);
}

TEST_CASE("embedding file round trip is bitwise identical") {
  TempDir td;
  Rng rng(5);
  auto m = EmbeddingMatrix::zeros(7, 3);
  for (auto& v : m.data) v = static_cast<float>(rng.uniform(-2, 2));
  m.tokens = {"a", "b", "c", "d", "e", "f", "g"};
  save_embeddings(td.file("m.unge"), m);
  auto r = load_embeddings(td.file("m.unge"));
  REQUIRE(r.n_items == 7);
  REQUIRE(r.dim == 3);
  REQUIRE(std::memcmp(r.data.data(), m.data.data(), m.data.size() * 4) == 0);
  REQUIRE(r.tokens == m.tokens);
}

TEST_CASE("embedding header and payload validation") {
  TempDir td;
  auto m = EmbeddingMatrix::zeros(2, 3);
  for (int i = 0; i < 6; ++i) m.data[static_cast<size_t>(i)] = static_cast<float>(i);
  save_embeddings(td.file("m.unge"), m);
  auto r = load_embeddings(td.file("m.unge"));
  REQUIRE(r.n_items == 2);
  REQUIRE(r.dim == 3);
  REQUIRE(r.at(1, 2) == 5.0f);

  SECTION("payload one float short") {
    auto size = fs::file_size(td.file("m.unge"));
    fs::resize_file(td.file("m.unge"), size - 4);
    REQUIRE_THROWS_WITH(load_embeddings(td.file("m.unge")),
                        Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("bad magic") {
    write_file(td.file("bad.unge"), "NOPExxxxxxxxxxxxxxxx");
    REQUIRE_THROWS_WITH(load_embeddings(td.file("bad.unge")),
                        Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("non-finite payload names the row") {
    auto bad = EmbeddingMatrix::zeros(3, 2);
    bad.data[4] = std::numeric_limits<float>::quiet_NaN();
    std::ofstream out(td.file("nan.unge"), std::ios::binary);
    out.write("UNGE", 4);
    auto u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    u32(1);
    u32(3);
    u32(2);
    out.write(reinterpret_cast<const char*>(bad.data.data()), 24);
    out.close();
    REQUIRE_THROWS_WITH(load_embeddings(td.file("nan.unge")),
                        Catch::Matchers::ContainsSubstring("row 2"));
  }
}

TEST_CASE("bind_to_corpus reorders rows by token") {
  InteractionCorpus c;
  c.item_tokens = {"x", "y"};
  auto m = EmbeddingMatrix::zeros(3, 2);
  m.tokens = {"y", "z", "x"};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) m.at(i, j) = static_cast<float>(10 * i + j);
  auto b = bind_to_corpus(m, c);
  REQUIRE(b.n_items == 2);
  REQUIRE(b.at(0, 0) == 20.0f);  // "x" was row 2
  REQUIRE(b.at(1, 0) == 0.0f);   // "y" was row 0

  c.item_tokens.push_back("missing");
  REQUIRE_THROWS_WITH(bind_to_corpus(m, c), Catch::Matchers::ContainsSubstring("missing"));
}

TEST_CASE("synthetic generator is deterministic") {
  SyntheticSpec spec{3, 5, 30, 6, 0.7, 0.2, 12, 42};
  auto a = generate_synthetic(spec);
  auto b = generate_synthetic(spec);
  REQUIRE(a.corpus.sequences == b.corpus.sequences);
  REQUIRE(a.semantic.data == b.semantic.data);
}

TEST_CASE("zero noise with one item per category gives exact centroids") {
  SyntheticSpec spec{4, 1, 10, 5, 0.5, 0.0, 8, 3};
  auto d = generate_synthetic(spec);
  // rows are exactly unit-norm centroids
  for (int i = 0; i < d.semantic.n_items; ++i) {
    double n2 = 0;
    for (int j = 0; j < d.semantic.dim; ++j) n2 += double(d.semantic.at(i, j)) * d.semantic.at(i, j);
    REQUIRE_THAT(n2, Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
}

TEST_CASE("persistence 1 keeps every user inside one category") {
  SyntheticSpec spec{5, 4, 50, 10, 1.0, 0.1, 8, 11};
  auto d = generate_synthetic(spec);
  for (const auto& seq : d.corpus.sequences) {
    const int cat = seq[0] / spec.items_per_category;
    for (int it : seq) REQUIRE(it / spec.items_per_category == cat);
  }
}

TEST_CASE("category persistence matches the Monte-Carlo frequency") {
  // ~1.2e5 transitions; binomial std at p=0.9 is ~0.00087, so +/-0.02 is wide.
  SyntheticSpec spec{8, 4, 1200, 101, 0.9, 0.0, 8, 77};
  auto d = generate_synthetic(spec);
  int64_t stay = 0, total = 0;
  for (const auto& seq : d.corpus.sequences)
    for (size_t t = 1; t < seq.size(); ++t) {
      ++total;
      if (seq[t] / spec.items_per_category == seq[t - 1] / spec.items_per_category) ++stay;
    }
  REQUIRE(total >= 100000);
  const double freq = double(stay) / double(total);
  REQUIRE_THAT(freq, Catch::Matchers::WithinAbs(0.9, 0.02));
}

TEST_CASE("synthetic corpus round-trips through the TSV pipeline") {
  TempDir td;
  auto d = generate_synthetic(SyntheticSpec{3, 4, 25, 6, 0.8, 0.1, 8, 5});
  save_interactions(d.corpus, td.file("c.tsv"));
  auto c = load_interactions(td.file("c.tsv"), 0);
  REQUIRE(c.n_users() == d.corpus.n_users());
  REQUIRE(c.n_interactions == d.corpus.n_interactions);
  // token sequences match even though dense indices may differ
  for (int u = 0; u < c.n_users(); ++u) {
    const auto& a = c.sequence(u);
    const auto& b = d.corpus.sequence(u);
    REQUIRE(a.size() == b.size());
    for (size_t t = 0; t < a.size(); ++t)
      REQUIRE(c.item_tokens[static_cast<size_t>(a[t])] ==
              d.corpus.item_tokens[static_cast<size_t>(b[t])]);
  }
}
