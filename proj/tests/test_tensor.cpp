#include <catch2/catch_amalgamated.hpp>

#include "unger/graph.hpp"
#include "unger/nn.hpp"

using namespace unger;

TEST_CASE("matmul identity") {
  Graph<float> g;
  auto a = g.input(Tensor({2, 2}, {1, 2, 3, 4}));
  auto id = g.input(Tensor({2, 2}, {1, 0, 0, 1}));
  auto c = matmul(a, id);
  REQUIRE(c.value().data == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("matmul transpose flags agree with explicit transposition") {
  Rng rng(7);
  Tensor a = Tensor::zeros({3, 4}), b = Tensor::zeros({3, 5});
  for (auto& v : a.data) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b.data) v = static_cast<float>(rng.uniform(-1, 1));
  Graph<float> g;
  auto va = g.input(a), vb = g.input(b);
  auto c = matmul(va, vb, true, false);  // (4,3)x(3,5)
  REQUIRE(c.shape() == Shape{4, 5});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) {
      double want = 0;
      for (int k = 0; k < 3; ++k) want += double(a.at(k, i)) * double(b.at(k, j));
      REQUIRE_THAT(double(c.value().at(i, j)), Catch::Matchers::WithinAbs(want, 1e-5));
    }
}

TEST_CASE("matmul batched against per-slice") {
  Rng rng(11);
  Tensor a = Tensor::zeros({2, 3, 4}), b = Tensor::zeros({4, 2});
  for (auto& v : a.data) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b.data) v = static_cast<float>(rng.uniform(-1, 1));
  Graph<float> g;
  auto c = matmul(g.input(a), g.input(b));
  REQUIRE(c.shape() == Shape{2, 3, 2});
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) {
        double want = 0;
        for (int k = 0; k < 4; ++k) want += double(a.at(s, i, k)) * double(b.at(k, j));
        REQUIRE_THAT(double(c.value().at(s, i, j)), Catch::Matchers::WithinAbs(want, 1e-5));
      }
}

TEST_CASE("shape mismatch errors name both shapes") {
  Graph<float> g;
  auto a = g.input(Tensor::zeros({2, 3}));
  auto b = g.input(Tensor::zeros({4, 5}));
  REQUIRE_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("(2,3)") &&
                                        Catch::Matchers::ContainsSubstring("(4,5)"));
  REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("(2,3)") &&
                                     Catch::Matchers::ContainsSubstring("(4,5)"));
}

TEST_CASE("non-finite input rejected") {
  Graph<float> g;
  Tensor t = Tensor::zeros({2});
  t.data[1] = std::numeric_limits<float>::infinity();
  REQUIRE_THROWS_AS(g.input(t), Error);
}

TEST_CASE("softmax symmetry and normalization") {
  Graph<float> g;
  auto s = softmax_last(g.input(Tensor({2}, {0, 0})));
  REQUIRE_THAT(double(s.value().data[0]), Catch::Matchers::WithinAbs(0.5, 1e-7));
  REQUIRE_THAT(double(s.value().data[1]), Catch::Matchers::WithinAbs(0.5, 1e-7));

  // property: non-negative rows summing to 1 +/- 1e-5
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    int b = 1 + int(rng.below(5)), n = 1 + int(rng.below(7));
    Tensor x = Tensor::zeros({b, n});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-30, 30));
    Graph<float> g2;
    auto y = softmax_last(g2.input(x));
    for (int r = 0; r < b; ++r) {
      double sum = 0;
      for (int j = 0; j < n; ++j) {
        REQUIRE(y.value().at(r, j) >= 0.0f);
        sum += double(y.value().at(r, j));
      }
      REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-5));
    }
  }
}

TEST_CASE("cross entropy of uniform logits is ln V") {
  Graph<float> g;
  auto ce = cross_entropy_mean(g.input(Tensor({4}, {0, 0, 0, 0})), {2});
  REQUIRE_THAT(double(ce.value().data[0]),
               Catch::Matchers::WithinAbs(std::log(4.0), 1e-6));
}

TEST_CASE("cross entropy rejects out-of-vocabulary targets") {
  Graph<float> g;
  auto l = g.input(Tensor::zeros({2, 3}));
  REQUIRE_THROWS_AS(cross_entropy_mean(l, {0, 3}), Error);
}

TEST_CASE("broadcast add: row, column, scalar") {
  Graph<float> g;
  auto a = g.input(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto row = g.input(Tensor({3}, {10, 20, 30}));
  auto col = g.input(Tensor({2, 1}, {100, 200}));
  auto sc = g.input(Tensor({1}, {7}));
  REQUIRE(add(a, row).value().data == std::vector<float>{11, 22, 33, 14, 25, 36});
  REQUIRE(add(a, col).value().data == std::vector<float>{101, 102, 103, 204, 205, 206});
  REQUIRE(add(a, sc).value().data == std::vector<float>{8, 9, 10, 11, 12, 13});
}

TEST_CASE("concat and slice round trip") {
  Graph<float> g;
  auto a = g.input(Tensor({2, 2}, {1, 2, 3, 4}));
  auto b = g.input(Tensor({2, 3}, {5, 6, 7, 8, 9, 10}));
  auto c = concat_last(std::vector<Var<float>>{a, b});
  REQUIRE(c.shape() == Shape{2, 5});
  auto back = slice_last(c, 2, 3);
  REQUIRE(back.value().data == b.value().data);
}

TEST_CASE("layer_norm centres and scales") {
  Graph<float> g;
  Param<float> gamma("g", Tensor({4}, {1, 1, 1, 1}));
  Param<float> beta("b", Tensor::zeros({4}));
  auto x = g.input(Tensor({1, 4}, {2, 4, 6, 8}));
  auto y = layer_norm(x, g.param(gamma), g.param(beta));
  double mean = 0, var = 0;
  for (int j = 0; j < 4; ++j) mean += double(y.value().at(0, j)) / 4;
  for (int j = 0; j < 4; ++j) {
    double d = double(y.value().at(0, j)) - mean;
    var += d * d / 4;
  }
  REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-6));
  REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-4));
}

TEST_CASE("gather rows and select mid") {
  Graph<float> g;
  auto t = g.input(Tensor({3, 2}, {0, 1, 10, 11, 20, 21}));
  auto rows = gather_rows(t, {2, 0, 2, 1}, {2, 2});
  REQUIRE(rows.shape() == Shape{2, 2, 2});
  REQUIRE(rows.value().at(0, 0, 0) == 20.0f);
  REQUIRE(rows.value().at(1, 1, 1) == 11.0f);
  auto sel = select_mid(rows, 1);
  REQUIRE(sel.value().data == std::vector<float>{0, 1, 10, 11});

  REQUIRE_THROWS_AS(gather_rows(t, {3}, {1}), Error);
}
