#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "unger/fusion.hpp"
#include "unger/synthetic.hpp"

using namespace unger;
using namespace unger::test;

namespace {

FusionConfig micro_config(int d_c = 4, int hidden = 6) {
  FusionConfig cfg;
  cfg.d_c = d_c;
  cfg.hidden = hidden;
  cfg.batch_size = 3;
  cfg.history_window = 4;
  cfg.adam.warmup_steps = 20;
  cfg.seed = 7;
  return cfg;
}

// Straight-line re-implementation of the adaptation layer, double precision.
std::vector<double> adapt_oracle(const FusionModel<double>& m, const std::vector<double>& e) {
  const int dc = m.item_table.value.dim(1);
  const int ds = static_cast<int>(e.size());
  std::vector<double> h(static_cast<size_t>(dc));
  for (int i = 0; i < dc; ++i) {
    double s = m.adapt_b.value.at(i);
    for (int j = 0; j < ds; ++j) s += m.adapt_w.value.at(i, j) * e[static_cast<size_t>(j)];
    h[static_cast<size_t>(i)] = s;
  }
  double mu = 0;
  for (double v : h) mu += v;
  mu /= dc;
  double var = 0;
  for (double v : h) var += (v - mu) * (v - mu);
  var /= dc;
  double sd = std::max(std::sqrt(var), 1e-5);
  std::vector<double> out(static_cast<size_t>(dc));
  for (int i = 0; i < dc; ++i) {
    double gamma = m.cond_b.value.at(i);
    double delta = m.cond_b.value.at(dc + i);
    for (int j = 0; j < dc; ++j) {
      gamma += m.cond_w.value.at(i, j) * h[static_cast<size_t>(j)];
      delta += m.cond_w.value.at(dc + i, j) * h[static_cast<size_t>(j)];
    }
    out[static_cast<size_t>(i)] = gamma * (h[static_cast<size_t>(i)] - mu) / sd + delta;
  }
  return out;
}

// Direct InfoNCE summation over cosine similarities, double precision.
double align_oracle(const std::vector<std::vector<double>>& ec,
                    const std::vector<std::vector<double>>& et, double tau,
                    bool include_positive) {
  const int b = static_cast<int>(ec.size());
  auto cosine = [](const std::vector<double>& x, const std::vector<double>& y) {
    double d = 0, nx = 0, ny = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      d += x[i] * y[i];
      nx += x[i] * x[i];
      ny += y[i] * y[i];
    }
    return d / (std::sqrt(nx) * std::sqrt(ny));
  };
  double total = 0;
  for (int i = 0; i < b; ++i) {
    double denom = 0;
    for (int j = 0; j < b; ++j) {
      if (!include_positive && j == i) continue;
      denom += std::exp(cosine(ec[static_cast<size_t>(i)], et[static_cast<size_t>(j)]) / tau);
    }
    total += -std::log(std::exp(cosine(ec[static_cast<size_t>(i)], et[static_cast<size_t>(i)]) / tau) /
                       denom);
  }
  return total / b;
}

}  // namespace

TEST_CASE("adapt: identity configuration reproduces standardized inputs") {
  auto cfg = micro_config(3, 4);
  FusionModel<double> m(5, 3, cfg);
  // W = I, b = 0; conditioning is already gamma=1, delta=0 at init
  for (auto& v : m.adapt_w.value.data) v = 0;
  for (int i = 0; i < 3; ++i) m.adapt_w.value.at(i, i) = 1;
  for (auto& v : m.adapt_b.value.data) v = 0;

  Graph<double> g;
  auto b = m.bind(g, false);
  // [-a, 0, a] has mean 0 and population std a*sqrt(2/3); pick a so std == 1
  const double a = std::sqrt(3.0 / 2.0);
  auto rows = g.input(TensorT<double>({1, 3}, {-a, 0.0, a}));
  auto out = m.adapt_rows(g, b, rows);
  REQUIRE_THAT(out.value().data[0], Catch::Matchers::WithinAbs(-a, 1e-5));
  REQUIRE_THAT(out.value().data[1], Catch::Matchers::WithinAbs(0.0, 1e-5));
  REQUIRE_THAT(out.value().data[2], Catch::Matchers::WithinAbs(a, 1e-5));
}

TEST_CASE("adapt: constant rows hit the sigma floor and return delta") {
  auto cfg = micro_config(3, 4);
  FusionModel<double> m(5, 3, cfg);
  for (auto& v : m.adapt_w.value.data) v = 0;
  for (int i = 0; i < 3; ++i) m.adapt_w.value.at(i, i) = 1;
  Graph<double> g;
  auto b = m.bind(g, false);
  auto out = m.adapt_rows(g, b, g.input(TensorT<double>({1, 3}, {2.5, 2.5, 2.5})));
  // (h - mu) = 0, so output = delta(h) = 0 under the zero-init conditioning
  for (double v : out.value().data) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("adapt matches the straight-line oracle on random inputs") {
  Rng rng(17);
  auto cfg = micro_config(5, 6);
  FusionModel<double> m(4, 7, cfg);
  for (auto& v : m.cond_w.value.data) v = rng.uniform(-0.3, 0.3);
  for (auto& v : m.cond_b.value.data) v = rng.uniform(-0.5, 1.5);
  std::vector<double> e(7);
  for (auto& v : e) v = rng.uniform(-2, 2);
  Graph<double> g;
  auto b = m.bind(g, false);
  TensorT<double> rows({1, 7}, std::vector<double>(e));
  auto out = m.adapt_rows(g, b, g.input(rows));
  auto want = adapt_oracle(m, e);
  for (int i = 0; i < 5; ++i)
    REQUIRE_THAT(out.value().data[static_cast<size_t>(i)],
                 Catch::Matchers::WithinAbs(want[static_cast<size_t>(i)], 1e-6));
  REQUIRE_THROWS_AS(m.adapt_rows(g, b, g.input(TensorT<double>::zeros({1, 6}))), Error);
}

TEST_CASE("align_loss: indistinguishable pair costs ln 2") {
  Graph<double> g;
  auto ec = g.input(TensorT<double>({2, 3}, {1, 0, 0, 1, 0, 0}));
  auto et = g.input(TensorT<double>({2, 3}, {1, 0, 0, 1, 0, 0}));
  auto l = align_loss(g, ec, et, 1.0, true);
  REQUIRE_THAT(l.value().data[0], Catch::Matchers::WithinAbs(std::log(2.0), 1e-9));
}

TEST_CASE("align_loss: separated positives at small temperature vanish") {
  Graph<double> g;
  auto ec = g.input(TensorT<double>({2, 2}, {1, 0, 0, 1}));
  auto et = g.input(TensorT<double>({2, 2}, {1, 0, 0, 1}));
  auto l = align_loss(g, ec, et, 0.05, true);
  REQUIRE(l.value().data[0] < 1e-8);
  REQUIRE(l.value().data[0] >= 0.0);
}

TEST_CASE("align_loss matches the direct-summation oracle") {
  Rng rng(23);
  const int b = 4, d = 6;
  std::vector<std::vector<double>> ec(b, std::vector<double>(d)), et = ec;
  TensorT<double> ect = TensorT<double>::zeros({b, d}), ett = ect;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < d; ++j) {
      ec[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.uniform(-1, 1);
      et[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.uniform(-1, 1);
      ect.at(i, j) = ec[static_cast<size_t>(i)][static_cast<size_t>(j)];
      ett.at(i, j) = et[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
  for (bool inc : {true, false}) {
    Graph<double> g;
    auto l = align_loss(g, g.input(ect), g.input(ett), 0.7, inc);
    REQUIRE_THAT(l.value().data[0],
                 Catch::Matchers::WithinAbs(align_oracle(ec, et, 0.7, inc), 1e-6));
  }
}

TEST_CASE("align_loss is invariant under uniform rescaling (cosine)") {
  Rng rng(29);
  TensorT<double> ec = random_tensor({5, 4}, rng), et = random_tensor({5, 4}, rng);
  TensorT<double> ec10 = ec, et10 = et;
  for (auto& v : ec10.data) v *= 10.0;
  for (auto& v : et10.data) v *= 10.0;
  Graph<double> g;
  auto a = align_loss(g, g.input(ec), g.input(et), 1.0, true);
  auto b = align_loss(g, g.input(ec10), g.input(et10), 1.0, true);
  REQUIRE_THAT(a.value().data[0], Catch::Matchers::WithinAbs(b.value().data[0], 1e-6));
}

TEST_CASE("align_loss decreases when diagonal similarity rises, negatives fixed") {
  // E_C = basis rows; E_T = a*e_i + b*e_last keeps off-diagonal cosines at 0
  auto build = [](double a) {
    const int b = 3, d = 4;
    TensorT<double> ec = TensorT<double>::zeros({b, d}), et = TensorT<double>::zeros({b, d});
    for (int i = 0; i < b; ++i) {
      ec.at(i, i) = 1.0;
      et.at(i, i) = a;
      et.at(i, d - 1) = 1.0;
    }
    Graph<double> g;
    return align_loss(g, g.input(ec), g.input(et), 1.0, true).value().data[0];
  };
  double prev = build(0.2);
  for (double a : {0.5, 1.0, 2.0, 4.0}) {
    double cur = build(a);
    REQUIRE(cur < prev);
    prev = cur;
  }
}

TEST_CASE("align_loss rejects batches without negatives") {
  Graph<double> g;
  auto one = g.input(TensorT<double>({1, 3}, {1, 2, 3}));
  REQUIRE_THROWS_AS(align_loss(g, one, one, 1.0, true), Error);
}

TEST_CASE("next_item_loss: singleton corpus scores zero") {
  auto cfg = micro_config();
  FusionModel<double> m(1, 3, cfg);
  Graph<double> g;
  auto b = m.bind(g, false);
  auto l = next_item_loss(m, g, b, {{0, 0}}, {0});
  REQUIRE_THAT(l.value().data[0], Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("next_item_loss: untrained model sits near ln(n_items)") {
  SyntheticSpec spec{6, 32, 300, 8, 0.8, 0.15, 24, 3};
  auto data = generate_synthetic(spec);
  auto cfg = micro_config(16, 24);
  FusionModel<double> m(data.corpus.n_items(), spec.semantic_dim, cfg);
  std::vector<std::vector<int>> histories;
  std::vector<int> targets;
  Rng rng(5);
  auto pairs = detail::training_pairs(data.corpus);
  detail::fill_batch(data.corpus, pairs, rng, 1000, 20, histories, targets);
  Graph<double> g;
  auto b = m.bind(g, false);
  auto l = next_item_loss(m, g, b, histories, targets);
  REQUIRE_THAT(l.value().data[0],
               Catch::Matchers::WithinAbs(std::log(data.corpus.n_items()), 0.15));
}

TEST_CASE("empty history is rejected") {
  auto cfg = micro_config();
  FusionModel<double> m(4, 3, cfg);
  Graph<double> g;
  auto b = m.bind(g, false);
  REQUIRE_THROWS_WITH(next_item_loss(m, g, b, {{}}, {0}),
                      Catch::Matchers::ContainsSubstring("empty history"));
}

TEST_CASE("stage 1 joint loss passes the finite-difference gradient check") {
  // micro model: n_items=6, d=4
  SyntheticSpec spec{2, 3, 12, 5, 0.7, 0.2, 5, 11};
  auto data = generate_synthetic(spec);
  auto cfg = micro_config(4, 5);
  cfg.alpha = 0.8;
  cfg.tau = 0.9;
  FusionModel<double> m(6, 5, cfg);
  TensorT<double> es = data.semantic.as_tensor<double>();
  std::vector<std::vector<int>> histories{{0, 1, 3}, {2}, {4, 5}};
  std::vector<int> targets{2, 4, 1};

  auto params = m.params();
  auto err = fd_max_err(params, [&](Graph<double>& g) {
    auto b = m.bind(g);
    auto es_var = g.input(es);
    auto l_seq = next_item_loss(m, g, b, histories, targets);
    auto ec = gather_rows(b.table, targets, {3});
    auto et = m.adapt_rows(g, b, gather_rows(es_var, targets, {3}));
    return add(l_seq, scale(align_loss(g, ec, et, cfg.tau, true), cfg.alpha));
  });
  REQUIRE(err < 1e-3);
}

TEST_CASE("alpha=0 decouples the adaptation layer") {
  SyntheticSpec spec{3, 4, 40, 6, 0.8, 0.2, 8, 13};
  auto data = generate_synthetic(spec);
  auto cfg = micro_config(6, 8);
  FusionModel<double> m(data.corpus.n_items(), spec.semantic_dim, cfg);
  TensorT<double> es = data.semantic.as_tensor<double>();
  std::vector<std::vector<int>> histories{{0, 5}, {3, 2, 9}, {1}};
  std::vector<int> targets{4, 7, 0};

  auto run = [&](double alpha) {
    for (auto* p : m.params()) p->zero_grad();
    Graph<double> g;
    auto b = m.bind(g);
    auto es_var = g.input(es);
    auto l_seq = next_item_loss(m, g, b, histories, targets);
    auto ec = gather_rows(b.table, targets, {3});
    auto et = m.adapt_rows(g, b, gather_rows(es_var, targets, {3}));
    auto l_align = align_loss(g, ec, et, 1.0, true);
    auto loss = alpha == 0.0 ? l_seq : add(l_seq, scale(l_align, alpha));
    g.backward(loss);
    double adapt_norm = 0;
    for (auto* p : m.adaptation_params())
      for (double v : p->grad.data) adapt_norm += v * v;
    return adapt_norm;
  };
  REQUIRE(run(0.0) == 0.0);
  REQUIRE(run(1.0) > 0.0);
}

TEST_CASE("alpha=0 training equals a run with alignment monitoring enabled") {
  SyntheticSpec spec{3, 4, 40, 6, 0.8, 0.2, 8, 17};
  auto data = generate_synthetic(spec);
  auto cfg = micro_config(6, 8);
  cfg.alpha = 0.0;
  cfg.steps = 40;
  cfg.batch_size = 8;
  auto run = [&](bool monitor) {
    FusionModel<float> m(data.corpus.n_items(), spec.semantic_dim, cfg);
    train_stage1(m, data.corpus, data.semantic, monitor);
    return m.item_table.value.data;
  };
  REQUIRE(run(false) == run(true));
}

TEST_CASE("stage 1 training learns the synthetic structure") {
  SyntheticSpec spec{8, 8, 400, 10, 0.9, 0.1, 16, 19};
  auto data = generate_synthetic(spec);
  FusionConfig cfg;
  cfg.d_c = 16;
  cfg.hidden = 32;
  cfg.batch_size = 32;
  cfg.steps = 1200;
  cfg.adam.warmup_steps = 100;
  cfg.seed = 19;
  FusionModel<float> m(data.corpus.n_items(), spec.semantic_dim, cfg);
  auto curve = train_stage1(m, data.corpus, data.semantic);

  // final smoothed L_seq beats the uniform baseline by at least 0.5 nats
  double tail = 0;
  for (int i = 0; i < 100; ++i) tail += curve.seq_loss[curve.seq_loss.size() - 1 - i];
  tail /= 100;
  REQUIRE(tail < std::log(data.corpus.n_items()) - 0.5);
  for (double v : curve.total_loss) REQUIRE(std::isfinite(v));
}

TEST_CASE("smoothed stage 1 loss is non-increasing across 2000-step windows") {
  SyntheticSpec spec{4, 8, 200, 8, 0.85, 0.1, 8, 23};
  auto data = generate_synthetic(spec);
  FusionConfig cfg;
  cfg.d_c = 8;
  cfg.hidden = 12;
  cfg.batch_size = 16;
  cfg.steps = 2400;
  cfg.adam.warmup_steps = 200;
  cfg.seed = 23;
  FusionModel<float> m(data.corpus.n_items(), spec.semantic_dim, cfg);
  auto curve = train_stage1(m, data.corpus, data.semantic);

  const int w = 200;
  std::vector<double> ma;
  double acc = 0;
  for (size_t i = 0; i < curve.total_loss.size(); ++i) {
    acc += curve.total_loss[i];
    if (i + 1 >= static_cast<size_t>(w)) {
      ma.push_back(acc / w);
      acc -= curve.total_loss[i + 1 - w];
    }
  }
  for (size_t t = 0; t + 2000 < ma.size(); ++t)
    REQUIRE(ma[t + 2000] <= ma[t] + 1e-3 + 1e-3 * std::abs(ma[t]));
}

TEST_CASE("export variants") {
  auto cfg = micro_config(3, 4);
  FusionModel<double> m(4, 3, cfg);
  std::vector<std::string> tokens{"a", "b", "c", "d"};

  SECTION("table variant returns the item table") {
    auto e = export_integrated(m, EmbeddingMatrix::zeros(4, 3), tokens);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j)
        REQUIRE(e.at(i, j) == static_cast<float>(m.item_table.value.at(i, j)));
    REQUIRE(e.tokens == tokens);
  }

  SECTION("mean variant under identity adaptation with E_S = E_C returns E_C") {
    // identity adaptation: W=I, b=0, gamma=1, delta=0 (init); rows standardized
    for (auto& v : m.adapt_w.value.data) v = 0;
    for (int i = 0; i < 3; ++i) m.adapt_w.value.at(i, i) = 1;
    const double a = std::sqrt(3.0 / 2.0);
    for (int i = 0; i < 4; ++i) {
      m.item_table.value.at(i, 0) = -a;
      m.item_table.value.at(i, 1) = 0;
      m.item_table.value.at(i, 2) = a;
    }
    auto es = EmbeddingMatrix::from_tensor(m.item_table.value);
    auto e = export_integrated(m, es, tokens, IntegratedVariant::kMean);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j)
        REQUIRE_THAT(double(e.at(i, j)),
                     Catch::Matchers::WithinAbs(double(m.item_table.value.at(i, j)), 1e-5));
  }
}

TEST_CASE("alignment raises table-to-adapted cosine over the alpha=0 run") {
  SyntheticSpec spec{4, 8, 250, 8, 0.85, 0.1, 12, 29};
  auto data = generate_synthetic(spec);
  FusionConfig cfg;
  cfg.d_c = 12;
  cfg.hidden = 16;
  cfg.batch_size = 24;
  cfg.steps = 600;
  cfg.adam.warmup_steps = 100;
  cfg.seed = 29;

  auto mean_cosine = [&](double alpha) {
    FusionConfig c = cfg;
    c.alpha = alpha;
    FusionModel<float> m(data.corpus.n_items(), spec.semantic_dim, c);
    train_stage1(m, data.corpus, data.semantic);
    Graph<float> g;
    auto b = m.bind(g, false);
    auto et = m.adapt_rows(g, b, g.input(data.semantic.as_tensor<float>()));
    double total = 0;
    const auto& tv = m.item_table.value;
    for (int i = 0; i < data.corpus.n_items(); ++i) {
      double dot = 0, nc = 0, nt = 0;
      for (int j = 0; j < c.d_c; ++j) {
        dot += double(tv.at(i, j)) * et.value().at(i, j);
        nc += double(tv.at(i, j)) * tv.at(i, j);
        nt += double(et.value().at(i, j)) * et.value().at(i, j);
      }
      total += dot / std::max(std::sqrt(nc * nt), 1e-12);
    }
    return total / data.corpus.n_items();
  };
  REQUIRE(mean_cosine(1.0) > mean_cosine(0.0));
}
