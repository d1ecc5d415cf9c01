#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "consformer/attention.hpp"
#include "consformer/errors.hpp"
#include "support.hpp"

namespace cf {
namespace {

using attention::AttentionConfig;
using attention::ScaleMode;
using test::random_tensor;

bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

TEST(AttentionConfig, Validation) {
  EXPECT_THROW((AttentionConfig{6, 4, true, true}.validate()), ContractError);
  EXPECT_THROW((AttentionConfig{8, 2, false, false}.validate()), ContractError);
  EXPECT_NO_THROW((AttentionConfig{8, 2, false, true}.validate()));
  EXPECT_DOUBLE_EQ((AttentionConfig{16, 4, true, true, ScaleMode::kModel}.scale()), 4.0);
  EXPECT_DOUBLE_EQ((AttentionConfig{16, 4, true, true, ScaleMode::kHead}.scale()), 2.0);
}

TEST(ProjectQkv, IdentityAndHeadSlices) {
  std::mt19937_64 rng(20);
  const Tensor f = random_tensor(Shape{3, 4}, rng);
  Graph g;
  const Var eye = g.constant(Tensor::identity(4));
  const auto one = attention::project_qkv(g.constant(f), eye, eye, eye, 1);
  EXPECT_EQ(one.q.value().reshaped(Shape{3, 4}), f);
  const auto two = attention::project_qkv(g.constant(f), eye, eye, eye, 2);
  EXPECT_EQ(two.q.shape(), Shape({2, 3, 2}));
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(two.k.value().at(h, i, j), f.at(i, 2 * h + j));
    }
  }
}

TEST(AttentionScores, Examples) {
  Graph g;
  const Var zero = g.constant(Tensor(Shape{1, 4, 2}));
  const std::vector<std::uint8_t> keep{1, 1, 0, 1};
  const Var a = attention::attention_scores(zero, zero, 1.0, keep);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(a.value().at(0, i, 0), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(a.value().at(0, i, 2), 0.0);
  }
  const Var single = attention::attention_scores(g.constant(Tensor(Shape{1, 1, 2})), g.constant(Tensor(Shape{1, 1, 2})), 1.0);
  EXPECT_EQ(single.value().item(), 1.0);
  const std::vector<std::uint8_t> none{0, 0, 0, 0};
  EXPECT_THROW(attention::attention_scores(zero, zero, 1.0, none), DegenerateRowError);
}

TEST(AttentionScores, MatchesDirectEvaluation) {
  std::mt19937_64 rng(21);
  const Tensor q = random_tensor(Shape{1, 3, 4}, rng);
  const Tensor k = random_tensor(Shape{1, 3, 4}, rng);
  const double scale = 2.0;
  Graph g;
  const Var a = attention::attention_scores(g.constant(q), g.constant(k), scale);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> logits;
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 4; ++c) dot += q.at(0, i, c) * k.at(0, j, c);
      logits.push_back(dot / scale);
    }
    const auto want = test::oracle::softmax(logits);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a.value().at(0, i, j), want[j], 1e-12);
  }
}

struct GateFixture {
  std::mt19937_64 rng{22};
  Tensor a, log_c;
  GateFixture(std::size_t heads, std::size_t n) {
    Graph g;
    a = ops::softmax_rows(g.constant(random_tensor(Shape{heads, n, n}, rng, -2, 2))).value();
    log_c = Tensor(Shape{n, n});
    std::uniform_real_distribution<double> unit(0.05, 1.0);
    std::vector<double> p(n - 1);
    for (double& x : p) x = unit(rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) log_c.at(i, j) = std::log(test::oracle::direct_product(p, i, j));
    }
  }
};

TEST(Gate, EntrywiseProductAndHeadBroadcast) {
  GateFixture fx(3, 5);
  Graph g;
  const auto s = attention::gate(g.constant(fx.a), g.constant(fx.log_c), {9, 3, true, true});
  for (std::size_t h = 0; h < 3; ++h) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_EQ(s.s.value().at(h, i, j), fx.a.at(h, i, j) * std::exp(fx.log_c.at(i, j)));
        EXPECT_LE(s.s.value().at(h, i, j), fx.a.at(h, i, j));
      }
    }
  }
}

TEST(Gate, IdentityCasesAreBitExact) {
  GateFixture fx(2, 6);
  Graph g;
  const Var a = g.constant(fx.a);
  const auto ones = attention::gate(a, g.constant(Tensor(Shape{6, 6})), {8, 2, true, true});
  EXPECT_TRUE(bit_identical(ones.s.value(), fx.a));
  const auto a_only = attention::gate(a, g.constant(fx.log_c), {8, 2, true, false});
  EXPECT_TRUE(bit_identical(a_only.s.value(), fx.a));
}

TEST(Gate, ConstituentOnlyZeroesMaskedColumns) {
  GateFixture fx(2, 4);
  Graph g;
  const std::vector<std::uint8_t> keep{1, 1, 1, 0};
  const auto s = attention::gate(g.constant(fx.a), g.constant(fx.log_c), {8, 2, false, true}, keep);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(s.s.value().at(h, i, 3), 0.0);
      for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s.s.value().at(h, i, j), std::exp(fx.log_c.at(i, j)));
    }
  }
}

TEST(Attend, IdentityAndAnnihilation) {
  std::mt19937_64 rng(23);
  const Tensor v = random_tensor(Shape{2, 3, 2}, rng);
  Graph g;
  Tensor eye(Shape{2, 3, 3});
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 3; ++i) eye.at(h, i, i) = 1.0;
  }
  const Var out = attention::attend({g.constant(eye)}, g.constant(v), g.constant(Tensor::identity(4)));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out.value().at(i, 2 * h + c), v.at(h, i, c));
    }
  }
  const Var zero = attention::attend({g.constant(Tensor(Shape{2, 3, 3}))}, g.constant(v), g.constant(Tensor::identity(4)));
  for (double x : zero.value().data()) EXPECT_EQ(x, 0.0);
}

struct LayerStore {
  ParamStore store;
  Tensor f;
  explicit LayerStore(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (const char* name : {"W", "W_q", "W_k", "W_v", "W_o"}) store.add(name, random_tensor(Shape{d, d}, rng, -0.6, 0.6));
    f = random_tensor(Shape{n, d}, rng);
  }
  attention::LayerParams bind(Graph& g) {
    return {g.param(store, "W"), g.param(store, "W_q"), g.param(store, "W_k"), g.param(store, "W_v"),
            g.param(store, "W_o")};
  }
};

TEST(ConstituentAttention, FullLayerGradient) {
  for (auto [use_a, use_c] : {std::pair{true, true}, std::pair{true, false}, std::pair{false, true}}) {
    LayerStore ls(6, 8, 24);
    std::mt19937_64 rng(25);
    const Tensor weights = random_tensor(Shape{6, 8}, rng, 0.5, 1.5);
    const AttentionConfig cfg{8, 2, use_a, use_c};
    const auto groups = check_gradients(
        [&](Graph& g, ParamStore&) {
          const auto out = attention::constituent_attention(g.constant(ls.f), ls.bind(g), cfg);
          return test::weighted_sum(out.out, weights);
        },
        ls.store, 1e-6, 1e-4, 1e-5);
    for (const auto& gr : groups) {
      const bool used = gr.name == "W_v" || gr.name == "W_o" || (use_a && (gr.name == "W_q" || gr.name == "W_k")) ||
                        (use_c && gr.name == "W");
      EXPECT_TRUE(gr.passed) << gr.name << " " << gr.max_rel_error;
      if (used) {
        EXPECT_GT(gr.max_abs_analytic, 0.0) << gr.name;
      }
    }
  }
}

TEST(ConstituentAttention, RenormalisedGateHasUnitRows) {
  LayerStore ls(6, 8, 28);
  Graph g;
  attention::AttentionConfig cfg{8, 2, true, true};
  const auto plain = attention::constituent_attention(g.constant(ls.f), ls.bind(g), cfg);
  cfg.renormalize = true;
  const auto norm = attention::constituent_attention(g.constant(ls.f), ls.bind(g), cfg);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 6; ++i) {
      double row = 0.0, plain_row = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        row += norm.scores.s.value().at(h, i, j);
        plain_row += plain.scores.s.value().at(h, i, j);
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
      EXPECT_LT(plain_row, 1.0);
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_NEAR(norm.scores.s.value().at(h, i, j), plain.scores.s.value().at(h, i, j) / plain_row, 1e-12);
      }
    }
  }
  std::mt19937_64 rng(29);
  const Tensor weights = random_tensor(Shape{6, 8}, rng, 0.5, 1.5);
  const auto groups = check_gradients(
      [&](Graph& gg, ParamStore&) {
        return test::weighted_sum(attention::constituent_attention(gg.constant(ls.f), ls.bind(gg), cfg).out, weights);
      },
      ls.store, 1e-6, 1e-4, 1e-5);
  EXPECT_TRUE(test::all_passed(groups));
}

TEST(ConstituentAttention, PaddedKeysGetNoMass) {
  LayerStore ls(5, 4, 26);
  Graph g;
  const std::vector<std::uint8_t> keep{1, 1, 1, 0, 0};
  const auto out = attention::constituent_attention(g.constant(ls.f), ls.bind(g), {4, 2, true, true}, keep);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(out.scores.s.value().at(h, i, 3), 0.0);
      EXPECT_EQ(out.scores.s.value().at(h, i, 4), 0.0);
    }
  }
}

TEST(ConstituentAttention, AOnlyEqualsPlainSelfAttention) {
  LayerStore ls(6, 8, 27);
  Graph g;
  const auto p = ls.bind(g);
  const AttentionConfig cfg{8, 2, true, false};
  const auto gated = attention::constituent_attention(g.constant(ls.f), p, cfg);
  const Var plain = attention::self_attention(g.constant(ls.f), p.w_q, p.w_k, p.w_v, p.w_o, 2, cfg.scale());
  EXPECT_TRUE(bit_identical(gated.out.value(), plain.value()));
}

}  // namespace
}  // namespace cf
