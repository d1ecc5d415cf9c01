#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "consformer/adam.hpp"
#include "consformer/checkpoint.hpp"
#include "consformer/errors.hpp"
#include "support.hpp"

namespace cf {
namespace {

using test::check_op;
using test::random_tensor;

TEST(Shape, RejectsRankAboveThree) {
  EXPECT_THROW(Shape({1, 2, 3, 4}), DimensionError);
}

TEST(Tensor, DataLengthMatchesShape) {
  Tensor t(Shape{2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(ParamStore, ZeroGradResetsEveryBuffer) {
  ParamStore store;
  store.add("a", Tensor::filled(Shape{2, 2}, 1.0));
  store.add("b", Tensor::filled(Shape{3}, 2.0));
  store.grad("a").fill(5.0);
  store.grad("b").fill(-1.0);
  EXPECT_EQ(store.grad("a").shape(), store.value("a").shape());
  store.zero_grad();
  for (const auto& [name, e] : store) {
    for (double g : e.grad.data()) EXPECT_EQ(g, 0.0) << name;
  }
  EXPECT_THROW(store.add("a", Tensor(Shape{1})), ContractError);
}

TEST(Matmul, IdentityAndOrthogonalRows) {
  Graph g;
  const Var m = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(ops::matmul(g.constant(Tensor::identity(2)), m).value(), m.value());
  const Var z = ops::matmul(g.constant(Tensor::matrix({{1, 0}})), g.constant(Tensor::matrix({{0}, {1}})));
  EXPECT_EQ(z.value(), Tensor::matrix({{0}}));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Graph g;
  try {
    ops::matmul(g.constant(Tensor(Shape{2, 3})), g.constant(Tensor(Shape{2, 3})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  ParamStore store;
  store.add("a", random_tensor(Shape{4, 3}, rng));
  store.add("b", random_tensor(Shape{3, 5}, rng));
  const auto groups = check_gradients(
      [](Graph& g, ParamStore& s) { return ops::sum(ops::matmul(g.param(s, "a"), g.param(s, "b"))); }, store,
      1e-6, 1e-6, 1e-5);
  EXPECT_TRUE(test::all_passed(groups));
}

TEST(Softmax, Examples) {
  Graph g;
  const Var s = ops::softmax_rows(g.constant(Tensor::matrix({{0, 0}, {1000, 0}})));
  EXPECT_DOUBLE_EQ(s.value().at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.value().at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(s.value().at(1, 0), 1.0);
  EXPECT_TRUE(s.value().all_finite());

  const ops::Mask mask(1, 3, {1, 1, 0});
  const Var m = ops::softmax_rows(g.constant(Tensor::matrix({{1, 2, 3}})), &mask);
  const auto want = test::oracle::softmax({1, 2});
  EXPECT_NEAR(m.value().at(0, 0), want[0], 1e-15);
  EXPECT_NEAR(m.value().at(0, 1), want[1], 1e-15);
  EXPECT_EQ(m.value().at(0, 2), 0.0);
}

TEST(Softmax, FullyMaskedRowIsDegenerate) {
  Graph g;
  const ops::Mask mask(2, 2, {1, 0, 0, 0});
  EXPECT_THROW(ops::softmax_rows(g.constant(Tensor(Shape{2, 2})), &mask), DegenerateRowError);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Graph g;
    const Var s = ops::softmax_rows(g.constant(random_tensor(Shape{5, 7}, rng, -30, 30)));
    for (std::size_t i = 0; i < 5; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = s.value().at(i, j);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        row += v;
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, Examples) {
  Graph g;
  const Var gain = g.constant(Tensor::filled(Shape{2}, 1.0));
  const Var bias = g.constant(Tensor(Shape{2}));
  const Var c = ops::layer_norm(g.constant(Tensor::matrix({{3, 3}})), gain, bias);
  EXPECT_EQ(c.value(), Tensor::matrix({{0, 0}}));
  const Var u = ops::layer_norm(g.constant(Tensor::matrix({{1, -1}})), gain, bias, 1e-300);
  EXPECT_NEAR(u.value().at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(u.value().at(0, 1), -1.0, 1e-12);
}

TEST(LayerNorm, RowsAreStandardised) {
  std::mt19937_64 rng(4);
  Graph g;
  const Var y = ops::layer_norm(g.constant(random_tensor(Shape{3, 4}, rng, -5, 5)),
                                g.constant(Tensor::filled(Shape{4}, 1.0)), g.constant(Tensor(Shape{4})), 1e-12);
  for (std::size_t i = 0; i < 3; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 4; ++j) mean += y.value().at(i, j) / 4;
    for (std::size_t j = 0; j < 4; ++j) var += std::pow(y.value().at(i, j) - mean, 2) / 4;
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Elementwise, Examples) {
  Graph g;
  EXPECT_NEAR(ops::exp(ops::log(g.constant(Tensor::scalar(0.25)))).value().item(), 0.25, 1e-15);
  EXPECT_NEAR(ops::sqrt(ops::mul(g.constant(Tensor::scalar(0.8)), g.constant(Tensor::scalar(0.2)))).value().item(),
              0.4, 1e-15);
  EXPECT_THROW(ops::log(g.constant(Tensor::vector({1.0, 0.0}))), DomainError);
  EXPECT_THROW(ops::sqrt(g.constant(Tensor::vector({-1.0}))), DomainError);
}

TEST(Elementwise, ExpOfSumOfLogsGradient) {
  std::mt19937_64 rng(5);
  ParamStore store;
  store.add("p", random_tensor(Shape{6}, rng, 0.1, 1.0));
  const auto groups = check_gradients(
      [](Graph& g, ParamStore& s) { return ops::exp(ops::sum(ops::log(g.param(s, "p")))); }, store, 1e-6, 1e-6,
      1e-5);
  EXPECT_TRUE(test::all_passed(groups));
}

TEST(ConcatRows, SegmentsAndRoundTrip) {
  std::mt19937_64 rng(6);
  Graph g;
  const Var a = g.constant(random_tensor(Shape{2, 3}, rng));
  const Var b = g.constant(random_tensor(Shape{1, 3}, rng));
  const std::vector<Var> parts{a, b};
  const ops::Stacked s = ops::concat_rows(parts);
  EXPECT_EQ(s.rows.shape(), Shape({3, 3}));
  EXPECT_EQ(s.segments[0], (ops::RowRange{0, 2}));
  EXPECT_EQ(s.segments[1], (ops::RowRange{2, 3}));
  EXPECT_EQ(ops::slice_rows(s.rows, 0, 2).value(), a.value());
  EXPECT_EQ(ops::slice_rows(s.rows, 2, 3).value(), b.value());

  const std::vector<Var> single{a};
  EXPECT_EQ(ops::concat_rows(single).rows.value(), a.value());

  const std::vector<Var> bad{a, g.constant(Tensor(Shape{1, 4}))};
  EXPECT_THROW(ops::concat_rows(bad), DimensionError);
}

// Every differentiable op against finite differences on shapes up to 8×8.
TEST(Gradients, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto t = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor(s, rng, lo, hi); };
  using V = std::vector<Var>;
  struct Case {
    const char* name;
    std::map<std::string, Tensor> inputs;
    std::function<Var(Graph&, V&)> op;
  };
  const ops::Mask mask(4, 5, {1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 1, 1, 1, 1});
  std::vector<Case> cases = {
      {"matmul", {{"a", t({4, 3})}, {"b", t({3, 5})}}, [](Graph&, V& v) { return ops::matmul(v[0], v[1]); }},
      {"matmul batched", {{"a", t({2, 3, 4})}, {"b", t({2, 4, 3})}}, [](Graph&, V& v) { return ops::matmul(v[0], v[1]); }},
      {"matmul_nt", {{"a", t({4, 3})}, {"b", t({5, 3})}}, [](Graph&, V& v) { return ops::matmul_nt(v[0], v[1]); }},
      {"add", {{"a", t({3, 4})}, {"b", t({3, 4})}}, [](Graph&, V& v) { return ops::add(v[0], v[1]); }},
      {"sub", {{"a", t({3, 4})}, {"b", t({3, 4})}}, [](Graph&, V& v) { return ops::sub(v[0], v[1]); }},
      {"mul", {{"a", t({3, 4})}, {"b", t({3, 4})}}, [](Graph&, V& v) { return ops::mul(v[0], v[1]); }},
      {"scale", {{"a", t({8, 8})}}, [](Graph&, V& v) { return ops::scale(v[0], -2.5); }},
      {"add_row_bias", {{"a", t({3, 4})}, {"b", t({4})}}, [](Graph&, V& v) { return ops::add_row_bias(v[0], v[1]); }},
      {"exp", {{"a", t({3, 4})}}, [](Graph&, V& v) { return ops::exp(v[0]); }},
      {"log", {{"a", t({3, 4}, 0.2, 2.0)}}, [](Graph&, V& v) { return ops::log(v[0]); }},
      {"sqrt", {{"a", t({3, 4}, 0.2, 2.0)}}, [](Graph&, V& v) { return ops::sqrt(v[0]); }},
      {"clamp", {{"a", t({4, 4}, -2.0, 2.0)}}, [](Graph&, V& v) { return ops::clamp(v[0], -0.9, 0.9); }},
      {"gelu", {{"a", t({4, 4}, -3.0, 3.0)}}, [](Graph&, V& v) { return ops::gelu(v[0]); }},
      {"softmax", {{"a", t({4, 5}, -3.0, 3.0)}}, [](Graph&, V& v) { return ops::softmax_rows(v[0]); }},
      {"softmax masked", {{"a", t({4, 5}, -3.0, 3.0)}}, [&](Graph&, V& v) { return ops::softmax_rows(v[0], &mask); }},
      {"layer_norm",
       {{"a", t({3, 6}, -2.0, 2.0)}, {"b", t({6})}, {"c", t({6})}},
       [](Graph&, V& v) { return ops::layer_norm(v[0], v[1], v[2]); }},
      {"concat_rows",
       {{"a", t({2, 3})}, {"b", t({1, 3})}},
       [](Graph&, V& v) {
         const std::vector<Var> parts{v[0], v[1]};
         return ops::concat_rows(parts).rows;
       }},
      {"slice_rows", {{"a", t({5, 3})}}, [](Graph&, V& v) { return ops::slice_rows(v[0], 1, 4); }},
      {"split_heads", {{"a", t({3, 8})}}, [](Graph&, V& v) { return ops::split_heads(v[0], 2); }},
      {"merge_heads", {{"a", t({2, 3, 4})}}, [](Graph&, V& v) { return ops::merge_heads(v[0]); }},
      {"broadcast_heads", {{"a", t({4, 4})}}, [](Graph&, V& v) { return ops::broadcast_heads(v[0], 3); }},
      {"gather_rows",
       {{"a", t({5, 3})}},
       [](Graph&, V& v) {
         const std::vector<std::size_t> ids{4, 0, 4, 2};
         return ops::gather_rows(v[0], ids);
       }},
      {"reshape", {{"a", t({2, 6})}}, [](Graph&, V& v) { return ops::reshape(v[0], Shape{3, 4}); }},
      {"sum", {{"a", t({3, 3})}}, [](Graph&, V& v) { return ops::sum(v[0]); }},
      {"mean_rows", {{"a", t({4, 3})}}, [](Graph&, V& v) { return ops::mean_rows(v[0]); }},
      {"mask_fill",
       {{"a", t({2, 3})}},
       [](Graph&, V& v) {
         const std::vector<std::uint8_t> keep{1, 0, 1, 1, 1, 0};
         return ops::mask_fill(v[0], keep, -7.0);
       }},
      {"cross_entropy", {{"a", t({6}, -2.0, 2.0)}}, [](Graph&, V& v) { return ops::cross_entropy(v[0], 2); }},
      {"bce_with_logits",
       {{"a", t({5}, -3.0, 3.0)}},
       [](Graph&, V& v) {
         const std::vector<std::uint8_t> y{1, 0, 0, 1, 1};
         return ops::bce_with_logits(v[0], y);
       }},
      {"bilinear_adjacent", {{"a", t({6, 4})}, {"b", t({4, 4})}}, [](Graph&, V& v) { return ops::bilinear_adjacent(v[0], v[1]); }},
      {"neighbor_left", {{"a", t({5}, -2.0, 2.0)}}, [](Graph&, V& v) { return ops::neighbor_left(v[0], 6); }},
      {"neighbor_right", {{"a", t({5}, -2.0, 2.0)}}, [](Graph&, V& v) { return ops::neighbor_right(v[0], 6); }},
      {"span_log_sums", {{"a", t({7}, -2.0, 0.0)}}, [](Graph&, V& v) { return ops::span_log_sums(v[0]); }},
  };
  for (auto& c : cases) {
    const auto groups = check_op(c.inputs, c.op, rng);
    EXPECT_TRUE(test::all_passed(groups)) << c.name;
    for (const auto& gr : groups) EXPECT_LT(gr.max_rel_error, 1e-4) << c.name << " / " << gr.name;
  }
}

TEST(Graph, BackwardRequiresScalarLoss) {
  Graph g;
  const Var v = g.constant(Tensor(Shape{2}));
  EXPECT_THROW(g.backward(v), ContractError);
}

TEST(Graph, BackwardPopulatesEveryParticipatingParameter) {
  std::mt19937_64 rng(8);
  ParamStore store;
  store.add("w", random_tensor(Shape{3, 3}, rng));
  store.add("unused", random_tensor(Shape{2}, rng));
  Graph g;
  const Var x = g.constant(random_tensor(Shape{2, 3}, rng));
  g.backward(ops::sum(ops::matmul(x, g.param(store, "w"))));
  double norm = 0.0;
  for (double v : store.grad("w").data()) norm += v * v;
  EXPECT_GT(norm, 0.0);
  for (double v : store.grad("unused").data()) EXPECT_EQ(v, 0.0);
}

TEST(Graph, OperationsAreDeterministic) {
  std::mt19937_64 rng(9);
  const Tensor a = random_tensor(Shape{5, 5}, rng);
  const Tensor b = random_tensor(Shape{5, 5}, rng);
  auto run = [&] {
    Graph g;
    return ops::layer_norm(ops::softmax_rows(ops::matmul(g.constant(a), g.constant(b))),
                           g.constant(Tensor::filled(Shape{5}, 1.0)), g.constant(Tensor(Shape{5})))
        .value();
  };
  EXPECT_EQ(run(), run());
}

TEST(FiniteDiff, AnalyticExamples) {
  ParamStore store;
  store.add("t", Tensor::scalar(3.0));
  auto sq = finite_diff_grad([](const ParamStore& s) { return s.value("t").item() * s.value("t").item(); }, store);
  EXPECT_NEAR(sq.at("t").item(), 6.0, 1e-6);
  EXPECT_EQ(store.value("t").item(), 3.0);

  ParamStore lin;
  lin.add("v", Tensor::vector({1.0, -2.0, 0.5}));
  auto g = finite_diff_grad(
      [](const ParamStore& s) {
        double acc = 0.0;
        for (double x : s.value("v").data()) acc += x;
        return acc;
      },
      lin);
  for (double x : g.at("v").data()) EXPECT_NEAR(x, 1.0, 1e-9);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(10);
  ParamStore store;
  store.add("b.weights", random_tensor(Shape{3, 4}, rng));
  store.add("a", Tensor::scalar(-0.0));
  store.add("c", random_tensor(Shape{2, 2, 2}, rng));
  store.add("empty", Tensor(Shape{0, 3}));
  const auto bytes = encode_checkpoint(store);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "VCFK");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 4);
  const ParamStore back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_TRUE(std::signbit(back.value("a").item()));
  EXPECT_EQ(back.value("c"), store.value("c"));
}

TEST(Checkpoint, LayoutOfSingleEntry) {
  ParamStore store;
  store.add("w", Tensor::vector({1.0}));
  const auto bytes = encode_checkpoint(store);
  const std::vector<std::uint8_t> want = {'V', 'C', 'F', 'K', 1, 0, 0, 0, 1, 0, 0, 0,  // header
                                          1, 0, 'w',                                   // name
                                          1, 1, 0, 0, 0, 0, 0, 0, 0,                   // rank, extent
                                          0, 0, 0, 0, 0, 0, 0xF0, 0x3F};               // 1.0
  EXPECT_EQ(bytes, want);
}

TEST(Checkpoint, RejectsMalformedInput) {
  ParamStore store;
  store.add("w", Tensor::vector({1.0, 2.0}));
  auto bytes = encode_checkpoint(store);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), ValidationError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_checkpoint(truncated), ValidationError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), ValidationError);
  auto version = bytes;
  version[4] = 2;
  EXPECT_THROW(decode_checkpoint(version), ValidationError);
}

TEST(Adam, MatchesReferenceOnTwoParameterToy) {
  ParamStore store;
  store.add("p", Tensor::vector({0.7, -1.3}));
  std::vector<double> ref{0.7, -1.3};
  const AdamConfig cfg{1e-2, 0.9, 0.999, 1e-8};
  Adam adam(cfg);
  test::oracle::Adam oracle{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, {}, {}, 0};
  for (int step = 0; step < 50; ++step) {
    // gradient of (p0 − 1)² + 3·p0·p1 + p1⁴
    const auto grad_of = [](double a, double b) {
      return std::vector<double>{2 * (a - 1) + 3 * b, 3 * a + 4 * b * b * b};
    };
    const auto g = grad_of(store.value("p")[0], store.value("p")[1]);
    store.grad("p")[0] = g[0];
    store.grad("p")[1] = g[1];
    adam.step(store);
    oracle.step(ref, grad_of(ref[0], ref[1]));
    EXPECT_NEAR(store.value("p")[0], ref[0], 1e-12);
    EXPECT_NEAR(store.value("p")[1], ref[1], 1e-12);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamStore store;
  store.add("p", Tensor::vector({0.5, 2.0}));
  Adam adam;
  adam.step(store);
  EXPECT_EQ(store.value("p"), Tensor::vector({0.5, 2.0}));
}

}  // namespace
}  // namespace cf
