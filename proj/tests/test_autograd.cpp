#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "iroam/autograd.hpp"
#include "iroam/layers.hpp"
#include "test_util.hpp"

using namespace iroam;
using namespace iroam::nn;
using iroam::testing::check_input_gradients;
using iroam::testing::random_tensor;

namespace {

// Contracts an op output with a fixed random array so every output entry
// contributes a distinct weight to the scalar.
Var contract(Graph& g, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, g.constant(random_tensor(out.shape(), rng))));
}

using Op = std::function<Var(Graph&, std::vector<Var>&)>;

void expect_grad_ok(const Op& f, std::vector<Tensor> inputs, double rel = 1e-5, int line = __builtin_LINE()) {
  const auto r = check_input_gradients(f, std::move(inputs), rel, 1e-8);
  EXPECT_TRUE(r.ok()) << "line " << line << ": " << r.worst_name << " ratio " << r.worst;
}

// Values kept away from the ReLU / L1 kinks.
Tensor away_from_zero(std::vector<int> shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (double& x : t.vec())
    if (flip(rng)) x = -x;
  return t;
}

}  // namespace

TEST(Autograd, MatmulFamily) {
  std::mt19937_64 rng(1);
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, matmul(v[0], v[1]), 2); },
                 {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, matmul_nt(v[0], v[1]), 3); },
                 {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, linear(v[0], v[1], v[2]), 4); },
                 {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({1, 2}, rng)});
}

TEST(Autograd, Elementwise) {
  std::mt19937_64 rng(5);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, add(v[0], v[1]), 6); }, {a, b});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, sub(v[0], v[1]), 7); }, {a, b});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, mul(v[0], v[1]), 8); }, {a, b});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, scale(v[0], -2.5), 9); }, {a});
  expect_grad_ok([&](Graph& g, auto& v) { return contract(g, add_const(v[0], b), 10); }, {a});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, relu(v[0]), 11); }, {away_from_zero({3, 4}, rng)});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, sigmoid(v[0]), 12); }, {a});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, exp(v[0]), 13); }, {a});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, log(v[0]), 14); }, {random_tensor({3, 4}, rng, 0.2, 3.0)});
  Graph g;
  EXPECT_THROW(log(g.constant(Tensor({1, 1}))), std::domain_error);
}

TEST(Autograd, RowOps) {
  std::mt19937_64 rng(14);
  const Tensor a = random_tensor({4, 6}, rng, -2, 2);
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, softmax_rows(v[0]), 15); }, {a});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, layer_norm(v[0], v[1], v[2]), 16); },
                 {a, random_tensor({1, 6}, rng), random_tensor({1, 6}, rng)}, 1e-4);
}

TEST(Autograd, ShapeOps) {
  std::mt19937_64 rng(17);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 2}, rng), c = random_tensor({2, 4}, rng);
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, transpose(v[0]), 18); }, {a});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, reshape(v[0], {2, 6}), 19); }, {a});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, slice_cols(v[0], 1, 3), 20); }, {a});
  expect_grad_ok(
      [](Graph& g, auto& v) {
        const Var parts[] = {v[0], v[1]};
        return contract(g, concat_cols(parts), 21);
      },
      {a, b});
  expect_grad_ok(
      [](Graph& g, auto& v) {
        const Var parts[] = {v[0], v[1]};
        return contract(g, concat_rows(parts), 22);
      },
      {a, c});
  expect_grad_ok(
      [](Graph& g, auto& v) {
        const int rows[] = {2, 0, 2, 1};
        return contract(g, gather_rows(v[0], rows), 23);
      },
      {a});
}

TEST(Autograd, Reductions) {
  std::mt19937_64 rng(24);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  expect_grad_ok([](Graph&, auto& v) { return mean(v[0]); }, {a});
  expect_grad_ok(
      [](Graph&, auto& v) {
        const Var s[] = {sum(v[0]), mean(v[1])};
        const double w[] = {0.5, -3.0};
        return weighted_sum(s, w);
      },
      {a, b});
  expect_grad_ok(
      [](Graph& g, auto& v) {
        const Var parts[] = {v[0], v[1]};
        return contract(g, average(parts), 25);
      },
      {a, b});
}

TEST(Autograd, Losses) {
  std::mt19937_64 rng(26);
  const Tensor target = random_tensor({3, 4}, rng);
  Tensor pred = target;
  const Tensor off = away_from_zero({3, 4}, rng);
  for (size_t i = 0; i < pred.size(); ++i) pred[i] += off[i];
  expect_grad_ok([&](Graph&, auto& v) { return l1_loss(v[0], target); }, {pred});
  const std::vector<int> cls{0, 2, -1, 1};
  expect_grad_ok([&](Graph&, auto& v) { return focal_loss_rows(v[0], cls, 2.0); },
                 {random_tensor({4, 3}, rng, -3, 3)});
  const Tensor boxes({2, 4}, {0.5, 0.5, 0.3, 0.2, 0.2, 0.3, 0.1, 0.15});
  const Tensor tb({2, 4}, {0.55, 0.42, 0.25, 0.3, 0.6, 0.7, 0.2, 0.2});
  expect_grad_ok([&](Graph&, auto& v) { return giou_loss_rows(v[0], tb); }, {boxes}, 1e-4);
}

TEST(Autograd, FocalLossValues) {
  Graph g;
  // Uniform over 4 classes: -(3/4)^2 log(1/4) per row.
  const std::vector<int> cls{1, -1};
  const double expected = -std::pow(0.75, 2.0) * std::log(0.25);
  EXPECT_NEAR(focal_loss_rows(g.constant(Tensor({2, 4}, 0.0)), cls, 2.0).item(), expected, 1e-12);
  // Gamma 0 is cross entropy.
  const std::vector<int> c0{0};
  const Tensor logits({1, 2}, {1.0, 0.0});
  EXPECT_NEAR(focal_loss_rows(g.constant(logits), c0, 0.0).item(), std::log(1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Autograd, FeatureMapOps) {
  std::mt19937_64 rng(27);
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, conv2d(v[0], v[1], v[2], 3, 1, 1), 28); },
                 {random_tensor({2, 5, 4}, rng), random_tensor({3, 18}, rng), random_tensor({1, 3}, rng)});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, conv2d(v[0], v[1], v[2], 3, 2, 1), 29); },
                 {random_tensor({2, 6, 6}, rng), random_tensor({3, 18}, rng), random_tensor({1, 3}, rng)});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, conv2d(v[0], v[1], v[2], 4, 4, 0), 30); },
                 {random_tensor({2, 8, 8}, rng), random_tensor({1, 32}, rng), random_tensor({1, 1}, rng)});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, upsample_nearest2x(v[0]), 31); },
                 {random_tensor({2, 2, 3}, rng)});
  expect_grad_ok([](Graph& g, auto& v) { return contract(g, map_to_tokens(v[0]), 32); },
                 {random_tensor({3, 2, 4}, rng)});
}

TEST(Autograd, ConvMatchesDirectLoop) {
  std::mt19937_64 rng(33);
  const Tensor x = random_tensor({2, 5, 6}, rng), w = random_tensor({3, 18}, rng), b = random_tensor({1, 3}, rng);
  Graph g;
  const Tensor y = conv2d(g.constant(x), g.constant(w), g.constant(b), 3, 2, 1).value();
  const int ho = 3, wo = 3;
  ASSERT_EQ(y.shape(), (std::vector<int>{3, ho, wo}));
  for (int o = 0; o < 3; ++o) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double s = b[static_cast<size_t>(o)];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
              s += w.at(o, c * 9 + ky * 3 + kx) * x[static_cast<size_t>((c * 5 + iy) * 6 + ix)];
            }
        EXPECT_NEAR(y[static_cast<size_t>((o * ho + oy) * wo + ox)], s, 1e-12);
      }
    }
  }
}

TEST(Autograd, AttentionParameters) {
  std::mt19937_64 rng(34);
  ParameterSet ps;
  ps.seed(35);
  const MultiHeadAttention attn = MultiHeadAttention::create(ps, "attn", 8, 2);
  const Tensor q = random_tensor({3, 8}, rng), kv = random_tensor({5, 8}, rng);
  auto loss = [&](bool backward) {
    Graph g;
    const Var out = contract(g, attn(g, g.constant(q), g.constant(kv), g.constant(kv)), 36);
    if (backward) g.backward(out);
    return out.item();
  };
  const auto r = iroam::testing::check_parameter_gradients(ps, loss, "attn", 20, rng, 1e-5, 1e-9, 1e-6);
  EXPECT_TRUE(r.ok()) << r.worst_name << " ratio " << r.worst;
  expect_grad_ok([&](Graph& g, auto& v) { return contract(g, attn(g, v[0], v[1], v[1]), 37); }, {q, kv}, 1e-5);
}

TEST(Autograd, GradientAccumulatesAcrossUses) {
  Graph g;
  const Var x = g.input(Tensor({1, 1}, 3.0));
  g.backward(add(mul(x, x), scale(x, 2.0)));
  EXPECT_DOUBLE_EQ(x.grad().item(), 8.0);
}

TEST(Autograd, NoGradGraphRecordsValuesOnly) {
  ParameterSet ps;
  Parameter& p = ps.create_const("w", {1, 1}, 2.0);
  Graph g;
  g.set_grad_enabled(false);
  const Var y = mul(g.param(p), g.param(p));
  EXPECT_DOUBLE_EQ(y.item(), 4.0);
  EXPECT_FALSE(y.requires_grad());
}
