#include <gtest/gtest.h>

#include <cmath>

#include "automoe/autodiff.hpp"
#include "automoe/errors.hpp"
#include "automoe/moe_model.hpp"
#include "test_support.hpp"

using namespace automoe;
using automoe::testing::max_grad_error;
using automoe::testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// Σ_ij r_i · y_ij · c_j with fixed random r, c: every output element gets a
// distinct upstream gradient.
Var wsum(Tape& t, Var y) {
  Rng rng(99);
  const std::size_t rows = t.value(y).rows(), cols = t.value(y).cols();
  Var r = t.constant(random_tensor({rows, 1}, rng));
  Var c = t.constant(random_tensor({1, cols}, rng));
  return sum(matmul_nt(scale_rows(y, r), c));
}

std::vector<AttentionSegment> two_segments() { return {{0, 2, 0, 3}, {2, 3, 3, 2}}; }

}  // namespace

TEST(Autodiff, SumGivesOnes) {
  Tape t;
  Var x = t.variable(Tensor::matrix(2, 3, 0.5));
  t.backward(sum(x));
  for (Real g : t.grad(x).values()) EXPECT_EQ(g, 1);
}

TEST(Autodiff, ReusedInputAccumulates) {
  Rng rng(1);
  Tape t;
  Var x = t.variable(random_tensor({2, 3}, rng));
  Var w = t.constant(random_tensor({3, 4}, rng));
  t.backward(sum(add(matmul(x, w), matmul(x, w))));
  Tape t2;
  Var x2 = t2.variable(t.value(x));
  t2.backward(sum(matmul(x2, t2.constant(t.value(w)))));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(t.grad(x)[i], 2 * t2.grad(x2)[i], 1e-12);
}

TEST(Autodiff, BackwardNeedsScalar) {
  Tape t;
  Var x = t.variable(Tensor::matrix(2, 2));
  EXPECT_THROW(t.backward(x), DimensionError);
}

TEST(Autodiff, ConstantsGetNoGradient) {
  Tape t;
  Var c = t.constant(Tensor::matrix(2, 2, 1));
  Var x = t.variable(Tensor::matrix(2, 2, 1));
  t.backward(sum(add(c, x)));
  EXPECT_FALSE(t.has_grad(c.id));
  EXPECT_TRUE(t.has_grad(x.id));
}

TEST(Autodiff, ExternalLeafHandsGradientToSink) {
  Tensor received;
  Tape t;
  Var e = t.external(Tensor::matrix(1, 3, 2), [&](const Tensor& g) { received = g; });
  t.backward(sum(scale(e, 3)));
  ASSERT_EQ(received.size(), 3u);
  for (Real g : received.values()) EXPECT_EQ(g, 3);
}

TEST(Autodiff, TruncateDropsLaterNodes) {
  Tape t(false);
  Var a = t.constant(Tensor::matrix(1, 1, 2));
  const std::size_t mark = t.size();
  scale(a, 2);
  scale(a, 3);
  t.truncate(mark);
  EXPECT_EQ(t.size(), mark);
  EXPECT_EQ(t.value(scale(a, 4))[0], 8);
}

TEST(Autodiff, SoftmaxOfConstantRowIsUniform) {
  Tape t(false);
  const Tensor y = t.value(softmax(t.constant(Tensor::matrix(1, 4, 3.7))));
  for (Real v : y.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_THROW(softmax(t.constant(Tensor::matrix(1, 4)), 2), DimensionError);
}

TEST(Autodiff, CrossEntropyVanishesForConfidentCorrectLogits) {
  Tape t(false);
  const std::vector<int> y{1};
  double prev = 1e9;
  for (double gap : {1.0, 5.0, 20.0, 60.0}) {
    const double l = t.value(cross_entropy(t.constant(Tensor::from_rows({{0, gap, 0}})), y, 0))[0];
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
  EXPECT_THROW(cross_entropy(t.constant(Tensor::matrix(1, 3)), std::vector<int>{3}, 0), DimensionError);
}

TEST(Autodiff, CrossEntropyLabelSmoothingForm) {
  Tape t(false);
  const Tensor logits = Tensor::from_rows({{0.3, -1.2, 2.0}});
  const double l = t.value(cross_entropy(t.constant(logits), std::vector<int>{2}, 0.1))[0];
  const double z = std::log(std::exp(0.3) + std::exp(-1.2) + std::exp(2.0));
  const double nll = z - 2.0;
  const double mean_nll = ((z - 0.3) + (z + 1.2) + (z - 2.0)) / 3;
  EXPECT_NEAR(l, 0.9 * nll + 0.1 * mean_nll, 1e-12);
}

TEST(Autodiff, GradMatmul) {
  Rng rng(2);
  EXPECT_LT(max_grad_error({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                           [](Tape& t, const auto& v) { return wsum(t, matmul(v[0], v[1])); }),
            kTol);
  EXPECT_LT(max_grad_error({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
                           [](Tape& t, const auto& v) { return wsum(t, matmul_nt(v[0], v[1])); }),
            kTol);
}

TEST(Autodiff, GradLinearWithBias) {
  Rng rng(3);
  EXPECT_LT(max_grad_error({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)},
                           [](Tape& t, const auto& v) { return wsum(t, linear(v[0], v[1], &v[2])); }),
            kTol);
}

TEST(Autodiff, GradElementwise) {
  Rng rng(4);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), r = random_tensor({4}, rng);
  EXPECT_LT(max_grad_error({a, b}, [](Tape& t, const auto& v) { return wsum(t, add(v[0], v[1])); }), kTol);
  EXPECT_LT(max_grad_error({a, r}, [](Tape& t, const auto& v) { return wsum(t, add_row_vector(v[0], v[1])); }), kTol);
  EXPECT_LT(max_grad_error({a}, [](Tape& t, const auto& v) { return wsum(t, scale(v[0], -1.7)); }), kTol);
  EXPECT_LT(max_grad_error({a}, [](Tape& t, const auto& v) { return wsum(t, relu(v[0])); }), kTol);
  EXPECT_LT(max_grad_error({a}, [](Tape&, const auto& v) { return sum(v[0]); }), kTol);
}

TEST(Autodiff, GradSoftmaxBothAxes) {
  Rng rng(5);
  const Tensor a = random_tensor({3, 4}, rng);
  EXPECT_LT(max_grad_error({a}, [](Tape& t, const auto& v) { return wsum(t, softmax(v[0], 1)); }), kTol);
  EXPECT_LT(max_grad_error({a}, [](Tape& t, const auto& v) { return wsum(t, softmax(v[0], 0)); }), kTol);
}

TEST(Autodiff, GradLayernorm) {
  Rng rng(6);
  EXPECT_LT(max_grad_error({random_tensor({3, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)},
                           [](Tape& t, const auto& v) { return wsum(t, layernorm(v[0], v[1], v[2])); }),
            kTol);
}

TEST(Autodiff, GradEmbedAndPositions) {
  Rng rng(7);
  const std::vector<int> ids{2, 0, 2, 4};
  EXPECT_LT(max_grad_error({random_tensor({5, 3}, rng)},
                           [&](Tape& t, const auto& v) { return wsum(t, embed(v[0], ids)); }),
            kTol);
}

TEST(Autodiff, GradCrossEntropy) {
  Rng rng(8);
  const std::vector<int> y{1, 3, 0};
  for (double ls : {0.0, 0.1}) {
    EXPECT_LT(max_grad_error({random_tensor({3, 5}, rng)},
                             [&](Tape&, const auto& v) { return cross_entropy(v[0], y, ls); }),
              kTol);
  }
  const std::vector<int> ignored{1, -1, 0};
  EXPECT_LT(max_grad_error({random_tensor({3, 5}, rng)},
                           [&](Tape&, const auto& v) { return cross_entropy(v[0], ignored, 0.1, -1); }),
            kTol);
}

TEST(Autodiff, GradRowOps) {
  Rng rng(9);
  const Tensor x = random_tensor({4, 3}, rng);
  const std::vector<std::size_t> rows{3, 1};
  const std::vector<std::size_t> cols{2, 0, 1, 2};
  EXPECT_LT(max_grad_error({x}, [&](Tape& t, const auto& v) { return wsum(t, gather_rows(v[0], rows)); }), kTol);
  EXPECT_LT(max_grad_error({random_tensor({2, 3}, rng)},
                           [&](Tape& t, const auto& v) { return wsum(t, scatter_rows(v[0], rows, 5)); }),
            kTol);
  EXPECT_LT(max_grad_error({x, random_tensor({4, 1}, rng)},
                           [&](Tape& t, const auto& v) { return wsum(t, scale_rows(v[0], v[1])); }),
            kTol);
  EXPECT_LT(max_grad_error({x}, [&](Tape& t, const auto& v) { return wsum(t, pick(v[0], cols)); }), kTol);
  EXPECT_LT(max_grad_error({x, random_tensor({2, 3}, rng)},
                           [&](Tape& t, const auto& v) { return wsum(t, concat_rows(v[0], v[1])); }),
            kTol);
  EXPECT_LT(max_grad_error({x, random_tensor({4, 3}, rng), random_tensor({4, 3}, rng)},
                           [&](Tape& t, const auto& v) { return wsum(t, mean_of(v)); }),
            kTol);
}

TEST(Autodiff, GradAttention) {
  Rng rng(10);
  const Tensor q = random_tensor({5, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
  for (bool causal : {false, true}) {
    // Causal segments are square (self-attention); the other case mixes lengths like cross-attention.
    const auto segs = causal ? std::vector<AttentionSegment>{{0, 2, 0, 2}, {2, 3, 2, 3}} : two_segments();
    EXPECT_LT(max_grad_error({q, k, v},
                             [&](Tape& t, const auto& x) { return wsum(t, attention(x[0], x[1], x[2], 2, segs, causal)); }),
              kTol);
  }
}

TEST(Autodiff, GradLoadBalance) {
  Rng rng(11);
  const std::vector<std::size_t> assign{0, 1, 1, 2};
  EXPECT_LT(max_grad_error({random_tensor({4, 3}, rng)},
                           [&](Tape&, const auto& v) { return load_balance(softmax(v[0], 1), assign); }),
            kTol);
}

TEST(Autodiff, GradFullTwoExpertLayer) {
  // Router, two experts of different widths, two tokens: gradients w.r.t.
  // tokens and every weight go through routing, gate scaling and scatter.
  Rng rng(12);
  const std::size_t d = 4;
  const std::vector<Tensor> inputs{random_tensor({2, d}, rng), random_tensor({2, d}, rng),
                                   random_tensor({3, d}, rng),  random_tensor({d, 3}, rng),
                                   random_tensor({5, d}, rng),  random_tensor({d, 5}, rng)};
  auto f = [](Tape& t, const std::vector<Var>& v) {
    MoeVars m;
    m.router = v[1];
    m.w_in = {v[2], v[4]};
    m.w_out = {v[3], v[5]};
    MoeResult r = moe_layer(m, v[0]);
    return add(wsum(t, r.out), *r.aux);
  };
  // Both experts must actually receive a token for the check to cover them.
  Tape probe(false);
  std::vector<Var> pv;
  for (const auto& x : inputs) pv.push_back(probe.constant(x));
  MoeVars m;
  m.router = pv[1];
  m.w_in = {pv[2], pv[4]};
  m.w_out = {pv[3], pv[5]};
  const auto decision = moe_layer(m, pv[0]).decision;
  ASSERT_NE(decision.expert[0], decision.expert[1]);
  EXPECT_LT(max_grad_error(inputs, f), kTol);
}

TEST(Autodiff, DropoutIsIdentityAtZeroAndScalesOtherwise) {
  Rng rng(13);
  Tape t(false);
  const Tensor x = Tensor::matrix(50, 40, 1);
  Var v = t.constant(x);
  EXPECT_EQ(dropout(v, 0, rng).id, v.id);
  const Tensor y = t.value(dropout(v, 0.5, rng));
  std::size_t kept = 0;
  for (Real e : y.values()) {
    EXPECT_TRUE(e == 0 || e == 2);
    kept += e != 0;
  }
  EXPECT_NEAR(double(kept) / double(y.size()), 0.5, 0.05);
}
