#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "memnav/autodiff.hpp"
#include "support/gradcheck.hpp"
#include "support/gradient_suite.hpp"

namespace memnav::ad {
namespace {

using memnav::testing::max_relative_error;
using memnav::testing::numeric_gradient;
using memnav::testing::weighted_sum;

using memnav::testing::kGradTolerance;
using memnav::testing::random_tensor;

void expect_all_below(const std::vector<memnav::testing::GradCheck>& checks) {
  ASSERT_FALSE(checks.empty());
  for (const auto& c : checks) EXPECT_LT(c.error, kGradTolerance) << c.what;
}

class LayerGradients : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradients, Linear) { expect_all_below(memnav::testing::grad::linear(GetParam())); }
TEST_P(LayerGradients, Conv1d) { expect_all_below(memnav::testing::grad::conv1d(GetParam())); }
TEST_P(LayerGradients, ReLU) { expect_all_below(memnav::testing::grad::relu(GetParam())); }
TEST_P(LayerGradients, LayerNorm) { expect_all_below(memnav::testing::grad::layer_norm(GetParam())); }
TEST_P(LayerGradients, Softmax) { expect_all_below(memnav::testing::grad::softmax(GetParam())); }
TEST_P(LayerGradients, Sigmoid) { expect_all_below(memnav::testing::grad::sigmoid(GetParam())); }
TEST_P(LayerGradients, Embedding) { expect_all_below(memnav::testing::grad::embedding(GetParam())); }
TEST_P(LayerGradients, MultiHeadAttention) { expect_all_below(memnav::testing::grad::attention(GetParam())); }
TEST_P(LayerGradients, Dropout) { expect_all_below(memnav::testing::grad::dropout(GetParam())); }

INSTANTIATE_TEST_SUITE_P(TenSeeds, LayerGradients, ::testing::Range(0, 10));

TEST(Forward, IdentityLinear) {
  Rng rng(1);
  Linear l("id", 3, 3, rng);
  auto& w = l.weight().value.values;
  std::fill(w.begin(), w.end(), 0.0);
  w[0] = w[4] = w[8] = 1.0;
  std::fill(l.bias().value.values.begin(), l.bias().value.values.end(), 0.0);
  Tensor x({1, 3}, {0.5, -2.0, 3.25});
  EXPECT_EQ(l.infer(x).values, x.values);
}

TEST(Forward, SoftmaxOfSingleLogit) {
  Softmax s;
  EXPECT_EQ(s.infer(Tensor({1, 1}, {7.3})).values[0], 1.0);
}

TEST(Forward, SoftmaxIsDistribution) {
  Rng rng(5);
  Softmax s;
  for (int t = 0; t < 100; ++t) {
    Tensor y = s.infer(random_tensor({1, 9}, rng, -30, 30));
    double total = 0.0;
    for (double v : y.values) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Forward, LayerNormOfConstantIsZero) {
  LayerNorm ln("ln", 5);
  Tensor y = ln.infer(Tensor({1, 5}, 2.5));
  for (double v : y.values) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ShapeMismatch) {
  Rng rng(1);
  Linear l("l", 4, 2, rng);
  EXPECT_THROW(l.infer(Tensor({1, 3})), ShapeMismatch);
  Sequential net("n", {LayerSpec::conv1d(3, 4, 3, 1, 1)}, rng);
  EXPECT_THROW(net.forward(Tensor({1, 2, 8})), ShapeMismatch);
}

TEST(Forward, Deterministic) {
  Rng rng(9);
  Sequential net("n", {LayerSpec::conv1d(3, 8, 5, 2, 2), LayerSpec::relu(), LayerSpec::linear(8 * 7, 4)}, rng);
  Tensor x = random_tensor({2, 3, 13}, rng);
  EXPECT_EQ(net.infer(x).values, net.infer(x).values);
  EXPECT_EQ(net.forward(x).values, net.infer(x).values);
}

TEST(Backward, LinearWeightGradientIsOuterProduct) {
  Rng rng(2);
  Linear l("l", 3, 2, rng);
  l.weight().zero_grad();
  l.bias().zero_grad();
  Tensor x({1, 3}, {1.0, -2.0, 0.5});
  l.forward(x);
  l.backward(Tensor({1, 2}, 1.0));
  EXPECT_EQ(l.weight().value.grad, (memnav::ad::Buffer{1.0, -2.0, 0.5, 1.0, -2.0, 0.5}));
}

TEST(Backward, SecondBackwardWithoutForwardThrows) {
  Rng rng(3);
  Sequential net("n", {LayerSpec::linear(2, 2), LayerSpec::sigmoid()}, rng);
  net.forward(Tensor({1, 2}, 0.3));
  net.backward(Tensor({1, 2}, 1.0));
  EXPECT_THROW(net.backward(Tensor({1, 2}, 1.0)), NoForwardPass);

  MultiHeadAttention att("a", 4, 4, 2, rng);
  EXPECT_THROW(att.backward(Tensor({1, 4})), NoForwardPass);
}

TEST(Backward, SequentialGradientsMatchFiniteDifferences) {
  Rng rng(11);
  Sequential net("n",
                 {LayerSpec::conv1d(3, 4, 5, 2, 2), LayerSpec::relu(), LayerSpec::linear(4 * 6, 6),
                  LayerSpec::layer_norm(6), LayerSpec::linear(6, 3), LayerSpec::softmax()},
                 rng);
  Tensor x = random_tensor({2, 3, 11}, rng);
  ParameterList params;
  net.collect(params);
  net.forward(x);
  const Tensor w = random_tensor({2, 3}, rng);
  const Tensor dx = net.backward(w);
  auto loss = [&] { return weighted_sum(net.infer(x).values, w.values); };
  EXPECT_LT(max_relative_error(dx.values, numeric_gradient(x.values, loss)), kGradTolerance);
  for (Parameter* p : params)
    EXPECT_LT(max_relative_error(p->value.grad, numeric_gradient(p->value.values, loss)), kGradTolerance) << p->name;
}

TEST(LayerSpec, Validation) {
  EXPECT_THROW(LayerSpec::attention(10, 8, 3).validate(), ShapeMismatch);
  EXPECT_THROW(LayerSpec::linear(0, 4).validate(), ShapeMismatch);
  EXPECT_NO_THROW(LayerSpec::attention(64, 128, 2).validate());
}

TEST(Attention, SingleKeyGivesValueProjection) {
  Rng rng(4);
  MultiHeadAttention att("a", 4, 4, 2, rng);
  Tensor q = random_tensor({1, 4}, rng);
  Tensor m = random_tensor({1, 4}, rng);
  att.forward(q, PackedRows::single(m));
  for (std::size_t h = 0; h < 2; ++h) EXPECT_EQ(att.last_weights()[h], 1.0);

  // Expected: Wo (Wv m + bv) + bo.
  ParameterList ps;
  att.collect(ps);
  const auto& wv = ps[4]->value;
  const auto& bv = ps[5]->value;
  const auto& wo = ps[6]->value;
  const auto& bo = ps[7]->value;
  std::vector<double> v(4), expect(4);
  for (int o = 0; o < 4; ++o) {
    v[o] = bv[o];
    for (int i = 0; i < 4; ++i) v[o] += wv[o * 4 + i] * m[i];
  }
  for (int o = 0; o < 4; ++o) {
    expect[o] = bo[o];
    for (int i = 0; i < 4; ++i) expect[o] += wo[o * 4 + i] * v[i];
  }
  const Tensor y = att.infer(q, PackedRows::single(m));
  for (int o = 0; o < 4; ++o) EXPECT_NEAR(y[o], expect[o], 1e-14);
}

TEST(Attention, EmptyMemoryGivesZero) {
  Rng rng(4);
  MultiHeadAttention att("a", 4, 4, 2, rng);
  PackedRows empty;
  empty.offsets = {0, 0};
  const Tensor y = att.infer(random_tensor({1, 4}, rng), empty);
  for (double v : y.values) EXPECT_EQ(v, 0.0);
}

TEST(Attention, DuplicatedRowMatchesSingleRow) {
  Rng rng(6);
  MultiHeadAttention att("a", 6, 6, 3, rng);
  Tensor q = random_tensor({1, 6}, rng);
  Tensor m = random_tensor({1, 6}, rng);
  Tensor mm({2, 6});
  std::copy(m.values.begin(), m.values.end(), mm.values.begin());
  std::copy(m.values.begin(), m.values.end(), mm.values.begin() + 6);
  const Tensor a = att.infer(q, PackedRows::single(m));
  const Tensor b = att.infer(q, PackedRows::single(mm));
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(Attention, PermutationInvariantInMemoryRows) {
  Rng rng(7);
  MultiHeadAttention att("a", 8, 5, 2, rng);
  Tensor q = random_tensor({1, 8}, rng);
  Tensor m = random_tensor({4, 5}, rng);
  Tensor p({4, 5});
  const int order[4] = {2, 0, 3, 1};
  for (int r = 0; r < 4; ++r) std::copy_n(m.values.begin() + order[r] * 5, 5, p.values.begin() + r * 5);
  const Tensor a = att.infer(q, PackedRows::single(m));
  const Tensor b = att.infer(q, PackedRows::single(p));
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
}

TEST(Optimizer, PlainSgdStep) {
  Parameter p("p", {1});
  p.value[0] = 0.0;
  p.value.grad[0] = 1.0;
  p.grad_populated = true;
  Optimizer opt({OptimizerKind::kSgdMomentum, 0.1, 0.0, 0.98, 1e-5, 0.0}, {&p});
  opt.step();
  EXPECT_DOUBLE_EQ(p.value[0], -0.1);
  EXPECT_EQ(p.value.grad[0], 0.0);
  EXPECT_FALSE(p.grad_populated);
}

TEST(Optimizer, WeightDecayOnZeroGradient) {
  Parameter p("p", {1});
  p.value[0] = 1.0;
  p.grad_populated = true;
  Optimizer opt({OptimizerKind::kSgdMomentum, 0.1, 0.9, 0.98, 1e-5, 1e-7}, {&p});
  opt.step();
  EXPECT_DOUBLE_EQ(p.value[0], 1.0 - 0.1 * 1e-7);
}

// Under a constant gradient the accumulator converges to g^2, so the step
// converges to lr * g / sqrt(g^2 + eps).
TEST(Optimizer, RmspropFixedPoint) {
  const double lr = 1e-3, g = 0.37, eps = 1e-5;
  Parameter p("p", {1});
  Optimizer opt({OptimizerKind::kRmsprop, lr, 0.0, 0.98, eps, 0.0}, {&p});
  double last_step = 0.0;
  for (int i = 0; i < 3000; ++i) {
    const double before = p.value[0];
    p.value.grad[0] = g;
    p.grad_populated = true;
    opt.step();
    last_step = before - p.value[0];
  }
  EXPECT_NEAR(last_step, lr * g / std::sqrt(g * g + eps), 1e-15);
}

TEST(Optimizer, MissingGradient) {
  Parameter p("p", {2});
  Optimizer opt({}, {&p});
  EXPECT_THROW(opt.step(), MissingGradient);
}

TEST(Checkpoint, RoundTripAndValidation) {
  Rng rng(12);
  Sequential a("net", {LayerSpec::linear(3, 4), LayerSpec::layer_norm(4)}, rng);
  Sequential b("net", {LayerSpec::linear(3, 4), LayerSpec::layer_norm(4)}, rng);
  ParameterList pa, pb;
  a.collect(pa);
  b.collect(pb);
  const std::string bytes = encode_checkpoint(const_params(pa));
  ASSERT_EQ(bytes.substr(0, 4), "MNAV");
  restore_parameters(decode_checkpoint(bytes), pb);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value.values, pb[i]->value.values);

  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(decode_checkpoint(wrong_version), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
}

}  // namespace
}  // namespace memnav::ad
