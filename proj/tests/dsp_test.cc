#include "bmg/dsp.h"

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.h"

namespace bmg {
namespace {

using namespace oracle;

double dot(const FeatureMap& a, const FeatureMap& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
  return s;
}

TEST(Conv1dTest, IdentityKernel) {
  FeatureMap x(1, 3, std::vector<float>{1, 2, 3});
  ConvSpec s;
  s.bias = false;
  auto y = conv1d(x, s, std::vector<float>{1.0f}, {});
  EXPECT_EQ(y.data, (std::vector<float>{1, 2, 3}));
}

TEST(Conv1dTest, TwoTapSum) {
  FeatureMap x(1, 4, std::vector<float>{1, 2, 3, 4});
  ConvSpec s;
  s.kernel_size = 2;
  s.bias = false;
  auto y = conv1d(x, s, std::vector<float>{1, 1}, {});
  EXPECT_EQ(y.data, (std::vector<float>{3, 5, 7}));
}

TEST(Conv1dTest, OutputLengthFormula) {
  ConvSpec s;
  s.kernel_size = 5;
  s.stride = 3;
  s.dilation = 2;
  s.padding = 4;
  // floor((10 + 8 - 8 - 1) / 3) + 1 = 4
  EXPECT_EQ(s.output_length(10), 4);
}

TEST(Conv1dTest, MatchesNaiveLoopOnRandomSpecs) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> pick(0, 1000);
  for (int trial = 0; trial < 40; ++trial) {
    ConvSpec s;
    s.groups = 1 + pick(rng) % 3;
    s.in_channels = s.groups * (1 + pick(rng) % 3);
    s.out_channels = s.groups * (1 + pick(rng) % 3);
    s.kernel_size = 1 + pick(rng) % 6;
    s.stride = 1 + pick(rng) % 3;
    s.dilation = 1 + pick(rng) % 3;
    s.padding = pick(rng) % 5;
    s.bias = pick(rng) % 2;
    const int t = s.dilation * (s.kernel_size - 1) + 1 + pick(rng) % 20;
    auto x = random_map(s.in_channels, t, rng);
    auto w = random_values(s.weight_count(), rng);
    auto b = s.bias ? random_values(s.out_channels, rng) : std::vector<float>{};
    auto y = conv1d(x, s, w, b);
    EXPECT_LT(max_rel_diff(y, naive_conv(x, s, w, b)), 1e-6) << "trial " << trial;
  }
}

TEST(ConvTranspose1dTest, SingleFrameUpsample) {
  FeatureMap x(1, 1, std::vector<float>{1});
  ConvSpec s;
  s.kernel_size = 4;
  s.stride = 4;
  s.transposed = true;
  s.bias = false;
  auto y = conv_transpose1d(x, s, std::vector<float>{1, 1, 1, 1}, {});
  EXPECT_EQ(y.data, (std::vector<float>{1, 1, 1, 1}));
}

TEST(ConvTranspose1dTest, MatchesScatterAddOracle) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> pick(0, 1000);
  for (int trial = 0; trial < 40; ++trial) {
    ConvSpec s;
    s.transposed = true;
    s.groups = 1 + pick(rng) % 2;
    s.in_channels = s.groups * (1 + pick(rng) % 3);
    s.out_channels = s.groups * (1 + pick(rng) % 3);
    s.stride = 1 + pick(rng) % 4;
    s.kernel_size = s.stride * (1 + pick(rng) % 2) + pick(rng) % 2;
    s.padding = pick(rng) % (s.kernel_size / 2 + 1);
    s.bias = pick(rng) % 2;
    const int t = 2 + pick(rng) % 12;
    auto x = random_map(s.in_channels, t, rng);
    auto w = random_values(s.weight_count(), rng);
    auto b = s.bias ? random_values(s.out_channels, rng) : std::vector<float>{};
    auto y = conv_transpose1d(x, s, w, b);
    EXPECT_EQ(y.time, s.output_length(t));
    EXPECT_LT(max_rel_diff(y, naive_conv_transpose(x, s, w, b)), 1e-6)
        << "trial " << trial;
  }
}

TEST(ConvTranspose1dTest, AdjointOfConv1d) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ConvSpec fwd;
    fwd.in_channels = 3;
    fwd.out_channels = 4;
    fwd.kernel_size = 2 + trial % 5;
    fwd.stride = 1 + trial % 4;
    fwd.padding = trial % 3;
    fwd.bias = false;
    // Lengths where the stride divides evenly, so both maps cover x exactly.
    int t = 9 + trial;
    while ((t + 2 * fwd.padding - fwd.kernel_size) % fwd.stride != 0) ++t;
    ConvSpec adj = fwd;
    adj.in_channels = fwd.out_channels;
    adj.out_channels = fwd.in_channels;
    adj.transposed = true;
    // Same tensor: conv1d reads it as [out, in, k], the transpose as
    // [in, out, k] with channel roles swapped.
    auto w = random_values(fwd.weight_count(), rng);
    auto x = random_map(fwd.in_channels, t, rng);
    const int out_len = fwd.output_length(t);
    auto y = random_map(fwd.out_channels, out_len, rng);
    auto cx = conv1d(x, fwd, w, {});
    auto ty = conv_transpose1d(y, adj, w, {});
    ASSERT_EQ(ty.time, x.time);
    double lhs = dot(cx, y);
    double rhs = dot(x, ty);
    EXPECT_NEAR(lhs, rhs, 1e-6 * std::max(1.0, std::abs(lhs))) << "trial " << trial;
  }
}

TEST(ConvTest, TallyMatchesAnalyticFlops) {
  std::mt19937_64 rng(4);
  ConvSpec s;
  s.in_channels = 4;
  s.out_channels = 6;
  s.kernel_size = 5;
  s.dilation = 2;
  s.padding = 4;
  s.groups = 2;
  auto x = random_map(4, 17, rng);
  OpTally tally;
  ExecContext ctx;
  ctx.tally = &tally;
  conv1d(x, s, random_values(s.weight_count(), rng), random_values(6, rng), ctx);
  // Hand count: out_len 17, 6 outputs, 2 inputs per group, 5 taps.
  EXPECT_EQ(s.output_length(17), 17);
  EXPECT_EQ(tally.value(), 2u * 17 * 6 * 2 * 5 + 17 * 6);
  EXPECT_EQ(tally.value(), s.flops(17));

  ConvSpec up;
  up.in_channels = 3;
  up.out_channels = 2;
  up.kernel_size = 8;
  up.stride = 4;
  up.padding = 2;
  up.transposed = true;
  OpTally t2;
  ctx.tally = &t2;
  auto y = conv_transpose1d(random_map(3, 5, rng), up,
                            random_values(up.weight_count(), rng),
                            random_values(2, rng), ctx);
  EXPECT_EQ(y.time, 20);
  EXPECT_EQ(t2.value(), 2u * 5 * 3 * 2 * 8 + 20 * 2);
  EXPECT_EQ(t2.value(), up.flops(5));
}

TEST(ConvTest, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(5);
  ConvSpec s;
  s.in_channels = 8;
  s.out_channels = 16;
  s.kernel_size = 3;
  s.padding = 1;
  auto x = random_map(8, 50, rng);
  auto w = random_values(s.weight_count(), rng);
  auto b = random_values(16, rng);
  ExecContext one, four;
  four.threads = 4;
  EXPECT_EQ(conv1d(x, s, w, b, one).data, conv1d(x, s, w, b, four).data);
}

TEST(ConvTest, ShapeErrorsNameTheDimension) {
  ConvSpec s;
  s.in_channels = 2;
  s.out_channels = 3;
  s.kernel_size = 3;
  FeatureMap x(4, 10);
  std::vector<float> w(s.weight_count()), b(3);
  try {
    conv1d(x, s, w, b);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos) << e.what();
  }
  FeatureMap x2(2, 10);
  std::vector<float> short_w(5);
  try {
    conv1d(x2, s, short_w, b);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("weight"), std::string::npos) << e.what();
  }
  std::vector<float> short_b(2);
  EXPECT_THROW(conv1d(x2, s, w, short_b), ContractError);
  ConvSpec bad = s;
  bad.kernel_size = 0;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = s;
  bad.stride = 0;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = s;
  bad.groups = 2;  // 3 outputs not divisible
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(ActivationTest, LeakyRelu) {
  FeatureMap x(1, 3, std::vector<float>{-1, 0, 2});
  auto y = leaky_relu(x, 0.2f);
  EXPECT_FLOAT_EQ(y.data[0], -0.2f);
  EXPECT_FLOAT_EQ(y.data[1], 0.0f);
  EXPECT_FLOAT_EQ(y.data[2], 2.0f);
  FeatureMap pos(1, 3, std::vector<float>{0, 1, 5});
  EXPECT_EQ(leaky_relu(pos, 0.3f).data, pos.data);
  FeatureMap mixed(1, 4, std::vector<float>{-3, -0.5, 0.5, 3});
  EXPECT_EQ(leaky_relu(mixed, 0.0f).data, relu(mixed).data);
}

TEST(ActivationTest, Relu) {
  FeatureMap x(1, 3, std::vector<float>{-3, 0, 5});
  EXPECT_EQ(relu(x).data, (std::vector<float>{0, 0, 5}));
  FeatureMap neg(2, 2, std::vector<float>{-1, -2, -3, -4});
  EXPECT_EQ(relu(neg).data, std::vector<float>(4, 0.0f));
  std::mt19937_64 rng(6);
  auto r = random_map(3, 7, rng);
  EXPECT_EQ(relu(relu(r)).data, relu(r).data);
}

TEST(AffineNormTest, IdentityAndHandCase) {
  FeatureMap x(1, 2, std::vector<float>{1, 2});
  std::vector<float> one{1}, zero{0}, two{2};
  EXPECT_EQ(affine_norm(x, one, zero).data, x.data);
  EXPECT_EQ(affine_norm(x, two, one).data, (std::vector<float>{3, 5}));
  std::vector<float> wrong{1, 1};
  EXPECT_THROW(affine_norm(x, wrong, zero), ContractError);
}

TEST(AffineNormTest, CompositionIsOneAffine) {
  std::mt19937_64 rng(7);
  auto x = random_map(3, 6, rng);
  std::vector<float> s1{0.5f, -2.0f, 1.5f}, b1{0.25f, 1.0f, -0.5f};
  std::vector<float> s2{2.0f, 0.5f, -1.0f}, b2{-1.0f, 0.5f, 2.0f};
  std::vector<float> s12(3), b12(3);
  for (int c = 0; c < 3; ++c) {
    s12[c] = s1[c] * s2[c];
    b12[c] = b1[c] * s2[c] + b2[c];
  }
  auto twice = affine_norm(affine_norm(x, s1, b1), s2, b2);
  auto once = affine_norm(x, s12, b12);
  for (size_t i = 0; i < x.data.size(); ++i) {
    EXPECT_NEAR(twice.data[i], once.data[i], 1e-6);
  }
}

TEST(PoolTest, IgnoresPaddingInDivisor) {
  FeatureMap x(1, 4, std::vector<float>{1, 2, 3, 4});
  auto y = avg_pool1d(x, 4, 2, 1);
  ASSERT_EQ(y.time, 2);
  EXPECT_FLOAT_EQ(y.data[0], 2.0f);  // (1+2+3)/3
  EXPECT_FLOAT_EQ(y.data[1], 3.0f);  // (2+3+4)/3
  EXPECT_THROW(avg_pool1d(FeatureMap(1, 1), 4, 2, 1), ContractError);
}

ResidualBlockParams block_params(int channels, int dilation,
                                 const std::vector<float>& w1,
                                 const std::vector<float>& b1,
                                 const std::vector<float>& w2,
                                 const std::vector<float>& b2) {
  ResidualBlockParams p;
  p.dilated.in_channels = p.dilated.out_channels = channels;
  p.dilated.kernel_size = 3;
  p.dilated.dilation = dilation;
  p.dilated.padding = dilation;
  p.pointwise.in_channels = p.pointwise.out_channels = channels;
  p.dilated_weights = w1;
  p.dilated_bias = b1;
  p.pointwise_weights = w2;
  p.pointwise_bias = b2;
  return p;
}

TEST(ResidualBlockTest, ZeroBranchIsIdentity) {
  std::mt19937_64 rng(8);
  auto x = random_map(4, 11, rng);
  std::vector<float> w1(4 * 4 * 3, 0.0f), b1(4, 0.0f), w2(16, 0.0f), b2(4, 0.0f);
  auto y = residual_dilated_block(x, block_params(4, 3, w1, b1, w2, b2));
  EXPECT_EQ(y.data, x.data);
}

TEST(ResidualBlockTest, MatchesComposedPrimitives) {
  std::mt19937_64 rng(9);
  for (int d : {1, 3, 9}) {
    auto x = random_map(4, 25, rng);
    auto w1 = random_values(48, rng), b1 = random_values(4, rng);
    auto w2 = random_values(16, rng), b2 = random_values(4, rng);
    auto p = block_params(4, d, w1, b1, w2, b2);
    auto y = residual_dilated_block(x, p);
    ASSERT_EQ(y.channels, x.channels);
    ASSERT_EQ(y.time, x.time);
    // Oracle: naive convs and hand-rolled activations.
    FeatureMap h = x;
    for (float& v : h.data) v = v > 0 ? v : 0.2f * v;
    h = naive_conv(h, p.dilated, w1, b1);
    for (float& v : h.data) v = v > 0 ? v : 0.2f * v;
    h = naive_conv(h, p.pointwise, w2, b2);
    for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += x.data[i];
    EXPECT_LT(max_rel_diff(y, h), 1e-6) << "dilation " << d;
  }
}

TEST(ResidualBlockTest, ChannelMismatchRejected) {
  std::vector<float> w1(4 * 4 * 3), b1(4), w2(16), b2(4);
  auto p = block_params(4, 1, w1, b1, w2, b2);
  EXPECT_THROW(residual_dilated_block(FeatureMap(3, 10), p), ContractError);
}

TEST(KernelTest, Deterministic) {
  std::mt19937_64 rng(10);
  ConvSpec s;
  s.in_channels = 3;
  s.out_channels = 5;
  s.kernel_size = 4;
  s.stride = 2;
  s.transposed = true;
  auto x = random_map(3, 9, rng);
  auto w = random_values(s.weight_count(), rng);
  auto b = random_values(5, rng);
  auto a = conv_transpose1d(x, s, w, b);
  auto c = conv_transpose1d(x, s, w, b);
  EXPECT_EQ(a.data, c.data);
  EXPECT_TRUE(a.all_finite());
}

TEST(FeatureMapTest, RejectsBadShapes) {
  EXPECT_THROW(FeatureMap(2, 3, std::vector<float>(5)), ContractError);
  EXPECT_THROW(FeatureMap(0, 3), ContractError);
}

}  // namespace
}  // namespace bmg
