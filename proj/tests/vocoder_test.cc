#include "bmg/vocoder.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace bmg {
namespace {

FeatureMap random_mel(int frames, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-8.0f, 1.0f);
  FeatureMap m(80, frames);
  for (float& v : m.data) v = d(rng);
  return m;
}

class PresetTest : public ::testing::TestWithParam<Preset> {};

TEST_P(PresetTest, WaveformIs256SamplesPerFrame) {
  auto g = build_preset(GetParam());
  auto w = init_random_weights(g, 1);
  auto b = random_basis(32, 256, 16, 2);
  for (int frames : {1, 3}) {
    auto out = forward_generator(g, w, random_mel(frames, frames), &b);
    EXPECT_EQ(out.waveform.size(), 256u * frames);
    for (double v : out.waveform) ASSERT_TRUE(std::isfinite(v));
    if (g.uses_basis()) {
      EXPECT_EQ(out.weights.n_frames, 16 * frames);
      EXPECT_TRUE(out.weights.nonnegative());
    }
  }
}

TEST_P(PresetTest, AnalyzerParamsEqualInstantiated) {
  auto g = build_preset(GetParam());
  auto w = init_random_weights(g, 3);
  auto r = analyze(g);
  EXPECT_EQ(r.total_params, count_params(g, w));
  uint64_t flops = 0, params = 0;
  for (const auto& l : r.layers) {
    flops += l.flops;
    params += l.params;
  }
  EXPECT_EQ(flops, r.total_flops);
  EXPECT_EQ(params, r.total_params);
}

TEST_P(PresetTest, InstrumentedFlopsMatchAnalyzer) {
  auto g = build_preset(GetParam());
  auto w = init_random_weights(g, 4);
  auto b = random_basis(32, 256, 16, 5);
  OpTally tally;
  ExecContext ctx;
  ctx.tally = &tally;
  forward_generator(g, w, random_mel(2, 6), &b, ctx);
  EXPECT_EQ(tally.value(), analyze(g, 2).total_flops);
}

TEST_P(PresetTest, AnalyzerIsLinearInFrames) {
  auto g = build_preset(GetParam());
  EXPECT_EQ(analyze(g, 6).total_flops, 6 * analyze(g, 1).total_flops);
  EXPECT_NEAR(analyze(g, 6).gflops_per_second(), analyze(g, 1).gflops_per_second(), 1e-9);
}

TEST_P(PresetTest, ForwardIsDeterministicAcrossThreads) {
  auto g = build_preset(GetParam());
  auto w = init_random_weights(g, 7);
  auto b = random_basis(32, 256, 16, 8);
  auto mel = random_mel(2, 9);
  ExecContext four;
  four.threads = 4;
  EXPECT_EQ(forward_generator(g, w, mel, &b).waveform,
            forward_generator(g, w, mel, &b, four).waveform);
}

INSTANTIATE_TEST_SUITE_P(AllPresets, PresetTest, ::testing::ValuesIn(all_presets()),
                         [](const auto& info) {
                           std::string n(preset_name(info.param));
                           for (char& c : n) if (c == '-') c = '_';
                           return n;
                         });

TEST(PresetStructureTest, UpsamplingFactors) {
  EXPECT_EQ(build_preset(Preset::kBasisMelganLarge).upsampling_factors, (std::vector<int>{4, 4}));
  EXPECT_EQ(build_preset(Preset::kBasisMelganLight).upsampling_factors, (std::vector<int>{4, 4}));
  EXPECT_EQ(build_preset(Preset::kMelganReference).upsampling_factors,
            (std::vector<int>{8, 8, 2, 2}));
  EXPECT_EQ(build_preset(Preset::kHifiganV1Reference).upsampling_factors,
            (std::vector<int>{8, 8, 2, 2}));
  EXPECT_EQ(build_preset(Preset::kBasisMelganLarge).transposed_stage_count(), 2);
  EXPECT_EQ(build_preset(Preset::kBasisMelganLight).transposed_stage_count(), 2);
  EXPECT_EQ(build_preset(Preset::kMelganReference).transposed_stage_count(), 4);
}

TEST(PresetStructureTest, BasisPresetsEndInTransformReluSynthesis) {
  for (auto p : {Preset::kBasisMelganLarge, Preset::kBasisMelganLight}) {
    auto g = build_preset(p);
    const size_t n = g.layers.size();
    ASSERT_GE(n, 3u);
    EXPECT_TRUE(std::holds_alternative<TransformLayer>(g.layers[n - 3]));
    ASSERT_TRUE(std::holds_alternative<ActivationLayer>(g.layers[n - 2]));
    EXPECT_EQ(std::get<ActivationLayer>(g.layers[n - 2]).kind, Activation::kRelu);
    ASSERT_TRUE(std::holds_alternative<BasisSynthesisLayer>(g.layers[n - 1]));
    const auto& bl = std::get<BasisSynthesisLayer>(g.layers[n - 1]);
    EXPECT_EQ(bl.window_len, 32);
    EXPECT_EQ(bl.n_basis, 256);
    EXPECT_EQ(g.frame_ratio() * bl.hop, 256);
  }
  EXPECT_FALSE(build_preset(Preset::kMelganReference).uses_basis());
}

TEST(PresetStructureTest, ParameterCountsNearTargets) {
  auto large = analyze(build_preset(Preset::kBasisMelganLarge)).params_millions();
  auto light = analyze(build_preset(Preset::kBasisMelganLight)).params_millions();
  EXPECT_NEAR(large, 15.90, 1.59);
  EXPECT_NEAR(light, 3.30, 0.33);
  EXPECT_LT(light, large);
  // Same count as the original HiFi-GAN V1 generator.
  EXPECT_NEAR(analyze(build_preset(Preset::kHifiganV1Reference)).params_millions(), 13.92, 0.01);
}

TEST(PresetStructureTest, NamesRoundTrip) {
  for (auto p : all_presets()) EXPECT_EQ(parse_preset(preset_name(p)), p);
  EXPECT_THROW(parse_preset("wavenet"), ContractError);
  EXPECT_THROW(build_preset("basis-melgan"), ContractError);
}

TEST(PresetStructureTest, DescribeListsLayers) {
  auto text = describe(build_preset(Preset::kBasisMelganLarge));
  EXPECT_NE(text.find("basis-melgan-large"), std::string::npos);
  EXPECT_NE(text.find("conv_transpose1d up.0"), std::string::npos);
  EXPECT_NE(text.find("basis_synthesis window=32 n_basis=256 hop=16"), std::string::npos);
}

TEST(AnalyzerTest, OneLayerHandCount) {
  GeneratorGraph g;
  g.preset = "toy";
  g.mel_hop = 256;
  g.upsampling_factors = {256};
  ConvSpec up;
  up.in_channels = 80;
  up.out_channels = 1;
  up.kernel_size = 256;
  up.stride = 256;
  up.transposed = true;
  g.layers.push_back(ConvLayer{"up", up});
  auto r = analyze(g, 10);
  // 10 frames x 80 in x 1 out x 256 taps MACs, plus 2560 bias adds.
  EXPECT_EQ(r.total_flops, 2ull * 10 * 80 * 256 + 2560);
  EXPECT_EQ(r.total_params, 80ull * 256 + 1);

  ConvSpec c;
  c.in_channels = 3;
  c.out_channels = 5;
  c.kernel_size = 7;
  c.padding = 3;
  // 2 * out_len * out * in * k + out_len * out
  EXPECT_EQ(c.flops(100), 2ull * 100 * 5 * 3 * 7 + 100 * 5);
}

TEST(ForwardTest, MissingBasisIsRejectedUpFront) {
  auto g = build_preset(Preset::kBasisMelganLight);
  auto w = init_random_weights(g, 10);
  OpTally tally;
  ExecContext ctx;
  ctx.tally = &tally;
  try {
    forward_generator(g, w, random_mel(2, 11), nullptr, ctx);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("basis"), std::string::npos);
  }
  EXPECT_EQ(tally.value(), 0u);
  auto wrong = random_basis(32, 256, 8, 12);
  EXPECT_THROW(forward_generator(g, w, random_mel(2, 11), &wrong, ctx), ContractError);
  EXPECT_EQ(tally.value(), 0u);
}

TEST(ForwardTest, MelBandMismatchNamesInput) {
  auto g = build_preset(Preset::kMelganReference);
  auto w = init_random_weights(g, 13);
  try {
    forward_generator(g, w, FeatureMap(64, 3), nullptr);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("input"), std::string::npos) << e.what();
  }
}

TEST(ForwardTest, WeightMismatchesAreReported) {
  auto g = build_preset(Preset::kMelganReference);
  auto w = init_random_weights(g, 14);
  auto missing = w;
  missing.tensors.erase("conv_post.weight");
  EXPECT_THROW(forward_generator(g, missing, random_mel(1, 1), nullptr), ContractError);
  auto orphan = w;
  orphan.tensors["extra.weight"] = Tensor{{1}, {0.0f}};
  EXPECT_THROW(forward_generator(g, orphan, random_mel(1, 1), nullptr), ContractError);
  auto reshaped = w;
  reshaped.tensors["conv_pre.weight"].dims = {512, 80 * 7};
  EXPECT_THROW(forward_generator(g, reshaped, random_mel(1, 1), nullptr), ContractError);
}

TEST(ForwardTest, ZeroTransformYieldsReluOfBias) {
  auto g = build_preset(Preset::kBasisMelganLight);
  auto w = init_random_weights(g, 15);
  auto& w3 = w.tensors.at("transform.linear3.weight");
  std::fill(w3.data.begin(), w3.data.end(), 0.0f);
  const auto& bias = w.tensors.at("transform.linear3.bias").data;
  auto b = random_basis(32, 256, 16, 16);
  auto out = forward_generator(g, w, random_mel(2, 17), &b);
  for (int j = 0; j < 256; ++j) {
    for (int f = 0; f < out.weights.n_frames; ++f) {
      EXPECT_FLOAT_EQ(static_cast<float>(out.weights.at(j, f)), std::max(0.0f, bias[j]));
    }
  }
  auto y = synthesize(b, out.weights);
  y.resize(out.waveform.size());
  EXPECT_EQ(y, out.waveform);
}

TEST(ForwardTest, WaveformIsSynthesisOfPredictedWeights) {
  auto g = build_preset(Preset::kBasisMelganLight);
  auto w = init_random_weights(g, 18);
  auto b = random_basis(32, 256, 16, 19);
  auto out = forward_generator(g, w, random_mel(3, 20), &b);
  // Independent overlap-add of B * W.
  Signal y((out.weights.n_frames - 1) * 16 + 32, 0.0);
  for (int f = 0; f < out.weights.n_frames; ++f) {
    for (int r = 0; r < 32; ++r) {
      double s = 0.0;
      for (int c = 0; c < 256; ++c) s += b.at(r, c) * out.weights.at(c, f);
      y[f * 16 + r] += s;
    }
  }
  for (size_t i = 0; i < out.waveform.size(); ++i) {
    EXPECT_NEAR(out.waveform[i], y[i], 1e-6 * (1.0 + std::abs(y[i])));
  }
}

TEST(DiscriminatorTest, MultiScaleShapes) {
  DiscriminatorWidth width{4, 64, 2};
  auto g = build_msd(width);
  auto w = init_random_weights(g, 21);
  Signal x(4000);
  std::mt19937_64 rng(22);
  std::normal_distribution<double> d(0.0, 0.3);
  for (double& v : x) v = d(rng);
  auto scores = forward_msd(g, w, x);
  ASSERT_EQ(scores.size(), 3u);
  for (size_t s = 1; s < scores.size(); ++s) {
    EXPECT_LT(scores[s].time, scores[s - 1].time);
  }
  for (const auto& m : scores) EXPECT_EQ(m.channels, 1);
  auto again = forward_msd(g, w, x);
  for (size_t s = 0; s < 3; ++s) EXPECT_EQ(again[s].data, scores[s].data);
  auto r = analyze(g, x.size());
  uint64_t params = 0;
  for (const auto& slot : weight_slots(g)) params += slot.element_count();
  EXPECT_EQ(r.total_params, params);
  OpTally tally;
  ExecContext ctx;
  ctx.tally = &tally;
  forward_msd(g, w, x, ctx);
  EXPECT_EQ(tally.value(), r.total_flops);
}

TEST(DiscriminatorTest, SpectrogramShapes) {
  DiscriminatorWidth width{4, 64, 2};
  auto g = build_mfd(width);
  ASSERT_EQ(g.subs.size(), 3u);
  for (size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(g.subs[s].convs.front().in_channels, g.resolutions[s].bins());
  }
  auto w = init_random_weights(g, 23);
  Signal x(3000);
  for (size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.05 * i);
  auto scores = forward_mfd(g, w, x);
  ASSERT_EQ(scores.size(), 3u);
  auto again = forward_mfd(g, w, x);
  for (size_t s = 0; s < 3; ++s) EXPECT_EQ(again[s].data, scores[s].data);
  OpTally tally;
  ExecContext ctx;
  ctx.tally = &tally;
  forward_mfd(g, w, x, ctx);
  EXPECT_EQ(tally.value(), analyze(g, x.size()).total_flops);
  EXPECT_THROW(forward_msd(g, w, x), ContractError);
}

}  // namespace
}  // namespace bmg
