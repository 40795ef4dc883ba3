#include "bmg/objectives.h"

#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace bmg {
namespace {

Signal noise(size_t n, uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Signal y(n);
  for (double& v : y) v = d(rng);
  return y;
}

Signal tone_mix(size_t n, double f1, double f2) {
  Signal y(n);
  for (size_t i = 0; i < n; ++i) {
    y[i] = 0.5 * std::sin(2 * M_PI * f1 * i / 22050.0) +
           0.2 * std::sin(2 * M_PI * f2 * i / 22050.0);
  }
  return y;
}

WeightMatrix random_weights(int rows, int frames, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  WeightMatrix w(rows, frames);
  for (double& v : w.data) v = d(rng);
  return w;
}

std::vector<StftConfig> small_configs() {
  return {{128, 32, 96}, {256, 64, 256}, {64, 16, 48}};
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

TEST(WeightLossTest, HandValues) {
  WeightMatrix t(2, 2), p(2, 2);
  t.data = {1.0, 2.0, 0.0, 4.0};
  p.data = {1.5, 2.0, 1.0, 0.0};
  auto l = weight_loss(t, p);
  EXPECT_DOUBLE_EQ(l.value, (0.5 + 0.0 + 1.0 + 4.0) / 4.0);
  EXPECT_EQ(l.grad.data, (std::vector<double>{0.25, 0.0, 0.25, -0.25}));
  EXPECT_DOUBLE_EQ(weight_loss(t, t).value, 0.0);
  EXPECT_THROW(weight_loss(t, WeightMatrix(2, 3)), ContractError);
}

TEST(WeightLossTest, GradientMatchesFiniteDifferences) {
  auto t = random_weights(8, 5, 1);
  auto p = random_weights(8, 5, 2);
  auto l = weight_loss(t, p);
  const double eps = 1e-6;
  for (size_t i = 0; i < p.data.size(); ++i) {
    auto hi = p, lo = p;
    hi.data[i] += eps;
    lo.data[i] -= eps;
    double fd = (weight_loss(t, hi).value - weight_loss(t, lo).value) / (2 * eps);
    EXPECT_NEAR(fd, l.grad.data[i], 1e-8);
  }
}

TEST(StftLossTest, IdentityIsZero) {
  auto y = noise(3000, 3);
  for (const auto& cfg : multi_resolution_configs()) {
    auto l = stft_loss_single(y, y, cfg);
    EXPECT_EQ(l.sc, 0.0);
    EXPECT_EQ(l.mg, 0.0);
  }
  auto mr = mr_stft_loss(y, y);
  EXPECT_EQ(mr.total(), 0.0);
}

TEST(StftLossTest, ZeroEstimateHasUnitConvergence) {
  auto y = noise(3000, 4);
  Signal zero(y.size(), 0.0);
  for (const auto& cfg : multi_resolution_configs()) {
    auto l = stft_loss_single(y, zero, cfg, false);
    EXPECT_NEAR(l.sc, 1.0, 1e-12);
    EXPECT_GT(l.mg, 0.0);
  }
}

TEST(StftLossTest, HandComputedSingleResolution) {
  auto y = tone_mix(1200, 440.0, 3000.0);
  auto e = noise(1200, 5, 0.1);
  StftConfig cfg{256, 64, 200};
  auto a = stft_magnitude(y, cfg);
  auto b = stft_magnitude(e, cfg);
  double num = 0.0, den = 0.0, mg = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    den += a.data[i] * a.data[i];
    mg += std::abs(std::log(std::max(a.data[i], 1e-5)) -
                   std::log(std::max(b.data[i], 1e-5)));
  }
  auto l = stft_loss_single(y, e, cfg, false);
  EXPECT_NEAR(l.sc, std::sqrt(num / den), 1e-12);
  EXPECT_NEAR(l.mg, mg / a.data.size(), 1e-12);
}

TEST(StftLossTest, MultiResolutionIsMeanOfSingles) {
  auto y = noise(2500, 6);
  auto e = noise(2500, 7);
  auto cfgs = multi_resolution_configs();
  double sc = 0.0, mg = 0.0;
  for (const auto& c : cfgs) {
    auto l = stft_loss_single(y, e, c, false);
    sc += l.sc;
    mg += l.mg;
  }
  auto mr = mr_stft_loss(y, e, cfgs, false);
  EXPECT_NEAR(mr.sc, sc / 3, 1e-14);
  EXPECT_NEAR(mr.mg, mg / 3, 1e-14);
  // Order of resolutions does not matter.
  std::reverse(cfgs.begin(), cfgs.end());
  EXPECT_NEAR(mr_stft_loss(y, e, cfgs, false).total(), mr.total(), 1e-14);
}

TEST(StftLossTest, Errors) {
  auto y = noise(1000, 8);
  EXPECT_THROW(mr_stft_loss(y, noise(999, 9)), ContractError);
  EXPECT_THROW(mr_stft_loss(Signal(1000, 0.0), y), ContractError);
  EXPECT_THROW(mr_stft_loss(y, y, {}), ContractError);
}

void check_signal_gradient(const Signal& ref, const Signal& est,
                           const std::vector<StftConfig>& cfgs, uint64_t seed) {
  auto l = mr_stft_loss(ref, est, cfgs, true);
  ASSERT_EQ(l.grad.size(), est.size());
  const double scale = max_abs(l.grad);
  ASSERT_GT(scale, 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, est.size() - 1);
  const double eps = 1e-6;
  for (int k = 0; k < 25; ++k) {
    size_t i = pick(rng);
    Signal hi = est, lo = est;
    hi[i] += eps;
    lo[i] -= eps;
    double fd = (mr_stft_loss(ref, hi, cfgs, false).total() -
                 mr_stft_loss(ref, lo, cfgs, false).total()) /
                (2 * eps);
    EXPECT_NEAR(fd, l.grad[i], 1e-3 * scale) << "sample " << i;
  }
}

TEST(StftLossTest, SingleResolutionGradient) {
  check_signal_gradient(noise(900, 10), noise(900, 11), {{128, 32, 96}}, 12);
}

TEST(StftLossTest, MultiResolutionGradient) {
  check_signal_gradient(tone_mix(1100, 300.0, 2500.0), noise(1100, 13),
                        small_configs(), 14);
}

TEST(StftLossTest, DefaultResolutionGradient) {
  check_signal_gradient(noise(2600, 15), noise(2600, 16, 0.2),
                        multi_resolution_configs(), 17);
}

TEST(StftLossTest, GradientThroughBasis) {
  auto b = random_basis(32, 64, 16, 18);
  const int frames = 40;
  const size_t n = synthesized_length(b, frames);
  auto target = tone_mix(n, 500.0, 4000.0);
  auto w = random_weights(64, frames, 19);
  auto cfgs = small_configs();
  auto loss_of = [&](const WeightMatrix& m) {
    return mr_stft_loss(target, synthesize(b, m), cfgs, false).total();
  };
  auto l = mr_stft_loss(target, synthesize(b, w), cfgs, true);
  auto g = synthesize_adjoint(b, l.grad, frames);
  const double scale = max_abs(g.data);
  std::mt19937_64 rng(20);
  std::uniform_int_distribution<size_t> pick(0, w.data.size() - 1);
  const double eps = 1e-4;
  for (int k = 0; k < 25; ++k) {
    size_t i = pick(rng);
    auto hi = w, lo = w;
    hi.data[i] += eps;
    lo.data[i] -= eps;
    double fd = (loss_of(hi) - loss_of(lo)) / (2 * eps);
    EXPECT_NEAR(fd, g.data[i], 1e-3 * scale) << "entry " << i;
  }
}

TEST(StftLossTest, InvariantToSignOfEitherSignal) {
  auto y = noise(2048, 21);
  auto e = noise(2048, 22);
  Signal ny(y), ne(e);
  for (double& v : ny) v = -v;
  for (double& v : ne) v = -v;
  double base = mr_stft_loss(y, e, multi_resolution_configs(), false).total();
  EXPECT_NEAR(mr_stft_loss(ny, e, multi_resolution_configs(), false).total(), base, 1e-12);
  EXPECT_NEAR(mr_stft_loss(y, ne, multi_resolution_configs(), false).total(), base, 1e-12);
}

TEST(BceTest, HandCases) {
  std::vector<double> half{0.5}, one{1.0}, zero{0.0};
  EXPECT_NEAR(bce(half, half), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(one, one), 0.0, 1e-15);
  EXPECT_NEAR(bce(zero, zero), 0.0, 1e-15);
  // log is clamped at -100.
  EXPECT_NEAR(bce(zero, one), 100.0, 1e-12);
  EXPECT_NEAR(bce(one, zero), 100.0, 1e-12);
  std::vector<double> p{0.2, 0.9}, q{0.0, 1.0};
  EXPECT_NEAR(bce(p, q), (-std::log(0.8) - std::log(0.9)) / 2, 1e-14);
  EXPECT_THROW(bce(p, half), ContractError);
  std::vector<double> bad{1.5};
  EXPECT_THROW(bce(bad, half), ContractError);
}

TEST(BceTest, ScoreMaps) {
  FeatureMap zero(1, 4, 0.0f);
  EXPECT_NEAR(score_bce({zero}, {zero}), std::log(2.0), 1e-12);
  EXPECT_NEAR(score_bce({zero}, 1.0), std::log(2.0), 1e-12);
  FeatureMap big(1, 3, 30.0f);
  EXPECT_NEAR(score_bce({big}, 1.0), 0.0, 1e-10);
  // Mean over maps of per-map means, not a pooled mean.
  FeatureMap a(1, 1, 0.0f), b(1, 9, 30.0f);
  EXPECT_NEAR(score_bce({a, b}, 1.0), std::log(2.0) / 2, 1e-10);
  EXPECT_NEAR(sigmoid(0.0), 0.5, 1e-15);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-15);
  EXPECT_NEAR(sigmoid(800.0), 1.0, 1e-15);
}

TEST(AdversarialTest, ReferenceTargetAndRealLabel) {
  auto d = make_discriminators(23, {4, 64, 2});
  auto y = noise(2048, 24);
  auto e = noise(2048, 25);
  auto same = adversarial_losses(y, y, d);
  // BCE(p, p) is the entropy of p, which is at most ln 2.
  EXPECT_GT(same.adv_s, 0.0);
  EXPECT_LE(same.adv_s, std::log(2.0) + 1e-9);
  EXPECT_LE(same.adv_f, std::log(2.0) + 1e-9);
  auto diff = adversarial_losses(y, e, d);
  EXPECT_GE(diff.adv_s, 0.0);
  auto label = adversarial_losses(y, e, d, AdversarialForm::kRealLabel);
  auto msd = forward_msd(d.msd, d.msd_weights, e);
  EXPECT_NEAR(label.adv_s, score_bce(msd, 1.0), 1e-12);
  auto mfd = forward_mfd(d.mfd, d.mfd_weights, e);
  EXPECT_NEAR(label.adv_f, score_bce(mfd, 1.0), 1e-12);
  auto dl = discriminator_losses(y, e, d.msd, d.msd_weights);
  EXPECT_NEAR(dl.real, score_bce(forward_msd(d.msd, d.msd_weights, y), 1.0), 1e-12);
  EXPECT_NEAR(dl.fake, score_bce(msd, 0.0), 1e-12);
}

TEST(GeneratorTotalTest, Modes) {
  auto y = noise(2048, 26);
  auto e = noise(2048, 27);
  auto wt = random_weights(16, 8, 28);
  auto wp = random_weights(16, 8, 29);
  auto pre = generator_total(y, e, &wt, &wp, {});
  ASSERT_TRUE(pre.weight_loss.has_value());
  EXPECT_FALSE(pre.adv_s.has_value());
  EXPECT_NEAR(pre.total, *pre.weight_loss + pre.mr_stft, 1e-14);
  EXPECT_NEAR(pre.mr_stft, pre.sc + pre.mg, 1e-14);

  auto no_w = generator_total(y, e, nullptr, nullptr, {});
  EXPECT_FALSE(no_w.weight_loss.has_value());
  EXPECT_DOUBLE_EQ(no_w.total, no_w.mr_stft);

  auto d = make_discriminators(30, {4, 64, 2});
  LossFlags adv{true, AdversarialForm::kReferenceTarget};
  auto a = generator_total(y, e, &wt, &wp, adv, &d);
  EXPECT_FALSE(a.weight_loss.has_value());
  ASSERT_TRUE(a.adv_s && a.adv_f);
  EXPECT_NEAR(a.total, a.mr_stft + *a.adv_s + *a.adv_f, 1e-14);
  EXPECT_THROW(generator_total(y, e, nullptr, nullptr, adv, nullptr), ContractError);

  auto text = a.to_text();
  EXPECT_EQ(text.find("weight_loss="), std::string::npos);
  for (const char* key : {"sc=", "mg=", "mr_stft=", "adv_s=", "adv_f=", "total="}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
  auto same = generator_total(y, y, &wt, &wt, {});
  EXPECT_EQ(same.total, 0.0);
}

TEST(FitWeightsTest, TraceIsMonotoneAndImproves) {
  auto b = random_basis(32, 64, 16, 31);
  auto w_star = random_weights(64, 30, 32);
  auto target = synthesize(b, w_star);
  FitOptions opts;
  opts.steps = 60;
  opts.configs = small_configs();
  auto init = random_weights(64, 30, 33);
  for (double& v : init.data) v *= 0.1;
  auto r = fit_weights(target, b, init, opts);
  ASSERT_GE(r.loss_trace.size(), 2u);
  for (size_t i = 1; i < r.loss_trace.size(); ++i) {
    EXPECT_LE(r.loss_trace[i], r.loss_trace[i - 1]);
  }
  EXPECT_LT(r.loss_trace.back(), 0.8 * r.loss_trace.front());
  EXPECT_TRUE(r.weights.nonnegative());
}

TEST(FitWeightsTest, ExactWeightsAreAFixedPoint) {
  auto b = random_basis(32, 64, 16, 34);
  auto w_star = random_weights(64, 20, 35);
  auto target = synthesize(b, w_star);
  FitOptions opts;
  opts.steps = 5;
  opts.configs = small_configs();
  auto r = fit_weights(target, b, w_star, opts);
  EXPECT_EQ(r.loss_trace.front(), 0.0);
  EXPECT_EQ(r.weights.data, w_star.data);
}

TEST(FitWeightsTest, PlainDescentAlsoMonotone) {
  auto b = random_basis(32, 64, 16, 36);
  auto target = synthesize(b, random_weights(64, 20, 37));
  FitOptions opts;
  opts.steps = 30;
  opts.preconditioned = false;
  opts.configs = small_configs();
  auto r = fit_weights(target, b, random_weights(64, 20, 38), opts);
  for (size_t i = 1; i < r.loss_trace.size(); ++i) {
    EXPECT_LE(r.loss_trace[i], r.loss_trace[i - 1]);
  }
}

TEST(FitWeightsTest, BadOptions) {
  auto b = random_basis(32, 64, 16, 39);
  auto target = noise(500, 40);
  FitOptions opts;
  opts.steps = 0;
  EXPECT_THROW(fit_weights(target, b, WeightMatrix(64, 30), opts), ContractError);
  opts.steps = 1;
  EXPECT_THROW(fit_weights(target, b, WeightMatrix(32, 30), opts), ContractError);
  opts.lr = -1.0;
  EXPECT_THROW(fit_weights(target, b, WeightMatrix(64, 30), opts), ContractError);
}

}  // namespace
}  // namespace bmg
