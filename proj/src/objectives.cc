#include "bmg/objectives.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace bmg {

namespace {

// log terms are clamped here, as in common BCE implementations.
constexpr double kLogClamp = -100.0;

double sign(double x) { return (x > 0.0) - (x < 0.0); }

double safe_log(double p) {
  return p > 0.0 ? std::max(std::log(p), kLogClamp) : kLogClamp;
}

double softplus(double a) {
  return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a)));
}

// -log(1 - sigmoid(a)) and -log(sigmoid(a)), each clamped like safe_log.
double neg_log_sigmoid(double a) { return std::min(softplus(-a), -kLogClamp); }
double neg_log_one_minus_sigmoid(double a) {
  return std::min(softplus(a), -kLogClamp);
}

struct Reference {
  MagnitudeSpectrogram mag;
  double norm = 0.0;
  std::vector<double> log_mag;
};

Reference analyze_reference(std::span<const double> y, const StftConfig& cfg) {
  Reference r;
  r.mag = stft_magnitude(y, cfg);
  double sq = 0.0;
  for (double m : r.mag.data) sq += m * m;
  r.norm = std::sqrt(sq);
  if (r.norm == 0.0) {
    throw ContractError(
        "stft loss: reference signal is silent, spectral convergence is "
        "undefined");
  }
  r.log_mag.resize(r.mag.data.size());
  for (size_t i = 0; i < r.mag.data.size(); ++i) {
    r.log_mag[i] = std::log(std::max(r.mag.data[i], kMagnitudeFloor));
  }
  return r;
}

StftLoss single_against(const Reference& ref, std::span<const double> estimate,
                        const StftConfig& cfg, bool want_grad) {
  const StftFrames frames = stft(estimate, cfg);
  const MagnitudeSpectrogram est = magnitude(frames);
  const size_t n = est.data.size();
  if (n != ref.mag.data.size()) {
    throw ContractError("stft loss: spectrogram shapes differ");
  }
  double diff_sq = 0.0;
  double log_l1 = 0.0;
  std::vector<double> log_diff(n);
  for (size_t i = 0; i < n; ++i) {
    const double d = ref.mag.data[i] - est.data[i];
    diff_sq += d * d;
    log_diff[i] =
        ref.log_mag[i] - std::log(std::max(est.data[i], kMagnitudeFloor));
    log_l1 += std::abs(log_diff[i]);
  }
  StftLoss out;
  const double diff_norm = std::sqrt(diff_sq);
  out.sc = diff_norm / ref.norm;
  out.mg = log_l1 / static_cast<double>(n);
  if (!want_grad) return out;

  MagnitudeSpectrogram g;
  g.bins = est.bins;
  g.frames = est.frames;
  g.data.assign(n, 0.0);
  const double sc_scale = diff_norm > 0.0 ? 1.0 / (diff_norm * ref.norm) : 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    double gi = -(ref.mag.data[i] - est.data[i]) * sc_scale;
    if (est.data[i] > kMagnitudeFloor) {
      gi -= sign(log_diff[i]) * inv_n / est.data[i];
    }
    g.data[i] = gi;
  }
  out.grad = stft_magnitude_vjp(frames, g);
  return out;
}

void check_lengths(std::span<const double> a, std::span<const double> b,
                   const char* what) {
  if (a.size() != b.size()) {
    throw ContractError(std::string(what) + ": reference has " +
                        std::to_string(a.size()) + " samples, estimate " +
                        std::to_string(b.size()));
  }
}

double mean_over_maps(const std::vector<FeatureMap>& maps,
                      const std::function<double(size_t, size_t)>& elem) {
  if (maps.empty()) throw ContractError("score_bce: no score maps");
  double total = 0.0;
  for (size_t m = 0; m < maps.size(); ++m) {
    const size_t n = maps[m].data.size();
    if (n == 0) throw ContractError("score_bce: empty score map");
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += elem(m, i);
    total += s / static_cast<double>(n);
  }
  return total / static_cast<double>(maps.size());
}

// Multi-resolution loss against precomputed references.
StftLoss mr_against(const std::vector<Reference>& refs,
                    std::span<const double> estimate,
                    const std::vector<StftConfig>& configs, bool want_grad) {
  StftLoss out;
  if (want_grad) out.grad.assign(estimate.size(), 0.0);
  const double m = static_cast<double>(configs.size());
  for (size_t c = 0; c < configs.size(); ++c) {
    StftLoss s = single_against(refs[c], estimate, configs[c], want_grad);
    out.sc += s.sc;
    out.mg += s.mg;
    if (want_grad) {
      for (size_t i = 0; i < s.grad.size(); ++i) out.grad[i] += s.grad[i] / m;
    }
  }
  out.sc /= m;
  out.mg /= m;
  return out;
}

}  // namespace

WeightLoss weight_loss(const WeightMatrix& target,
                       const WeightMatrix& predicted) {
  if (target.n_basis != predicted.n_basis ||
      target.n_frames != predicted.n_frames) {
    throw ContractError("weight_loss: target is [" +
                        std::to_string(target.n_basis) + ", " +
                        std::to_string(target.n_frames) + "], prediction [" +
                        std::to_string(predicted.n_basis) + ", " +
                        std::to_string(predicted.n_frames) + "]");
  }
  WeightLoss out;
  out.grad = WeightMatrix(predicted.n_basis, predicted.n_frames);
  const size_t n = predicted.data.size();
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = predicted.data[i] - target.data[i];
    sum += std::abs(d);
    out.grad.data[i] = sign(d) * inv_n;
  }
  out.value = sum * inv_n;
  return out;
}

StftLoss stft_loss_single(std::span<const double> reference,
                          std::span<const double> estimate,
                          const StftConfig& cfg, bool want_grad) {
  check_lengths(reference, estimate, "stft_loss_single");
  return single_against(analyze_reference(reference, cfg), estimate, cfg,
                        want_grad);
}

StftLoss mr_stft_loss(std::span<const double> reference,
                      std::span<const double> estimate,
                      const std::vector<StftConfig>& configs, bool want_grad) {
  check_lengths(reference, estimate, "mr_stft_loss");
  if (configs.empty()) throw ContractError("mr_stft_loss: no resolutions");
  std::vector<Reference> refs;
  for (const auto& cfg : configs) refs.push_back(analyze_reference(reference, cfg));
  return mr_against(refs, estimate, configs, want_grad);
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
}

double bce(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw ContractError("bce: prediction has " + std::to_string(p.size()) +
                        " elements, target " + std::to_string(q.size()));
  }
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || p[i] > 1.0 || q[i] < 0.0 || q[i] > 1.0) {
      throw ContractError("bce: probabilities must lie in [0, 1]");
    }
    sum -= q[i] * safe_log(p[i]) + (1.0 - q[i]) * safe_log(1.0 - p[i]);
  }
  return sum / static_cast<double>(p.size());
}

double score_bce(const std::vector<FeatureMap>& pred,
                 const std::vector<FeatureMap>& target) {
  if (pred.size() != target.size()) {
    throw ContractError("score_bce: " + std::to_string(pred.size()) +
                        " prediction maps vs " + std::to_string(target.size()) +
                        " target maps");
  }
  for (size_t m = 0; m < pred.size(); ++m) {
    if (pred[m].data.size() != target[m].data.size()) {
      throw ContractError("score_bce: map " + std::to_string(m) +
                          " shape mismatch");
    }
  }
  return mean_over_maps(pred, [&](size_t m, size_t i) {
    const double a = pred[m].data[i];
    const double q = sigmoid(target[m].data[i]);
    return q * neg_log_sigmoid(a) + (1.0 - q) * neg_log_one_minus_sigmoid(a);
  });
}

double score_bce(const std::vector<FeatureMap>& pred, double label) {
  return mean_over_maps(pred, [&](size_t m, size_t i) {
    const double a = pred[m].data[i];
    return label * neg_log_sigmoid(a) +
           (1.0 - label) * neg_log_one_minus_sigmoid(a);
  });
}

Discriminators make_discriminators(uint64_t seed,
                                   const DiscriminatorWidth& width) {
  Discriminators d;
  d.msd = build_msd(width);
  d.mfd = build_mfd(width);
  d.msd_weights = init_random_weights(d.msd, seed);
  d.mfd_weights = init_random_weights(d.mfd, seed + 1);
  return d;
}

AdversarialLosses adversarial_losses(std::span<const double> reference,
                                     std::span<const double> estimate,
                                     const Discriminators& d,
                                     AdversarialForm form,
                                     const ExecContext& ctx) {
  check_lengths(reference, estimate, "adversarial_losses");
  auto one = [&](const DiscriminatorGraph& g, const ModelWeights& w) {
    auto fake = forward_discriminator(g, w, estimate, ctx);
    if (form == AdversarialForm::kRealLabel) return score_bce(fake, 1.0);
    return score_bce(fake, forward_discriminator(g, w, reference, ctx));
  };
  return {one(d.msd, d.msd_weights), one(d.mfd, d.mfd_weights)};
}

DiscriminatorLosses discriminator_losses(std::span<const double> reference,
                                         std::span<const double> estimate,
                                         const DiscriminatorGraph& g,
                                         const ModelWeights& w,
                                         const ExecContext& ctx) {
  return {score_bce(forward_discriminator(g, w, reference, ctx), 1.0),
          score_bce(forward_discriminator(g, w, estimate, ctx), 0.0)};
}

double LossBreakdown::sum_of_terms() const {
  double t = 0.0;
  if (weight_loss) t += *weight_loss;
  t += mr_stft;
  if (adv_s) t += *adv_s;
  if (adv_f) t += *adv_f;
  return t;
}

std::string LossBreakdown::to_text() const {
  std::ostringstream os;
  os.precision(17);
  if (weight_loss) os << "weight_loss=" << *weight_loss << "\n";
  os << "sc=" << sc << "\n";
  os << "mg=" << mg << "\n";
  os << "mr_stft=" << mr_stft << "\n";
  if (adv_s) os << "adv_s=" << *adv_s << "\n";
  if (adv_f) os << "adv_f=" << *adv_f << "\n";
  os << "total=" << total << "\n";
  return os.str();
}

LossBreakdown generator_total(std::span<const double> reference,
                              std::span<const double> estimate,
                              const WeightMatrix* target_weights,
                              const WeightMatrix* predicted_weights,
                              const LossFlags& flags,
                              const Discriminators* discriminators,
                              const ExecContext& ctx) {
  LossBreakdown b;
  StftLoss mr = mr_stft_loss(reference, estimate, multi_resolution_configs(),
                             /*want_grad=*/false);
  b.sc = mr.sc;
  b.mg = mr.mg;
  b.mr_stft = mr.total();
  if (flags.adversarial) {
    if (!discriminators) {
      throw ContractError("generator_total: adversarial mode needs discriminators");
    }
    auto adv = adversarial_losses(reference, estimate, *discriminators,
                                  flags.form, ctx);
    b.adv_s = adv.adv_s;
    b.adv_f = adv.adv_f;
  } else if (target_weights && predicted_weights) {
    b.weight_loss = weight_loss(*target_weights, *predicted_weights).value;
  }
  b.total = b.sum_of_terms();
  return b;
}

FitResult fit_weights(std::span<const double> target, const BasisMatrix& b,
                      WeightMatrix init, const FitOptions& opts) {
  if (opts.steps < 1) throw ContractError("fit_weights: steps must be >= 1");
  if (opts.lr <= 0.0) throw ContractError("fit_weights: lr must be positive");
  if (init.n_basis != b.n_basis) {
    throw ContractError("fit_weights: init has " + std::to_string(init.n_basis) +
                        " basis rows, basis has " + std::to_string(b.n_basis));
  }
  if (opts.configs.empty()) throw ContractError("fit_weights: no resolutions");
  constexpr double kDivergence = 1e6;
  constexpr int kMaxHalvings = 40;

  std::vector<Reference> refs;
  for (const auto& cfg : opts.configs) refs.push_back(analyze_reference(target, cfg));

  auto render = [&](const WeightMatrix& w) {
    Signal y = synthesize(b, w);
    y.resize(target.size(), 0.0);
    return y;
  };
  auto project = [](WeightMatrix& w) {
    for (double& v : w.data) v = std::max(v, 0.0);
  };

  FitResult out;
  out.weights = std::move(init);
  project(out.weights);
  StftLoss cur = mr_against(refs, render(out.weights), opts.configs, true);
  out.loss_trace.push_back(cur.total());
  double step = opts.lr;

  const size_t n = out.weights.data.size();
  std::vector<double> m1(n, 0.0), m2(n, 0.0), dir(n, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-12;

  for (int s = 0; s < opts.steps; ++s) {
    if (cur.total() <= opts.target_loss) break;
    const WeightMatrix grad =
        synthesize_adjoint(b, cur.grad, out.weights.n_frames);
    if (opts.preconditioned) {
      const double c1 = 1.0 - std::pow(kBeta1, s + 1);
      const double c2 = 1.0 - std::pow(kBeta2, s + 1);
      for (size_t i = 0; i < n; ++i) {
        const double g = grad.data[i];
        m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
        m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g * g;
        dir[i] = (m1[i] / c1) / (std::sqrt(m2[i] / c2) + kEps);
      }
    } else {
      dir = grad.data;
    }
    auto candidate = [&](double eta) {
      WeightMatrix w = out.weights;
      for (size_t i = 0; i < n; ++i) w.data[i] -= eta * dir[i];
      project(w);
      return w;
    };
    WeightMatrix next = candidate(step);
    StftLoss next_loss = mr_against(refs, render(next), opts.configs, true);
    if (opts.line_search) {
      int halvings = 0;
      while (!(next_loss.total() <= cur.total()) && halvings < kMaxHalvings) {
        step *= 0.5;
        ++halvings;
        next = candidate(step);
        next_loss = mr_against(refs, render(next), opts.configs, true);
      }
      if (!(next_loss.total() <= cur.total())) {
        // No descent at any tried step: stationary for this projection.
        out.loss_trace.push_back(cur.total());
        out.steps = s + 1;
        break;
      }
    }
    if (!std::isfinite(next_loss.total()) || next_loss.total() > kDivergence) {
      throw ContractError("fit_weights: loss diverged at step " +
                          std::to_string(s + 1));
    }
    out.weights = std::move(next);
    cur = std::move(next_loss);
    out.loss_trace.push_back(cur.total());
    out.steps = s + 1;
    if (opts.line_search) step = std::min(step * 1.5, opts.lr);
  }
  return out;
}

}  // namespace bmg
