// Generator and discriminator objectives with analytic gradients, and a
// projected-gradient weight fitter for copy-synthesis through a fixed basis.
//
// Conventions: L1 terms are means over elements; BCE is a per-element mean
// inside each score map, then a mean over sub-discriminators. Raw
// discriminator scores pass through a sigmoid before entering BCE.

#ifndef BMG_OBJECTIVES_H_
#define BMG_OBJECTIVES_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bmg/basis.h"
#include "bmg/spectral.h"
#include "bmg/vocoder.h"

namespace bmg {

struct WeightLoss {
  double value = 0.0;
  // Subgradient with respect to the predicted weights, sign(0) = 0.
  WeightMatrix grad;
};

// mean |predicted - target|.
WeightLoss weight_loss(const WeightMatrix& target,
                       const WeightMatrix& predicted);

struct StftLoss {
  double sc = 0.0;
  double mg = 0.0;
  // d(sc + mg) / d estimate; empty when not requested.
  Signal grad;

  double total() const { return sc + mg; }
};

inline constexpr double kMagnitudeFloor = 1e-5;

// Spectral convergence ||S| - |S^||_F / ||S||_F and mean absolute log
// magnitude difference (floored at kMagnitudeFloor). The reference must not
// be silent.
StftLoss stft_loss_single(std::span<const double> reference,
                          std::span<const double> estimate,
                          const StftConfig& cfg, bool want_grad = true);

// Mean of the single-resolution losses; sc and mg are the per-term means.
StftLoss mr_stft_loss(std::span<const double> reference,
                      std::span<const double> estimate,
                      const std::vector<StftConfig>& configs =
                          multi_resolution_configs(),
                      bool want_grad = true);

double sigmoid(double x);

// Mean binary cross-entropy of probabilities p against soft targets q.
double bce(std::span<const double> p, std::span<const double> q);

// BCE(sigmoid(pred), sigmoid(target)) per map, averaged over maps.
double score_bce(const std::vector<FeatureMap>& pred,
                 const std::vector<FeatureMap>& target);
// BCE(sigmoid(pred), label) per map, averaged over maps.
double score_bce(const std::vector<FeatureMap>& pred, double label);

struct Discriminators {
  DiscriminatorGraph msd;
  DiscriminatorGraph mfd;
  ModelWeights msd_weights;
  ModelWeights mfd_weights;
};

Discriminators make_discriminators(uint64_t seed,
                                   const DiscriminatorWidth& width = {});

enum class AdversarialForm {
  // BCE(D(estimate), D(reference)): the reference pass is the soft target.
  kReferenceTarget,
  // BCE(D(estimate), 1).
  kRealLabel,
};

struct AdversarialLosses {
  double adv_s = 0.0;
  double adv_f = 0.0;
};

AdversarialLosses adversarial_losses(
    std::span<const double> reference, std::span<const double> estimate,
    const Discriminators& d,
    AdversarialForm form = AdversarialForm::kReferenceTarget,
    const ExecContext& ctx = {});

struct DiscriminatorLosses {
  double real = 0.0;
  double fake = 0.0;
};

// BCE(D(reference), 1) and BCE(D(estimate), 0) for one discriminator.
DiscriminatorLosses discriminator_losses(std::span<const double> reference,
                                         std::span<const double> estimate,
                                         const DiscriminatorGraph& g,
                                         const ModelWeights& w,
                                         const ExecContext& ctx = {});

struct LossFlags {
  bool adversarial = false;
  AdversarialForm form = AdversarialForm::kReferenceTarget;
};

struct LossBreakdown {
  std::optional<double> weight_loss;
  double sc = 0.0;
  double mg = 0.0;
  double mr_stft = 0.0;
  std::optional<double> adv_s;
  std::optional<double> adv_f;
  double total = 0.0;

  // weight_loss + mr_stft + adv_s + adv_f over the enabled terms.
  double sum_of_terms() const;
  // key=value lines in a fixed order; disabled terms are omitted.
  std::string to_text() const;
};

// Pre-adversarial mode: mr_stft plus weight_loss when both weight matrices
// are given. Adversarial mode: mr_stft + adv_s + adv_f; the weight term is
// never included and discriminators are required.
LossBreakdown generator_total(std::span<const double> reference,
                              std::span<const double> estimate,
                              const WeightMatrix* target_weights,
                              const WeightMatrix* predicted_weights,
                              const LossFlags& flags,
                              const Discriminators* discriminators = nullptr,
                              const ExecContext& ctx = {});

struct FitOptions {
  int steps = 2000;
  double lr = 0.003;
  bool line_search = true;
  // Scale each coordinate of the gradient by running first and second
  // moment estimates (Adam-style) before the projected step.
  bool preconditioned = true;
  std::vector<StftConfig> configs = multi_resolution_configs();
  // Stop early once the loss drops below this value.
  double target_loss = 0.0;
};

struct FitResult {
  WeightMatrix weights;
  // Loss before the first step, then after every step.
  std::vector<double> loss_trace;
  int steps = 0;
};

// Projected gradient descent on mr_stft_loss(target, synthesize(B, W)),
// W <- max(W, 0) after each step. With line search the step is halved until
// the loss does not increase, and grows back toward lr after each accepted
// step, so the loss trace is non-increasing.
FitResult fit_weights(std::span<const double> target, const BasisMatrix& b,
                      WeightMatrix init, const FitOptions& opts = {});

}  // namespace bmg

#endif  // BMG_OBJECTIVES_H_
