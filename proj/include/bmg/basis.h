// Waveforms as nonnegative weights over a fixed basis.
//
// A BasisMatrix B holds n_basis atoms of window_len samples. A WeightMatrix
// W holds one nonnegative coefficient vector per frame; frame f renders the
// window B * W[:, f], and windows are overlap-added at stride B.hop.

#ifndef BMG_BASIS_H_
#define BMG_BASIS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "bmg/dsp.h"
#include "bmg/spectral.h"

namespace bmg {

// [window_len, n_basis], row-major.
struct BasisMatrix {
  int window_len = 0;
  int n_basis = 0;
  int hop = 0;
  std::vector<double> data;

  BasisMatrix() = default;
  BasisMatrix(int window_len, int n_basis, int hop);
  BasisMatrix(int window_len, int n_basis, int hop, std::vector<double> values);

  double& at(int row, int col) {
    return data[static_cast<size_t>(row) * n_basis + col];
  }
  double at(int row, int col) const {
    return data[static_cast<size_t>(row) * n_basis + col];
  }
  // Checks shape, overcompleteness and the absence of all-zero columns.
  void validate() const;
  double column_norm(int col) const;
};

// Gaussian atoms with unit-norm columns.
BasisMatrix random_basis(int window_len, int n_basis, int hop, uint64_t seed);

// [n_basis, n_frames], row-major.
struct WeightMatrix {
  int n_basis = 0;
  int n_frames = 0;
  std::vector<double> data;

  WeightMatrix() = default;
  WeightMatrix(int n_basis, int n_frames, double fill = 0.0);

  double& at(int basis, int frame) {
    return data[static_cast<size_t>(basis) * n_frames + frame];
  }
  double at(int basis, int frame) const {
    return data[static_cast<size_t>(basis) * n_frames + frame];
  }
  bool nonnegative() const;
};

// Length (n_frames - 1) * hop + window_len.
size_t synthesized_length(const BasisMatrix& b, int n_frames);

Signal synthesize(const BasisMatrix& b, const WeightMatrix& w,
                  OpTally* tally = nullptr);

// Adjoint of synthesize with respect to W: maps dL/dy to dL/dW. Samples of
// grad_y past the synthesized length are ignored; missing ones read as 0.
WeightMatrix synthesize_adjoint(const BasisMatrix& b,
                                std::span<const double> grad_y, int n_frames);

// Elementwise W_pre * mask, mask entries in [0, 1].
WeightMatrix apply_mask(const WeightMatrix& w_pre, const WeightMatrix& mask);

struct NnlsResult {
  std::vector<double> weights;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  // Objective 0.5 * ||B v - w||^2 after each iteration.
  std::vector<double> objective_trace;
};

// Projected-gradient NNLS with step 1 / ||B^T B||_2. The gradient and
// step size are fixed per basis, so one solver serves many windows.
class NnlsSolver {
 public:
  explicit NnlsSolver(const BasisMatrix& b);

  NnlsResult solve(std::span<const double> window, double tol, int max_iter,
                   bool keep_trace = false) const;
  double lipschitz() const { return lipschitz_; }

 private:
  const BasisMatrix& basis_;
  double lipschitz_ = 0.0;
};

NnlsResult decompose_window(const BasisMatrix& b, std::span<const double> w,
                            double tol = 1e-10, int max_iter = 500);

struct DecomposeOptions {
  double tol = 1e-10;
  int max_iter = 500;
  int threads = 1;
};

struct DecomposeResult {
  WeightMatrix weights;
  int unconverged_frames = 0;
};

// Frames y at stride b.hop (zero-padded tail) and solves each window.
// Results are independent of the thread count.
DecomposeResult decompose_signal(const BasisMatrix& b,
                                 std::span<const double> y,
                                 const DecomposeOptions& opts = {});

int frame_count_for(const BasisMatrix& b, size_t samples);

struct LearnOptions {
  int window_len = 32;
  int n_basis = 256;
  int hop = 16;
  int iters = 50;
  // Projected-gradient passes over W per outer iteration.
  int weight_steps = 5;
  uint64_t seed = 0;
};

struct LearnResult {
  BasisMatrix basis;
  // 0.5 * ||B W - X||_F^2 over all corpus windows; entry 0 is the initial
  // objective, then one entry per outer iteration.
  std::vector<double> objective_trace;
};

// Alternating minimization: NNLS projected gradient on W, gradient steps on
// an unconstrained B. A step is only accepted if the objective does not
// increase. Columns are rescaled to unit norm at the end.
LearnResult learn_basis(const std::vector<Signal>& corpus,
                        const LearnOptions& opts);

// Scale-invariant SNR in dB after mean removal, clamped to +/-kSiSnrCap.
inline constexpr double kSiSnrCap = 120.0;
double si_snr(std::span<const double> estimate, std::span<const double> target);

}  // namespace bmg

#endif  // BMG_BASIS_H_
