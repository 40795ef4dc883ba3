#include "bmg/basis.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace bmg {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_matrix(const BasisMatrix& b) {
  return {b.data.data(), b.window_len, b.n_basis};
}

double largest_eigenvalue(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      sym, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff();
}

}  // namespace

// BasisMatrix ----------------------------------------------------------------

BasisMatrix::BasisMatrix(int window_len, int n_basis, int hop)
    : window_len(window_len), n_basis(n_basis), hop(hop) {
  if (window_len < 1 || n_basis < 1 || hop < 1) {
    throw ContractError("BasisMatrix: dimensions must be positive");
  }
  data.assign(static_cast<size_t>(window_len) * n_basis, 0.0);
}

BasisMatrix::BasisMatrix(int window_len, int n_basis, int hop,
                         std::vector<double> values)
    : window_len(window_len), n_basis(n_basis), hop(hop),
      data(std::move(values)) {
  if (window_len < 1 || n_basis < 1 || hop < 1) {
    throw ContractError("BasisMatrix: dimensions must be positive");
  }
  if (data.size() != static_cast<size_t>(window_len) * n_basis) {
    throw ContractError("BasisMatrix: data length " +
                        std::to_string(data.size()) + ", expected " +
                        std::to_string(window_len * n_basis));
  }
}

double BasisMatrix::column_norm(int col) const {
  double s = 0.0;
  for (int r = 0; r < window_len; ++r) s += at(r, col) * at(r, col);
  return std::sqrt(s);
}

void BasisMatrix::validate() const {
  if (data.size() != static_cast<size_t>(window_len) * n_basis) {
    throw ContractError("BasisMatrix: data length does not match shape");
  }
  if (window_len >= n_basis) {
    throw ContractError("BasisMatrix: window_len " +
                        std::to_string(window_len) +
                        " must be smaller than n_basis " +
                        std::to_string(n_basis));
  }
  if (hop < 1 || hop > window_len) {
    throw ContractError("BasisMatrix: hop " + std::to_string(hop) +
                        " outside [1, window_len]");
  }
  for (int c = 0; c < n_basis; ++c) {
    if (column_norm(c) == 0.0) {
      throw ContractError("BasisMatrix: column " + std::to_string(c) +
                          " is all zero");
    }
  }
}

BasisMatrix random_basis(int window_len, int n_basis, int hop, uint64_t seed) {
  BasisMatrix b(window_len, n_basis, hop);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : b.data) v = normal(rng);
  for (int c = 0; c < n_basis; ++c) {
    double norm = b.column_norm(c);
    for (int r = 0; r < window_len; ++r) b.at(r, c) /= norm;
  }
  return b;
}

// WeightMatrix ---------------------------------------------------------------

WeightMatrix::WeightMatrix(int n_basis, int n_frames, double fill)
    : n_basis(n_basis), n_frames(n_frames) {
  if (n_basis < 1 || n_frames < 0) {
    throw ContractError("WeightMatrix: invalid shape");
  }
  data.assign(static_cast<size_t>(n_basis) * n_frames, fill);
}

bool WeightMatrix::nonnegative() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return v >= 0.0; });
}

// Synthesis ------------------------------------------------------------------

size_t synthesized_length(const BasisMatrix& b, int n_frames) {
  if (n_frames <= 0) return 0;
  return static_cast<size_t>(n_frames - 1) * b.hop + b.window_len;
}

Signal synthesize(const BasisMatrix& b, const WeightMatrix& w,
                  OpTally* tally) {
  if (w.n_basis != b.n_basis) {
    throw ContractError("synthesize: weights have " +
                        std::to_string(w.n_basis) + " rows, basis has " +
                        std::to_string(b.n_basis) + " columns");
  }
  Signal y(synthesized_length(b, w.n_frames), 0.0);
  std::vector<double> coeff(b.n_basis);
  for (int f = 0; f < w.n_frames; ++f) {
    for (int j = 0; j < b.n_basis; ++j) coeff[j] = w.at(j, f);
    double* dst = y.data() + static_cast<size_t>(f) * b.hop;
    for (int r = 0; r < b.window_len; ++r) {
      const double* brow = b.data.data() + static_cast<size_t>(r) * b.n_basis;
      double s = 0.0;
      for (int j = 0; j < b.n_basis; ++j) s += brow[j] * coeff[j];
      dst[r] += s;
    }
  }
  if (tally) {
    tally->add(2ull * w.n_frames * b.window_len * b.n_basis);
  }
  return y;
}

WeightMatrix synthesize_adjoint(const BasisMatrix& b,
                                std::span<const double> grad_y, int n_frames) {
  WeightMatrix g(b.n_basis, n_frames);
  std::vector<double> acc(b.n_basis);
  for (int f = 0; f < n_frames; ++f) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const size_t start = static_cast<size_t>(f) * b.hop;
    for (int r = 0; r < b.window_len; ++r) {
      size_t i = start + r;
      if (i >= grad_y.size()) break;
      const double gy = grad_y[i];
      if (gy == 0.0) continue;
      const double* brow = b.data.data() + static_cast<size_t>(r) * b.n_basis;
      for (int j = 0; j < b.n_basis; ++j) acc[j] += brow[j] * gy;
    }
    for (int j = 0; j < b.n_basis; ++j) g.at(j, f) = acc[j];
  }
  return g;
}

WeightMatrix apply_mask(const WeightMatrix& w_pre, const WeightMatrix& mask) {
  if (w_pre.n_basis != mask.n_basis || w_pre.n_frames != mask.n_frames) {
    throw ContractError("apply_mask: weights [" +
                        std::to_string(w_pre.n_basis) + ", " +
                        std::to_string(w_pre.n_frames) + "] vs mask [" +
                        std::to_string(mask.n_basis) + ", " +
                        std::to_string(mask.n_frames) + "]");
  }
  WeightMatrix out(w_pre.n_basis, w_pre.n_frames);
  for (size_t i = 0; i < out.data.size(); ++i) {
    double m = mask.data[i];
    if (!(m >= 0.0 && m <= 1.0)) {
      throw ContractError("apply_mask: mask entry outside [0, 1]");
    }
    out.data[i] = w_pre.data[i] * m;
  }
  return out;
}

// NNLS -----------------------------------------------------------------------

NnlsSolver::NnlsSolver(const BasisMatrix& b) : basis_(b) {
  auto m = as_matrix(b);
  Eigen::MatrixXd gram = m * m.transpose();
  lipschitz_ = largest_eigenvalue(gram);
  if (!(lipschitz_ > 0.0)) {
    throw ContractError("NnlsSolver: basis is identically zero");
  }
}

NnlsResult NnlsSolver::solve(std::span<const double> w, double tol,
                             int max_iter, bool keep_trace) const {
  const BasisMatrix& b = basis_;
  if (w.size() != static_cast<size_t>(b.window_len)) {
    throw ContractError("decompose_window: window length " +
                        std::to_string(w.size()) + ", basis expects " +
                        std::to_string(b.window_len));
  }
  if (!(tol > 0.0)) throw ContractError("decompose_window: tol must be > 0");
  if (max_iter < 1) {
    throw ContractError("decompose_window: max_iter must be >= 1");
  }

  const int rows = b.window_len;
  const int cols = b.n_basis;
  NnlsResult res;
  res.weights.assign(cols, 0.0);
  std::vector<double> resid(w.begin(), w.end());  // B v - w, sign flipped
  for (double& r : resid) r = -r;
  auto objective = [](const std::vector<double>& r) {
    double s = 0.0;
    for (double v : r) s += v * v;
    return 0.5 * s;
  };
  double f = objective(resid);
  if (f == 0.0) {
    res.converged = true;
    return res;
  }

  const double step = 1.0 / lipschitz_;
  std::vector<double> grad(cols), next(cols), next_resid(rows);
  for (int it = 0; it < max_iter; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int r = 0; r < rows; ++r) {
      const double* brow = b.data.data() + static_cast<size_t>(r) * cols;
      const double rv = resid[r];
      for (int j = 0; j < cols; ++j) grad[j] += brow[j] * rv;
    }
    for (int j = 0; j < cols; ++j) {
      next[j] = std::max(0.0, res.weights[j] - step * grad[j]);
    }
    for (int r = 0; r < rows; ++r) {
      const double* brow = b.data.data() + static_cast<size_t>(r) * cols;
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += brow[j] * next[j];
      next_resid[r] = s - w[r];
    }
    const double f_next = objective(next_resid);
    res.iterations = it + 1;
    if (f_next > f) {
      // Rounding floor reached; the previous iterate stands.
      res.converged = true;
      if (keep_trace) res.objective_trace.push_back(f);
      break;
    }
    res.weights.swap(next);
    resid.swap(next_resid);
    const double change = (f - f_next) / f;
    f = f_next;
    if (keep_trace) res.objective_trace.push_back(f);
    if (f == 0.0 || change < tol) {
      res.converged = true;
      break;
    }
  }
  res.residual_norm = std::sqrt(2.0 * f);
  return res;
}

NnlsResult decompose_window(const BasisMatrix& b, std::span<const double> w,
                            double tol, int max_iter) {
  return NnlsSolver(b).solve(w, tol, max_iter, /*keep_trace=*/true);
}

int frame_count_for(const BasisMatrix& b, size_t samples) {
  if (samples <= static_cast<size_t>(b.window_len)) return 1;
  size_t extra = samples - b.window_len;
  return static_cast<int>((extra + b.hop - 1) / b.hop) + 1;
}

DecomposeResult decompose_signal(const BasisMatrix& b,
                                 std::span<const double> y,
                                 const DecomposeOptions& opts) {
  if (y.empty()) throw ContractError("decompose_signal: empty signal");
  const int frames = frame_count_for(b, y.size());
  const NnlsSolver solver(b);
  DecomposeResult out{WeightMatrix(b.n_basis, frames), 0};
  std::vector<int> unconverged(frames, 0);
  parallel_for(frames, opts.threads, [&](int begin, int end) {
    std::vector<double> window(b.window_len);
    for (int f = begin; f < end; ++f) {
      const size_t start = static_cast<size_t>(f) * b.hop;
      for (int r = 0; r < b.window_len; ++r) {
        size_t i = start + r;
        window[r] = i < y.size() ? y[i] : 0.0;
      }
      NnlsResult res = solver.solve(window, opts.tol, opts.max_iter);
      for (int j = 0; j < b.n_basis; ++j) out.weights.at(j, f) = res.weights[j];
      unconverged[f] = res.converged ? 0 : 1;
    }
  });
  for (int u : unconverged) out.unconverged_frames += u;
  return out;
}

// Basis learning -------------------------------------------------------------

LearnResult learn_basis(const std::vector<Signal>& corpus,
                        const LearnOptions& opts) {
  if (corpus.empty()) throw ContractError("learn_basis: empty corpus");
  if (opts.window_len < 1 || opts.n_basis < 1 || opts.hop < 1 ||
      opts.iters < 0 || opts.weight_steps < 1) {
    throw ContractError("learn_basis: invalid options");
  }
  const BasisMatrix shape_probe(opts.window_len, opts.n_basis, opts.hop);

  // Columns of X are raw corpus windows.
  std::vector<std::pair<size_t, size_t>> frames;  // (clip, start)
  for (size_t c = 0; c < corpus.size(); ++c) {
    if (corpus[c].empty()) continue;
    int n = frame_count_for(shape_probe, corpus[c].size());
    for (int f = 0; f < n; ++f) {
      frames.emplace_back(c, static_cast<size_t>(f) * opts.hop);
    }
  }
  const int n_frames = static_cast<int>(frames.size());
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(opts.window_len, n_frames);
  for (int f = 0; f < n_frames; ++f) {
    const Signal& clip = corpus[frames[f].first];
    for (int r = 0; r < opts.window_len; ++r) {
      size_t i = frames[f].second + r;
      if (i < clip.size()) x(r, f) = clip[i];
    }
  }
  if (n_frames == 0 || x.squaredNorm() == 0.0) {
    throw ContractError("learn_basis: corpus is silent");
  }

  BasisMatrix init =
      random_basis(opts.window_len, opts.n_basis, opts.hop, opts.seed);
  Eigen::MatrixXd b = as_matrix(init);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(opts.n_basis, n_frames);
  Eigen::MatrixXd resid = -x;  // B W - X
  double f = 0.5 * resid.squaredNorm();

  LearnResult out;
  out.objective_trace.push_back(f);
  for (int it = 0; it < opts.iters; ++it) {
    const double lw = largest_eigenvalue(b * b.transpose());
    for (int s = 0; s < opts.weight_steps && lw > 0.0; ++s) {
      Eigen::MatrixXd w_next =
          (w - (b.transpose() * resid) / lw).cwiseMax(0.0);
      Eigen::MatrixXd r_next = b * w_next - x;
      double f_next = 0.5 * r_next.squaredNorm();
      if (f_next > f) break;
      w.swap(w_next);
      resid.swap(r_next);
      f = f_next;
    }
    const double lb = largest_eigenvalue(w * w.transpose());
    if (lb > 0.0) {
      Eigen::MatrixXd b_next = b - (resid * w.transpose()) / lb;
      Eigen::MatrixXd r_next = b_next * w - x;
      double f_next = 0.5 * r_next.squaredNorm();
      if (f_next <= f) {
        b.swap(b_next);
        resid.swap(r_next);
        f = f_next;
      }
    }
    out.objective_trace.push_back(f);
  }

  // Unit-norm columns; the matching rescale of W leaves the fit unchanged.
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < opts.n_basis; ++c) {
    double norm = b.col(c).norm();
    if (norm > 1e-12) {
      b.col(c) /= norm;
    } else {
      // Unused atom (its weights are all zero): any direction fits equally.
      for (int r = 0; r < opts.window_len; ++r) b(r, c) = normal(rng);
      b.col(c).normalize();
    }
  }
  out.basis = BasisMatrix(opts.window_len, opts.n_basis, opts.hop);
  for (int r = 0; r < opts.window_len; ++r) {
    for (int c = 0; c < opts.n_basis; ++c) out.basis.at(r, c) = b(r, c);
  }
  return out;
}

// Metrics --------------------------------------------------------------------

double si_snr(std::span<const double> estimate,
              std::span<const double> target) {
  if (estimate.size() != target.size()) {
    throw ContractError("si_snr: estimate has " +
                        std::to_string(estimate.size()) +
                        " samples, target has " +
                        std::to_string(target.size()));
  }
  if (target.empty()) throw ContractError("si_snr: empty signals");
  const double n = static_cast<double>(target.size());
  double mean_e = 0.0, mean_t = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    mean_e += estimate[i];
    mean_t += target[i];
  }
  mean_e /= n;
  mean_t /= n;
  double dot = 0.0, tt = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    double t = target[i] - mean_t;
    dot += (estimate[i] - mean_e) * t;
    tt += t * t;
  }
  if (tt == 0.0) throw ContractError("si_snr: target is zero after mean removal");
  const double scale = dot / tt;
  double signal = 0.0, noise = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    double s = scale * (target[i] - mean_t);
    double e = (estimate[i] - mean_e) - s;
    signal += s * s;
    noise += e * e;
  }
  if (signal == 0.0) return -kSiSnrCap;
  if (noise == 0.0) return kSiSnrCap;
  return std::clamp(10.0 * std::log10(signal / noise), -kSiSnrCap, kSiSnrCap);
}

}  // namespace bmg
