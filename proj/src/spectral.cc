#include "bmg/spectral.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "bmg/dsp.h"

namespace bmg {

namespace {

bool is_power_of_two(size_t n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<Complex>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    const size_t half = len / 2;
    std::vector<Complex> twiddle(half);
    for (size_t k = 0; k < half; ++k) {
      twiddle[k] = Complex(std::cos(ang * k), std::sin(ang * k));
    }
    for (size_t i = 0; i < n; i += len) {
      for (size_t k = 0; k < half; ++k) {
        Complex u = a[i + k];
        Complex v = a[i + k + half] * twiddle[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

void dft_direct(std::vector<Complex>& a, bool inverse) {
  const size_t n = a.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> out(n);
  for (size_t k = 0; k < n; ++k) {
    Complex sum = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double ang = sign * 2.0 * std::numbers::pi *
                   static_cast<double>((j * k) % n) / static_cast<double>(n);
      sum += a[j] * Complex(std::cos(ang), std::sin(ang));
    }
    out[k] = sum;
  }
  a = std::move(out);
}

// Maps a framing position onto the signal, or -1 for an implicit zero.
long source_index(long i, long n) {
  if (i >= 0 && i < n) return i;
  long r = i < 0 ? -i : 2 * (n - 1) - i;
  return (r >= 0 && r < n) ? r : -1;
}

double hz_to_mel(double hz) {
  constexpr double kFsp = 200.0 / 3.0;
  constexpr double kMinLogHz = 1000.0;
  const double min_log_mel = kMinLogHz / kFsp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < kMinLogHz) return hz / kFsp;
  return min_log_mel + std::log(hz / kMinLogHz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double kFsp = 200.0 / 3.0;
  constexpr double kMinLogHz = 1000.0;
  const double min_log_mel = kMinLogHz / kFsp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * kFsp;
  return kMinLogHz * std::exp(logstep * (mel - min_log_mel));
}

}  // namespace

void fft_inplace(std::vector<Complex>& a, bool inverse) {
  if (a.empty()) return;
  if (is_power_of_two(a.size())) {
    fft_radix2(a, inverse);
  } else {
    dft_direct(a, inverse);
  }
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(length);
  for (int i = 0; i < length; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  }
  return w;
}

void StftConfig::validate() const {
  if (fft_size < 1 || hop_size < 1 || win_size < 1) {
    throw ContractError("StftConfig: sizes must be positive");
  }
  if (win_size > fft_size) {
    throw ContractError("StftConfig: win_size " + std::to_string(win_size) +
                        " exceeds fft_size " + std::to_string(fft_size));
  }
  if (hop_size > win_size) {
    throw ContractError("StftConfig: hop_size " + std::to_string(hop_size) +
                        " exceeds win_size " + std::to_string(win_size));
  }
}

int stft_frame_count(size_t samples, int hop_size) {
  return static_cast<int>((samples + hop_size - 1) / hop_size);
}

StftFrames stft(std::span<const double> y, const StftConfig& cfg) {
  cfg.validate();
  if (y.empty()) throw ContractError("stft: empty input signal");
  StftFrames out;
  out.config = cfg;
  out.samples = y.size();
  out.bins = cfg.bins();
  out.frames = stft_frame_count(y.size(), cfg.hop_size);
  out.data.resize(static_cast<size_t>(out.frames) * out.bins);

  const auto window = hann_window(cfg.win_size);
  const long n = static_cast<long>(y.size());
  const int offset = (cfg.fft_size - cfg.win_size) / 2;
  std::vector<Complex> buf(cfg.fft_size);
  for (int t = 0; t < out.frames; ++t) {
    std::fill(buf.begin(), buf.end(), Complex(0.0));
    const long start = static_cast<long>(t) * cfg.hop_size - cfg.win_size / 2;
    for (int j = 0; j < cfg.win_size; ++j) {
      long src = source_index(start + j, n);
      if (src >= 0) buf[offset + j] = window[j] * y[src];
    }
    fft_inplace(buf);
    std::copy(buf.begin(), buf.begin() + out.bins,
              out.data.begin() + static_cast<size_t>(t) * out.bins);
  }
  return out;
}

MagnitudeSpectrogram magnitude(const StftFrames& frames) {
  MagnitudeSpectrogram mag;
  mag.bins = frames.bins;
  mag.frames = frames.frames;
  mag.data.resize(static_cast<size_t>(mag.bins) * mag.frames);
  for (int t = 0; t < frames.frames; ++t) {
    for (int k = 0; k < frames.bins; ++k) mag.at(k, t) = std::abs(frames.at(t, k));
  }
  return mag;
}

MagnitudeSpectrogram stft_magnitude(std::span<const double> y,
                                    const StftConfig& cfg) {
  return magnitude(stft(y, cfg));
}

Signal stft_magnitude_vjp(const StftFrames& frames,
                          const MagnitudeSpectrogram& grad) {
  if (grad.bins != frames.bins || grad.frames != frames.frames) {
    throw ContractError("stft_magnitude_vjp: gradient shape mismatch");
  }
  const StftConfig& cfg = frames.config;
  const auto window = hann_window(cfg.win_size);
  const long n = static_cast<long>(frames.samples);
  const int offset = (cfg.fft_size - cfg.win_size) / 2;
  Signal dy(frames.samples, 0.0);
  std::vector<Complex> buf(cfg.fft_size);
  for (int t = 0; t < frames.frames; ++t) {
    std::fill(buf.begin(), buf.end(), Complex(0.0));
    bool any = false;
    for (int k = 0; k < frames.bins; ++k) {
      Complex x = frames.at(t, k);
      double m = std::abs(x);
      double g = grad.at(k, t);
      if (m > 0.0 && g != 0.0) {
        buf[k] = g * x / m;
        any = true;
      }
    }
    if (!any) continue;
    // d|X_k|/dbuf_j = Re(conj(X_k)/|X_k| e^{-2 pi i jk/N}), summed over the
    // half spectrum: the real part of an unnormalized inverse transform.
    fft_inplace(buf, /*inverse=*/true);
    const long start = static_cast<long>(t) * cfg.hop_size - cfg.win_size / 2;
    for (int j = 0; j < cfg.win_size; ++j) {
      long src = source_index(start + j, n);
      if (src >= 0) dy[src] += window[j] * buf[offset + j].real();
    }
  }
  return dy;
}

std::vector<StftConfig> multi_resolution_configs() {
  return {{1024, 120, 600}, {2048, 240, 1200}, {512, 50, 240}};
}

MelConfig default_mel_config() { return MelConfig{}; }

std::vector<double> mel_filterbank(const MelConfig& cfg) {
  if (cfg.n_mels < 1 || cfg.fmax <= cfg.fmin || cfg.fmin < 0.0 ||
      cfg.fmax > cfg.sample_rate / 2.0) {
    throw ContractError("mel_filterbank: invalid band layout");
  }
  const int bins = cfg.fft_size / 2 + 1;
  std::vector<double> fft_freqs(bins);
  for (int k = 0; k < bins; ++k) {
    fft_freqs[k] = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
  }
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
  }
  std::vector<double> fb(static_cast<size_t>(cfg.n_mels) * bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double enorm = 2.0 / (hi - lo);
    for (int k = 0; k < bins; ++k) {
      double lower = (fft_freqs[k] - lo) / (mid - lo);
      double upper = (hi - fft_freqs[k]) / (hi - mid);
      double w = std::max(0.0, std::min(lower, upper));
      fb[static_cast<size_t>(m) * bins + k] = w * enorm;
    }
  }
  return fb;
}

MelSpectrogram mel_spectrogram(std::span<const double> y, int sample_rate,
                               const MelConfig& cfg) {
  if (sample_rate != cfg.sample_rate) {
    throw ContractError("mel_spectrogram: sample rate " +
                        std::to_string(sample_rate) + " does not match " +
                        std::to_string(cfg.sample_rate));
  }
  const auto mag = stft_magnitude(y, cfg.stft());
  const auto fb = mel_filterbank(cfg);
  MelSpectrogram mel;
  mel.n_mels = cfg.n_mels;
  mel.frames = mag.frames;
  mel.sample_rate = cfg.sample_rate;
  mel.hop_size = cfg.hop_size;
  mel.data.resize(static_cast<size_t>(mel.n_mels) * mel.frames);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double* frow = fb.data() + static_cast<size_t>(m) * mag.bins;
    for (int t = 0; t < mag.frames; ++t) {
      double e = 0.0;
      for (int k = 0; k < mag.bins; ++k) e += frow[k] * mag.at(k, t);
      mel.data[static_cast<size_t>(m) * mel.frames + t] =
          std::log(std::max(e, cfg.log_floor));
    }
  }
  return mel;
}

}  // namespace bmg
