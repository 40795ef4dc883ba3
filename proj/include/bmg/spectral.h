// STFT magnitudes, mel features and the multi-resolution STFT settings.
//
// Framing convention (shared by every consumer): a signal of n samples
// yields ceil(n / hop) frames. Frame t covers the win_size samples
// centred on sample t * hop; positions before 0 or after n - 1 are
// filled by reflection about the end samples, and read as zero where
// reflection would itself leave the signal. The Hann-weighted segment is
// zero-padded (centred) to fft_size before the transform.

#ifndef BMG_SPECTRAL_H_
#define BMG_SPECTRAL_H_

#include <complex>
#include <span>
#include <vector>

namespace bmg {

using Signal = std::vector<double>;
using Complex = std::complex<double>;

// In-place DFT. Radix-2 for power-of-two sizes, direct O(n^2) otherwise.
// The inverse is unnormalized.
void fft_inplace(std::vector<Complex>& a, bool inverse = false);

// Periodic Hann window.
std::vector<double> hann_window(int length);

struct StftConfig {
  int fft_size = 1024;
  int hop_size = 256;
  int win_size = 1024;

  void validate() const;
  int bins() const { return fft_size / 2 + 1; }
  bool operator==(const StftConfig&) const = default;
};

int stft_frame_count(size_t samples, int hop_size);

// [bins, frames], row-major by bin.
struct MagnitudeSpectrogram {
  int bins = 0;
  int frames = 0;
  std::vector<double> data;

  double& at(int bin, int frame) {
    return data[static_cast<size_t>(bin) * frames + frame];
  }
  double at(int bin, int frame) const {
    return data[static_cast<size_t>(bin) * frames + frame];
  }
};

// Complex half spectrum, [frames, bins], kept for the magnitude adjoint.
struct StftFrames {
  StftConfig config;
  size_t samples = 0;
  int bins = 0;
  int frames = 0;
  std::vector<Complex> data;

  Complex at(int frame, int bin) const {
    return data[static_cast<size_t>(frame) * bins + bin];
  }
};

StftFrames stft(std::span<const double> y, const StftConfig& cfg);
MagnitudeSpectrogram magnitude(const StftFrames& frames);
MagnitudeSpectrogram stft_magnitude(std::span<const double> y,
                                    const StftConfig& cfg);

// Vector-Jacobian product of y -> |stft(y)|: given dL/d|S| returns dL/dy.
// Bins with zero magnitude contribute nothing.
Signal stft_magnitude_vjp(const StftFrames& frames,
                          const MagnitudeSpectrogram& grad_magnitude);

// Three (fft, hop, win) resolutions shared by the spectral loss and the
// spectrogram discriminator.
std::vector<StftConfig> multi_resolution_configs();

struct MelConfig {
  int sample_rate = 22050;
  int fft_size = 1024;
  int hop_size = 256;
  int win_size = 1024;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;

  StftConfig stft() const { return {fft_size, hop_size, win_size}; }
};

// 22.05 kHz, fft 1024, hop 256, win 1024, 80 bands over 0-8 kHz.
MelConfig default_mel_config();

// Slaney-scale triangular filters with area normalization, [n_mels, bins].
std::vector<double> mel_filterbank(const MelConfig& cfg);

// [n_mels, frames] natural-log mel energies.
struct MelSpectrogram {
  int n_mels = 0;
  int frames = 0;
  int sample_rate = 0;
  int hop_size = 0;
  std::vector<double> data;

  double at(int mel, int frame) const {
    return data[static_cast<size_t>(mel) * frames + frame];
  }
};

MelSpectrogram mel_spectrogram(std::span<const double> y, int sample_rate,
                               const MelConfig& cfg = default_mel_config());

}  // namespace bmg

#endif  // BMG_SPECTRAL_H_
