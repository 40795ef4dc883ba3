// WAV (PCM16 mono) and tensor archive files.
//
// Tensor archive layout, all integers little-endian:
//   "BMG1" | u32 entry count | per entry: u32 name length, name bytes,
//   u8 dtype (0 = float32), u8 ndim, u32 dims[ndim], float32 payload.

#ifndef BMG_IO_H_
#define BMG_IO_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmg/basis.h"
#include "bmg/spectral.h"
#include "bmg/vocoder.h"

namespace bmg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WavAudio {
  Signal samples;
  int sample_rate = 22050;
};

WavAudio wav_read(const std::string& path);
// Samples are clamped to the PCM16 range after rounding half away from zero.
void wav_write(const std::string& path, const WavAudio& audio);

int16_t quantize_pcm16(double sample);

struct ArchiveEntry {
  std::string name;
  Tensor tensor;
};

std::vector<ArchiveEntry> archive_read(const std::string& path);
void archive_write(const std::string& path,
                   const std::vector<ArchiveEntry>& entries);

// Typed views over archives.
void save_basis(const std::string& path, const BasisMatrix& b);
BasisMatrix load_basis(const std::string& path);

// The preset name is stored under "meta.preset" as a float32 vector of its
// character codes.
void save_model(const std::string& path, const ModelWeights& w);
ModelWeights load_model(const std::string& path);

void save_weight_matrix(const std::string& path, const WeightMatrix& w);
WeightMatrix load_weight_matrix(const std::string& path);

void save_mel(const std::string& path, const MelSpectrogram& mel);
MelSpectrogram load_mel(const std::string& path);

}  // namespace bmg

#endif  // BMG_IO_H_
