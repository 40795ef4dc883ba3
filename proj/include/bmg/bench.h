// Real-time-factor measurement for generator presets.

#ifndef BMG_BENCH_H_
#define BMG_BENCH_H_

#include <cstdint>
#include <string>
#include <vector>

#include "bmg/dsp.h"
#include "bmg/vocoder.h"

namespace bmg {

struct BenchOptions {
  double seconds = 1.0;
  int threads = 1;
  int reps = 3;
  int warmup = 1;
  uint64_t seed = 0;
};

struct RtfResult {
  std::string preset;
  std::string platform;
  int threads = 1;
  int repetitions = 0;
  int warmup = 0;
  double audio_seconds = 0.0;
  // Median over repetitions.
  double wall_seconds = 0.0;
  double rtf = 0.0;
  std::vector<double> rep_rtf;

  // max / min over repetitions.
  double spread() const;
};

// CPU model string from /proc/cpuinfo, or "unknown".
std::string platform_descriptor();

// Random log-mel frames covering the requested duration.
FeatureMap random_log_mel(const GeneratorGraph& g, double seconds,
                          uint64_t seed);

// Times forward_generator on random weights and random log-mel input.
RtfResult measure_rtf(const GeneratorGraph& g, const BenchOptions& opts);
// Same, with caller-provided input (content-independence checks).
RtfResult measure_rtf(const GeneratorGraph& g, const ModelWeights& w,
                      const BasisMatrix* basis, const FeatureMap& mel,
                      const BenchOptions& opts);

}  // namespace bmg

#endif  // BMG_BENCH_H_
