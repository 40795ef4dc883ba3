#include "bmg/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

namespace bmg {

double RtfResult::spread() const {
  if (rep_rtf.empty()) return 0.0;
  auto [lo, hi] = std::minmax_element(rep_rtf.begin(), rep_rtf.end());
  return *lo > 0.0 ? *hi / *lo : 0.0;
}

std::string platform_descriptor() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto begin = line.find_first_not_of(" \t", colon + 1);
        if (begin != std::string::npos) return line.substr(begin);
      }
    }
  }
  return "unknown";
}

FeatureMap random_log_mel(const GeneratorGraph& g, double seconds,
                          uint64_t seed) {
  if (!(seconds > 0.0)) throw ContractError("random_log_mel: seconds must be > 0");
  const int frames = std::max(
      1, static_cast<int>(std::ceil(seconds * g.sample_rate / g.mel_hop)));
  FeatureMap mel(g.mel_channels, frames);
  std::mt19937_64 rng(seed);
  // Typical range of natural-log mel magnitudes.
  std::uniform_real_distribution<float> dist(-11.5f, 2.0f);
  for (float& v : mel.data) v = dist(rng);
  return mel;
}

RtfResult measure_rtf(const GeneratorGraph& g, const ModelWeights& w,
                      const BasisMatrix* basis, const FeatureMap& mel,
                      const BenchOptions& opts) {
  if (opts.reps < 3) throw ContractError("measure_rtf: reps must be >= 3");
  if (opts.threads < 1) throw ContractError("measure_rtf: threads must be >= 1");
  if (opts.warmup < 0) throw ContractError("measure_rtf: warmup must be >= 0");
  ExecContext ctx;
  ctx.threads = opts.threads;

  RtfResult r;
  r.preset = g.preset;
  r.platform = platform_descriptor();
  r.threads = opts.threads;
  r.repetitions = opts.reps;
  r.warmup = opts.warmup;
  r.audio_seconds = static_cast<double>(mel.time) * g.mel_hop / g.sample_rate;

  for (int i = 0; i < opts.warmup; ++i) forward_generator(g, w, mel, basis, ctx);
  std::vector<double> walls;
  for (int i = 0; i < opts.reps; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    auto out = forward_generator(g, w, mel, basis, ctx);
    auto t1 = std::chrono::steady_clock::now();
    walls.push_back(std::chrono::duration<double>(t1 - t0).count());
    r.rep_rtf.push_back(walls.back() / r.audio_seconds);
  }
  std::vector<double> sorted = walls;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  r.wall_seconds =
      n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  r.rtf = r.wall_seconds / r.audio_seconds;
  return r;
}

RtfResult measure_rtf(const GeneratorGraph& g, const BenchOptions& opts) {
  const ModelWeights w = init_random_weights(g, opts.seed);
  BasisMatrix basis;
  if (const auto* bl = g.basis_layer()) {
    basis = random_basis(bl->window_len, bl->n_basis, bl->hop, opts.seed + 1);
  }
  const FeatureMap mel = random_log_mel(g, opts.seconds, opts.seed + 2);
  return measure_rtf(g, w, g.uses_basis() ? &basis : nullptr, mel, opts);
}

}  // namespace bmg
