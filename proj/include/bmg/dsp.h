// Deterministic 1-D convolution kernels, activations and folded
// normalization used by every generator and discriminator graph.
//
// Storage is single precision; every reduction accumulates in double.
// All kernels are pure: the only side effect is the optional FLOP tally
// carried by ExecContext.

#ifndef BMG_DSP_H_
#define BMG_DSP_H_

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bmg {

// Thrown when a caller breaks a shape or argument precondition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Activation map of shape [channels, time], row-major.
struct FeatureMap {
  int channels = 0;
  int time = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int channels, int time, float fill = 0.0f);
  FeatureMap(int channels, int time, std::vector<float> values);

  float& at(int c, int t) { return data[static_cast<size_t>(c) * time + t]; }
  float at(int c, int t) const {
    return data[static_cast<size_t>(c) * time + t];
  }
  std::span<float> row(int c) {
    return {data.data() + static_cast<size_t>(c) * time,
            static_cast<size_t>(time)};
  }
  std::span<const float> row(int c) const {
    return {data.data() + static_cast<size_t>(c) * time,
            static_cast<size_t>(time)};
  }
  bool all_finite() const;
};

// Counts floating point work actually executed by the kernels.
// One multiply-add is 2 FLOPs; a bias add is 1 FLOP.
struct OpTally {
  std::atomic<uint64_t> flops{0};
  void add(uint64_t n) { flops.fetch_add(n, std::memory_order_relaxed); }
  uint64_t value() const { return flops.load(); }
};

struct ExecContext {
  int threads = 1;
  OpTally* tally = nullptr;
};

// Splits [0, n) into contiguous chunks over ctx.threads workers. Each index
// is handled by exactly one worker, so per-index results do not depend on
// the thread count.
void parallel_for(int n, int threads, const std::function<void(int, int)>& fn);

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_size = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  int groups = 1;
  bool transposed = false;
  bool bias = true;

  void validate() const;
  // Weight tensor shape: [out, in/groups, k] for conv1d and
  // [in, out/groups, k] for conv_transpose1d.
  std::vector<int> weight_shape() const;
  size_t weight_count() const;
  size_t param_count() const;
  int output_length(int input_length) const;
  // Analytic FLOPs for one application to an input of the given length.
  uint64_t flops(int input_length) const;
};

FeatureMap conv1d(const FeatureMap& x, const ConvSpec& spec,
                  std::span<const float> weights, std::span<const float> bias,
                  const ExecContext& ctx = {});

// Adjoint of conv1d: with the same weight tensor, <conv1d(x), y> equals
// <x, conv_transpose1d(y)> for the channel-swapped spec.
FeatureMap conv_transpose1d(const FeatureMap& x, const ConvSpec& spec,
                            std::span<const float> weights,
                            std::span<const float> bias,
                            const ExecContext& ctx = {});

FeatureMap leaky_relu(FeatureMap x, float slope);
FeatureMap relu(FeatureMap x);
FeatureMap tanh_map(FeatureMap x);

// Batch normalization folded to inference form: x * scale[c] + shift[c].
FeatureMap affine_norm(FeatureMap x, std::span<const float> scale,
                       std::span<const float> shift);

// Average pooling that ignores padded positions in the divisor.
FeatureMap avg_pool1d(const FeatureMap& x, int kernel, int stride,
                      int padding);

FeatureMap add(FeatureMap a, const FeatureMap& b);

struct ResidualBlockParams {
  ConvSpec dilated;    // k taps, dilation d, padding d*(k-1)/2
  ConvSpec pointwise;  // second conv; 1x1 for MelGAN-style blocks
  std::span<const float> dilated_weights;
  std::span<const float> dilated_bias;
  std::span<const float> pointwise_weights;
  std::span<const float> pointwise_bias;
  float slope = 0.2f;
};

// x + conv2(lrelu(conv1(lrelu(x)))).
FeatureMap residual_dilated_block(const FeatureMap& x,
                                  const ResidualBlockParams& params,
                                  const ExecContext& ctx = {});

}  // namespace bmg

#endif  // BMG_DSP_H_
