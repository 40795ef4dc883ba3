#include "bmg/dsp.h"

#include <algorithm>
#include <cmath>
#include <thread>

namespace bmg {

namespace {

std::string dim_error(const char* op, const char* what, size_t got,
                      size_t want) {
  return std::string(op) + ": " + what + " is " + std::to_string(got) +
         ", expected " + std::to_string(want);
}

}  // namespace

FeatureMap::FeatureMap(int channels, int time, float fill)
    : channels(channels), time(time) {
  if (channels < 1 || time < 0) {
    throw ContractError("FeatureMap: invalid shape [" +
                        std::to_string(channels) + ", " +
                        std::to_string(time) + "]");
  }
  data.assign(static_cast<size_t>(channels) * time, fill);
}

FeatureMap::FeatureMap(int channels, int time, std::vector<float> values)
    : channels(channels), time(time), data(std::move(values)) {
  if (channels < 1 || time < 0) {
    throw ContractError("FeatureMap: invalid shape [" +
                        std::to_string(channels) + ", " +
                        std::to_string(time) + "]");
  }
  if (data.size() != static_cast<size_t>(channels) * time) {
    throw ContractError(dim_error("FeatureMap", "data length", data.size(),
                                  static_cast<size_t>(channels) * time));
  }
}

bool FeatureMap::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](float v) { return std::isfinite(v); });
}

void parallel_for(int n, int threads,
                  const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  int workers = std::clamp(threads, 1, n);
  if (workers == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  int chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    int begin = w * chunk;
    int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(fn, begin, end);
  }
  fn(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

// ConvSpec -------------------------------------------------------------------

void ConvSpec::validate() const {
  auto fail = [](const std::string& msg) {
    throw ContractError("ConvSpec: " + msg);
  };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (out_channels < 1) fail("out_channels must be >= 1");
  if (kernel_size < 1) fail("kernel_size must be >= 1");
  if (stride < 1) fail("stride must be >= 1");
  if (dilation < 1) fail("dilation must be >= 1");
  if (padding < 0) fail("padding must be >= 0");
  if (groups < 1 || in_channels % groups != 0 || out_channels % groups != 0) {
    fail("groups " + std::to_string(groups) +
         " must divide in_channels and out_channels");
  }
}

std::vector<int> ConvSpec::weight_shape() const {
  if (transposed) return {in_channels, out_channels / groups, kernel_size};
  return {out_channels, in_channels / groups, kernel_size};
}

size_t ConvSpec::weight_count() const {
  auto s = weight_shape();
  return static_cast<size_t>(s[0]) * s[1] * s[2];
}

size_t ConvSpec::param_count() const {
  return weight_count() + (bias ? out_channels : 0);
}

int ConvSpec::output_length(int input_length) const {
  if (transposed) {
    return (input_length - 1) * stride - 2 * padding +
           dilation * (kernel_size - 1) + 1;
  }
  int span = input_length + 2 * padding - dilation * (kernel_size - 1) - 1;
  if (span < 0) return 0;
  return span / stride + 1;
}

uint64_t ConvSpec::flops(int input_length) const {
  uint64_t out_len = std::max(0, output_length(input_length));
  uint64_t macs;
  if (transposed) {
    macs = static_cast<uint64_t>(input_length) * in_channels *
           (out_channels / groups) * kernel_size;
  } else {
    macs = out_len * out_channels * (in_channels / groups) * kernel_size;
  }
  return 2 * macs + (bias ? out_len * out_channels : 0);
}

// Convolutions ---------------------------------------------------------------

namespace {

void check_conv_args(const char* op, const FeatureMap& x, const ConvSpec& spec,
                     std::span<const float> weights,
                     std::span<const float> bias) {
  spec.validate();
  if (x.channels != spec.in_channels) {
    throw ContractError(dim_error(op, "input channels", x.channels,
                                  spec.in_channels));
  }
  if (weights.size() != spec.weight_count()) {
    throw ContractError(
        dim_error(op, "weight count", weights.size(), spec.weight_count()));
  }
  size_t want_bias = spec.bias ? spec.out_channels : 0;
  if (bias.size() != want_bias) {
    throw ContractError(dim_error(op, "bias length", bias.size(), want_bias));
  }
}

}  // namespace

FeatureMap conv1d(const FeatureMap& x, const ConvSpec& spec,
                  std::span<const float> weights, std::span<const float> bias,
                  const ExecContext& ctx) {
  if (spec.transposed) {
    throw ContractError("conv1d: spec is marked transposed");
  }
  check_conv_args("conv1d", x, spec, weights, bias);
  const int out_len = spec.output_length(x.time);
  if (out_len < 1) {
    throw ContractError("conv1d: input time " + std::to_string(x.time) +
                        " too short for receptive field " +
                        std::to_string(spec.dilation * (spec.kernel_size - 1) +
                                       1));
  }

  // Explicit zero padding; padded taps are executed like any other tap.
  const int pad = spec.padding;
  const int padded_len = x.time + 2 * pad;
  std::vector<float> padded;
  const float* src = x.data.data();
  if (pad > 0) {
    padded.assign(static_cast<size_t>(x.channels) * padded_len, 0.0f);
    for (int c = 0; c < x.channels; ++c) {
      std::copy(x.row(c).begin(), x.row(c).end(),
                padded.begin() + static_cast<size_t>(c) * padded_len + pad);
    }
    src = padded.data();
  }

  const int in_per_group = spec.in_channels / spec.groups;
  const int out_per_group = spec.out_channels / spec.groups;
  const int k = spec.kernel_size;
  FeatureMap out(spec.out_channels, out_len);

  parallel_for(spec.out_channels, ctx.threads, [&](int begin, int end) {
    std::vector<double> acc(out_len);
    uint64_t executed = 0;
    for (int o = begin; o < end; ++o) {
      double b = spec.bias ? bias[o] : 0.0;
      std::fill(acc.begin(), acc.end(), b);
      const int group = o / out_per_group;
      for (int il = 0; il < in_per_group; ++il) {
        const int ic = group * in_per_group + il;
        const float* xrow = src + static_cast<size_t>(ic) * padded_len;
        const float* wrow =
            weights.data() + (static_cast<size_t>(o) * in_per_group + il) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double w = wrow[kk];
          const float* xs = xrow + kk * spec.dilation;
          if (spec.stride == 1) {
            for (int t = 0; t < out_len; ++t) acc[t] += w * xs[t];
          } else {
            for (int t = 0; t < out_len; ++t) {
              acc[t] += w * xs[static_cast<size_t>(t) * spec.stride];
            }
          }
          executed += out_len;
        }
      }
      float* dst = out.row(o).data();
      for (int t = 0; t < out_len; ++t) dst[t] = static_cast<float>(acc[t]);
    }
    if (ctx.tally) {
      uint64_t bias_adds =
          spec.bias ? static_cast<uint64_t>(end - begin) * out_len : 0;
      ctx.tally->add(2 * executed + bias_adds);
    }
  });
  return out;
}

FeatureMap conv_transpose1d(const FeatureMap& x, const ConvSpec& spec,
                            std::span<const float> weights,
                            std::span<const float> bias,
                            const ExecContext& ctx) {
  if (!spec.transposed) {
    throw ContractError("conv_transpose1d: spec is not marked transposed");
  }
  check_conv_args("conv_transpose1d", x, spec, weights, bias);
  const int out_len = spec.output_length(x.time);
  if (x.time < 1 || out_len < 1) {
    throw ContractError("conv_transpose1d: output time " +
                        std::to_string(out_len) + " for input time " +
                        std::to_string(x.time) + " is empty");
  }
  const int full_len = out_len + 2 * spec.padding;
  const int in_per_group = spec.in_channels / spec.groups;
  const int out_per_group = spec.out_channels / spec.groups;
  const int k = spec.kernel_size;
  const int stride = spec.stride;
  const int time = x.time;
  FeatureMap out(spec.out_channels, out_len);

  parallel_for(spec.out_channels, ctx.threads, [&](int begin, int end) {
    std::vector<double> acc(full_len);
    uint64_t executed = 0;
    for (int o = begin; o < end; ++o) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const int group = o / out_per_group;
      const int ol = o % out_per_group;
      for (int il = 0; il < in_per_group; ++il) {
        const int ic = group * in_per_group + il;
        const float* xrow = x.row(ic).data();
        const float* wrow =
            weights.data() +
            (static_cast<size_t>(ic) * out_per_group + ol) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double w = wrow[kk];
          double* dst = acc.data() + kk * spec.dilation;
          for (int t = 0; t < time; ++t) {
            dst[static_cast<size_t>(t) * stride] += w * xrow[t];
          }
          executed += time;
        }
      }
      double b = spec.bias ? bias[o] : 0.0;
      float* dst = out.row(o).data();
      for (int t = 0; t < out_len; ++t) {
        dst[t] = static_cast<float>(acc[t + spec.padding] + b);
      }
    }
    if (ctx.tally) {
      uint64_t bias_adds =
          spec.bias ? static_cast<uint64_t>(end - begin) * out_len : 0;
      ctx.tally->add(2 * executed + bias_adds);
    }
  });
  return out;
}

// Pointwise ------------------------------------------------------------------

FeatureMap leaky_relu(FeatureMap x, float slope) {
  for (float& v : x.data) v = v >= 0.0f ? v : slope * v;
  return x;
}

FeatureMap relu(FeatureMap x) {
  for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
  return x;
}

FeatureMap tanh_map(FeatureMap x) {
  for (float& v : x.data) v = std::tanh(v);
  return x;
}

FeatureMap affine_norm(FeatureMap x, std::span<const float> scale,
                       std::span<const float> shift) {
  if (scale.size() != static_cast<size_t>(x.channels)) {
    throw ContractError(
        dim_error("affine_norm", "scale length", scale.size(), x.channels));
  }
  if (shift.size() != static_cast<size_t>(x.channels)) {
    throw ContractError(
        dim_error("affine_norm", "shift length", shift.size(), x.channels));
  }
  for (int c = 0; c < x.channels; ++c) {
    const double s = scale[c];
    const double b = shift[c];
    for (float& v : x.row(c)) v = static_cast<float>(v * s + b);
  }
  return x;
}

FeatureMap avg_pool1d(const FeatureMap& x, int kernel, int stride,
                      int padding) {
  if (kernel < 1 || stride < 1 || padding < 0) {
    throw ContractError("avg_pool1d: invalid kernel/stride/padding");
  }
  const int span = x.time + 2 * padding - kernel;
  const int out_len = span < 0 ? 0 : span / stride + 1;
  if (out_len < 1) {
    throw ContractError("avg_pool1d: input time " + std::to_string(x.time) +
                        " too short");
  }
  FeatureMap out(x.channels, out_len);
  for (int c = 0; c < x.channels; ++c) {
    auto in = x.row(c);
    auto dst = out.row(c);
    for (int t = 0; t < out_len; ++t) {
      int start = t * stride - padding;
      int lo = std::max(start, 0);
      int hi = std::min(start + kernel, x.time);
      double sum = 0.0;
      for (int i = lo; i < hi; ++i) sum += in[i];
      dst[t] = hi > lo ? static_cast<float>(sum / (hi - lo)) : 0.0f;
    }
  }
  return out;
}

FeatureMap add(FeatureMap a, const FeatureMap& b) {
  if (a.channels != b.channels || a.time != b.time) {
    throw ContractError("add: shape [" + std::to_string(a.channels) + ", " +
                        std::to_string(a.time) + "] vs [" +
                        std::to_string(b.channels) + ", " +
                        std::to_string(b.time) + "]");
  }
  for (size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = static_cast<float>(static_cast<double>(a.data[i]) + b.data[i]);
  }
  return a;
}

FeatureMap residual_dilated_block(const FeatureMap& x,
                                  const ResidualBlockParams& p,
                                  const ExecContext& ctx) {
  if (p.dilated.in_channels != x.channels ||
      p.pointwise.out_channels != x.channels) {
    throw ContractError("residual_dilated_block: block maps " +
                        std::to_string(p.dilated.in_channels) + " -> " +
                        std::to_string(p.pointwise.out_channels) +
                        " channels but input has " +
                        std::to_string(x.channels));
  }
  FeatureMap h = leaky_relu(x, p.slope);
  h = conv1d(h, p.dilated, p.dilated_weights, p.dilated_bias, ctx);
  h = leaky_relu(std::move(h), p.slope);
  h = conv1d(h, p.pointwise, p.pointwise_weights, p.pointwise_bias, ctx);
  return add(std::move(h), x);
}

}  // namespace bmg
