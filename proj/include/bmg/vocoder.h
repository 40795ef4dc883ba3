// Declarative generator and discriminator graphs, their forward passes and
// the analytic complexity model.
//
// Generator presets (all take 80-band mel at hop 256, 22.05 kHz):
//
//   basis-melgan-large   conv 80->1024 k7, 2 residual blocks at mel rate
//                        (k3, dilations 1,3), up x4 -> 384, 3 residual
//                        blocks (dilations 1,3,9), up x4 -> 256, 3 residual
//                        blocks, conv 256->256 k7, transform (hidden 256),
//                        relu, basis synthesis (32 x 256, hop 16).
//   basis-melgan-light   conv 80->512 k7, up x4 -> 256, 3 blocks, up x4 ->
//                        128, 3 blocks, conv 128->256 k7, transform (hidden
//                        512), relu, basis synthesis.
//   melgan-reference     conv 80->512 k7, four upsampling stages [8,8,2,2]
//                        (kernel 2r) halving channels, 3 residual blocks per
//                        stage, conv 32->1 k7, tanh.
//   hifigan-v1-reference conv 80->512 k7, upsampling [8,8,2,2] with kernels
//                        [16,16,4,4], multi-receptive-field fusion over
//                        kernels {3,7,11} x dilations {1,3,5}, conv 32->1 k7,
//                        tanh.
//
// Residual blocks compute x + conv2(lrelu(conv1(lrelu(x)))); MelGAN-style
// blocks use a 1x1 conv2, HiFi-GAN blocks a k-tap conv2 with dilation 1.
// The transform layer is [linear -> leaky relu -> affine norm] x 2 ->
// linear, applied per frame.

#ifndef BMG_VOCODER_H_
#define BMG_VOCODER_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bmg/basis.h"
#include "bmg/dsp.h"
#include "bmg/spectral.h"

namespace bmg {

struct Tensor {
  std::vector<int> dims;
  std::vector<float> data;

  size_t element_count() const;
};

struct ModelWeights {
  std::string preset;
  std::map<std::string, Tensor> tensors;

  // Throws ContractError naming the missing entry.
  const Tensor& get(const std::string& name) const;
  size_t parameter_count() const;
};

struct WeightSlot {
  std::string name;
  std::vector<int> dims;
  double init_std = 0.0;
  double init_mean = 0.0;

  size_t element_count() const;
};

// Graph layers ---------------------------------------------------------------

struct ConvLayer {
  std::string name;
  ConvSpec spec;
};

enum class Activation { kLeakyRelu, kRelu, kTanh };

struct ActivationLayer {
  Activation kind = Activation::kLeakyRelu;
  float slope = 0.2f;
};

// Sequential residual blocks at one width (MelGAN residual stack).
struct ResidualStackLayer {
  std::string name;
  int channels = 0;
  int kernel_size = 3;
  std::vector<int> dilations;
  int pointwise_kernel = 1;
  float slope = 0.2f;
};

// Multi-receptive-field fusion: mean over branches, each branch a chain of
// residual blocks with its own kernel size.
struct MrfLayer {
  std::string name;
  int channels = 0;
  std::vector<int> kernel_sizes;
  std::vector<std::vector<int>> dilations;
  float slope = 0.1f;
};

struct TransformLayer {
  std::string name;
  int in_channels = 0;
  int hidden = 0;
  int out_channels = 0;
  float slope = 0.2f;
};

struct BasisSynthesisLayer {
  int window_len = 32;
  int n_basis = 256;
  int hop = 16;
};

using GraphLayer = std::variant<ConvLayer, ActivationLayer, ResidualStackLayer,
                                MrfLayer, TransformLayer, BasisSynthesisLayer>;

enum class Preset {
  kBasisMelganLarge,
  kBasisMelganLight,
  kMelganReference,
  kHifiganV1Reference,
};

std::string_view preset_name(Preset p);
Preset parse_preset(std::string_view name);
std::vector<Preset> all_presets();

struct GeneratorGraph {
  std::string preset;
  int mel_channels = 80;
  int mel_hop = 256;
  int sample_rate = 22050;
  std::vector<int> upsampling_factors;
  std::vector<GraphLayer> layers;

  bool uses_basis() const;
  const BasisSynthesisLayer* basis_layer() const;
  int transposed_stage_count() const;
  // Output frames per mel frame before any basis synthesis.
  int frame_ratio() const;
  void validate() const;
};

GeneratorGraph build_preset(Preset p);
GeneratorGraph build_preset(std::string_view name);

// Human-readable dump of every layer with its hyperparameters.
std::string describe(const GeneratorGraph& g);

std::vector<WeightSlot> weight_slots(const GeneratorGraph& g);

// Every slot must resolve to exactly one tensor of matching shape, and every
// tensor to a slot.
void check_weights(const std::vector<WeightSlot>& slots,
                   const ModelWeights& w);

ModelWeights init_random_weights(const GeneratorGraph& g, uint64_t seed);
size_t count_params(const GeneratorGraph& g, const ModelWeights& w);

struct GeneratorOutput {
  // Post-relu weights; empty (0 frames) for conventional presets.
  WeightMatrix weights;
  // mel_frames * mel_hop samples. Basis presets drop the overlap tail of
  // the last window.
  Signal waveform;
};

// mel: [mel_channels, frames]. Basis presets require a basis matching the
// synthesis layer; the check happens before any compute.
GeneratorOutput forward_generator(const GeneratorGraph& g,
                                  const ModelWeights& w, const FeatureMap& mel,
                                  const BasisMatrix* basis,
                                  const ExecContext& ctx = {});
GeneratorOutput forward_generator(const GeneratorGraph& g,
                                  const ModelWeights& w,
                                  const MelSpectrogram& mel,
                                  const BasisMatrix* basis,
                                  const ExecContext& ctx = {});

FeatureMap to_feature_map(const MelSpectrogram& mel);

// Discriminators -------------------------------------------------------------

// MelGAN discriminator block widths: a k15 input conv with base_channels,
// downsample_layers grouped k41 stride-4 convs growing 4x up to
// max_channels, a k5 conv and a k3 conv to one score channel.
struct DiscriminatorWidth {
  int base_channels = 16;
  int max_channels = 1024;
  int downsample_layers = 4;
};

enum class DiscriminatorKind { kMultiScale, kMultiResolutionStft };

struct SubDiscriminator {
  std::string name;
  std::vector<ConvSpec> convs;
};

struct DiscriminatorGraph {
  std::string name;
  DiscriminatorKind kind = DiscriminatorKind::kMultiScale;
  std::vector<SubDiscriminator> subs;
  // Spectrogram discriminator only: one resolution per sub-discriminator.
  std::vector<StftConfig> resolutions;
  float slope = 0.2f;
};

// Three sub-discriminators on the waveform, its x2 and its x4 average-pooled
// versions (pool kernel 4, stride 2, padding 1).
DiscriminatorGraph build_msd(const DiscriminatorWidth& width = {});
// One sub-discriminator per multi-resolution STFT config, fed the magnitude
// spectrogram with frequency bins as channels.
DiscriminatorGraph build_mfd(const DiscriminatorWidth& width = {});

std::vector<WeightSlot> weight_slots(const DiscriminatorGraph& g);
ModelWeights init_random_weights(const DiscriminatorGraph& g, uint64_t seed);

// Raw (pre-sigmoid) score maps, one per sub-discriminator.
std::vector<FeatureMap> forward_msd(const DiscriminatorGraph& g,
                                    const ModelWeights& w,
                                    std::span<const double> x,
                                    const ExecContext& ctx = {});
std::vector<FeatureMap> forward_mfd(const DiscriminatorGraph& g,
                                    const ModelWeights& w,
                                    std::span<const double> x,
                                    const ExecContext& ctx = {});
std::vector<FeatureMap> forward_discriminator(const DiscriminatorGraph& g,
                                              const ModelWeights& w,
                                              std::span<const double> x,
                                              const ExecContext& ctx = {});

// Complexity -----------------------------------------------------------------

struct LayerComplexity {
  std::string name;
  std::string kind;
  uint64_t flops = 0;
  uint64_t params = 0;
};

// FLOPs count 2 per multiply-add plus 1 per bias add, for convolutions,
// linear layers and basis synthesis. Activations, normalization, pooling,
// residual adds, branch averaging and STFT front ends are excluded.
struct ComplexityReport {
  std::string graph;
  std::vector<LayerComplexity> layers;
  uint64_t total_flops = 0;
  uint64_t total_params = 0;
  // Audio duration the FLOP counts refer to.
  double audio_seconds = 0.0;

  double gflops_per_second() const;
  double params_millions() const;
};

// Counts for mel_frames frames of input; gflops_per_second() normalizes to
// one second of audio.
ComplexityReport analyze(const GeneratorGraph& g, int mel_frames = 1);
ComplexityReport analyze(const DiscriminatorGraph& g, size_t samples = 22050,
                         int sample_rate = 22050);

}  // namespace bmg

#endif  // BMG_VOCODER_H_
