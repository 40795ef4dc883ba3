#include "bmg/vocoder.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace bmg {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string shape_string(const std::vector<int>& dims) {
  std::string s = "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

ConvSpec plain_conv(int in, int out, int k, int dilation = 1) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_size = k;
  s.dilation = dilation;
  s.padding = dilation * (k - 1) / 2;
  return s;
}

ConvSpec upsample_conv(int in, int out, int k, int factor) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_size = k;
  s.stride = factor;
  s.padding = (k - factor) / 2;
  s.transposed = true;
  return s;
}

struct NamedConv {
  std::string name;
  ConvSpec spec;
};

// (conv1, conv2) pairs of a residual stack, in execution order.
std::vector<std::pair<NamedConv, NamedConv>> residual_convs(
    const ResidualStackLayer& l) {
  std::vector<std::pair<NamedConv, NamedConv>> out;
  for (size_t i = 0; i < l.dilations.size(); ++i) {
    std::string base = l.name + "." + std::to_string(i);
    out.push_back({{base + ".conv1", plain_conv(l.channels, l.channels,
                                                l.kernel_size, l.dilations[i])},
                   {base + ".conv2", plain_conv(l.channels, l.channels,
                                                l.pointwise_kernel)}});
  }
  return out;
}

// Per branch, the (conv1, conv2) pairs of that branch.
std::vector<std::vector<std::pair<NamedConv, NamedConv>>> mrf_convs(
    const MrfLayer& l) {
  std::vector<std::vector<std::pair<NamedConv, NamedConv>>> out;
  for (size_t b = 0; b < l.kernel_sizes.size(); ++b) {
    const int k = l.kernel_sizes[b];
    auto& branch = out.emplace_back();
    for (size_t i = 0; i < l.dilations[b].size(); ++i) {
      std::string base =
          l.name + "." + std::to_string(b) + "." + std::to_string(i);
      branch.push_back(
          {{base + ".conv1",
            plain_conv(l.channels, l.channels, k, l.dilations[b][i])},
           {base + ".conv2", plain_conv(l.channels, l.channels, k)}});
    }
  }
  return out;
}

struct TransformParts {
  NamedConv linear1, linear2, linear3;
  std::string norm1, norm2;
};

TransformParts transform_parts(const TransformLayer& l) {
  return {{l.name + ".linear1", plain_conv(l.in_channels, l.hidden, 1)},
          {l.name + ".linear2", plain_conv(l.hidden, l.hidden, 1)},
          {l.name + ".linear3", plain_conv(l.hidden, l.out_channels, 1)},
          l.name + ".norm1",
          l.name + ".norm2"};
}

void add_conv_slots(std::vector<WeightSlot>& slots, const std::string& name,
                    const ConvSpec& spec) {
  auto dims = spec.weight_shape();
  double fan_in = spec.transposed
                      ? static_cast<double>(dims[0]) * dims[2] / spec.stride
                      : static_cast<double>(dims[1]) * dims[2];
  slots.push_back({name + ".weight", dims, 0.5 / std::sqrt(fan_in), 0.0});
  if (spec.bias) slots.push_back({name + ".bias", {spec.out_channels}, 0.01, 0.0});
}

void add_norm_slots(std::vector<WeightSlot>& slots, const std::string& name,
                    int channels) {
  slots.push_back({name + ".scale", {channels}, 0.05, 1.0});
  slots.push_back({name + ".shift", {channels}, 0.05, 0.0});
}

FeatureMap run_conv(const FeatureMap& x, const std::string& name,
                    const ConvSpec& spec, const ModelWeights& w,
                    const ExecContext& ctx) {
  std::span<const float> weights = w.get(name + ".weight").data;
  std::span<const float> bias;
  if (spec.bias) bias = w.get(name + ".bias").data;
  return spec.transposed ? conv_transpose1d(x, spec, weights, bias, ctx)
                         : conv1d(x, spec, weights, bias, ctx);
}

FeatureMap run_block(const FeatureMap& x, const NamedConv& c1,
                     const NamedConv& c2, float slope, const ModelWeights& w,
                     const ExecContext& ctx) {
  ResidualBlockParams p;
  p.dilated = c1.spec;
  p.pointwise = c2.spec;
  p.dilated_weights = w.get(c1.name + ".weight").data;
  p.dilated_bias = w.get(c1.name + ".bias").data;
  p.pointwise_weights = w.get(c2.name + ".weight").data;
  p.pointwise_bias = w.get(c2.name + ".bias").data;
  p.slope = slope;
  return residual_dilated_block(x, p, ctx);
}

FeatureMap run_norm(FeatureMap x, const std::string& name,
                    const ModelWeights& w) {
  return affine_norm(std::move(x), w.get(name + ".scale").data,
                     w.get(name + ".shift").data);
}

std::string layer_label(const GraphLayer& layer) {
  return std::visit(
      Overloaded{
          [](const ConvLayer& l) { return l.name; },
          [](const ActivationLayer& l) {
            switch (l.kind) {
              case Activation::kLeakyRelu:
                return std::string("leaky_relu");
              case Activation::kRelu:
                return std::string("relu");
              case Activation::kTanh:
                return std::string("tanh");
            }
            return std::string("activation");
          },
          [](const ResidualStackLayer& l) { return l.name; },
          [](const MrfLayer& l) { return l.name; },
          [](const TransformLayer& l) { return l.name; },
          [](const BasisSynthesisLayer&) {
            return std::string("basis_synthesis");
          }},
      layer);
}

ModelWeights random_weights(const std::vector<WeightSlot>& slots,
                            const std::string& preset, uint64_t seed) {
  ModelWeights w;
  w.preset = preset;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& slot : slots) {
    Tensor t;
    t.dims = slot.dims;
    t.data.resize(slot.element_count());
    for (float& v : t.data) {
      v = static_cast<float>(slot.init_mean + slot.init_std * normal(rng));
    }
    w.tensors.emplace(slot.name, std::move(t));
  }
  return w;
}

}  // namespace

// Weights --------------------------------------------------------------------

size_t Tensor::element_count() const {
  size_t n = 1;
  for (int d : dims) n *= static_cast<size_t>(d);
  return n;
}

size_t WeightSlot::element_count() const {
  size_t n = 1;
  for (int d : dims) n *= static_cast<size_t>(d);
  return n;
}

const Tensor& ModelWeights::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw ContractError("weights: missing entry '" + name + "'");
  }
  return it->second;
}

size_t ModelWeights::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.data.size();
  return n;
}

void check_weights(const std::vector<WeightSlot>& slots,
                   const ModelWeights& w) {
  std::set<std::string> expected;
  for (const auto& slot : slots) {
    expected.insert(slot.name);
    auto it = w.tensors.find(slot.name);
    if (it == w.tensors.end()) {
      throw ContractError("weights: missing entry '" + slot.name + "'");
    }
    if (it->second.dims != slot.dims) {
      throw ContractError("weights: entry '" + slot.name + "' has shape " +
                          shape_string(it->second.dims) + ", expected " +
                          shape_string(slot.dims));
    }
    if (it->second.data.size() != slot.element_count()) {
      throw ContractError("weights: entry '" + slot.name +
                          "' payload does not match its shape");
    }
  }
  for (const auto& [name, t] : w.tensors) {
    if (!expected.contains(name)) {
      throw ContractError("weights: unexpected entry '" + name + "'");
    }
  }
}

// Presets --------------------------------------------------------------------

std::string_view preset_name(Preset p) {
  switch (p) {
    case Preset::kBasisMelganLarge:
      return "basis-melgan-large";
    case Preset::kBasisMelganLight:
      return "basis-melgan-light";
    case Preset::kMelganReference:
      return "melgan-reference";
    case Preset::kHifiganV1Reference:
      return "hifigan-v1-reference";
  }
  return "unknown";
}

Preset parse_preset(std::string_view name) {
  for (Preset p : all_presets()) {
    if (preset_name(p) == name) return p;
  }
  throw ContractError("unknown preset '" + std::string(name) + "'");
}

std::vector<Preset> all_presets() {
  return {Preset::kBasisMelganLarge, Preset::kBasisMelganLight,
          Preset::kMelganReference, Preset::kHifiganV1Reference};
}

namespace {

GeneratorGraph basis_melgan(std::string name, int pre_channels,
                            int mel_rate_blocks, int mid_channels,
                            int top_channels, int transform_hidden) {
  GeneratorGraph g;
  g.preset = std::move(name);
  g.upsampling_factors = {4, 4};
  const BasisSynthesisLayer basis{32, 256, 16};
  auto& L = g.layers;
  L.push_back(ConvLayer{"conv_pre", plain_conv(g.mel_channels, pre_channels, 7)});
  if (mel_rate_blocks > 0) {
    std::vector<int> dil = {1, 3, 9};
    dil.resize(mel_rate_blocks);
    L.push_back(ResidualStackLayer{"mel_stack", pre_channels, 3, dil, 1, 0.2f});
  }
  L.push_back(ActivationLayer{Activation::kLeakyRelu, 0.2f});
  L.push_back(ConvLayer{"up.0", upsample_conv(pre_channels, mid_channels, 8, 4)});
  L.push_back(ResidualStackLayer{"res.0", mid_channels, 3, {1, 3, 9}, 1, 0.2f});
  L.push_back(ActivationLayer{Activation::kLeakyRelu, 0.2f});
  L.push_back(ConvLayer{"up.1", upsample_conv(mid_channels, top_channels, 8, 4)});
  L.push_back(ResidualStackLayer{"res.1", top_channels, 3, {1, 3, 9}, 1, 0.2f});
  L.push_back(ActivationLayer{Activation::kLeakyRelu, 0.2f});
  L.push_back(ConvLayer{"conv_post", plain_conv(top_channels, basis.n_basis, 7)});
  L.push_back(TransformLayer{"transform", basis.n_basis, transform_hidden,
                             basis.n_basis, 0.2f});
  L.push_back(ActivationLayer{Activation::kRelu, 0.0f});
  L.push_back(basis);
  return g;
}

GeneratorGraph melgan_reference() {
  GeneratorGraph g;
  g.preset = std::string(preset_name(Preset::kMelganReference));
  g.upsampling_factors = {8, 8, 2, 2};
  int c = 512;
  g.layers.push_back(ConvLayer{"conv_pre", plain_conv(g.mel_channels, c, 7)});
  for (size_t i = 0; i < g.upsampling_factors.size(); ++i) {
    const int r = g.upsampling_factors[i];
    const std::string idx = std::to_string(i);
    g.layers.push_back(ActivationLayer{Activation::kLeakyRelu, 0.2f});
    g.layers.push_back(ConvLayer{"up." + idx, upsample_conv(c, c / 2, 2 * r, r)});
    c /= 2;
    g.layers.push_back(ResidualStackLayer{"res." + idx, c, 3, {1, 3, 9}, 1, 0.2f});
  }
  g.layers.push_back(ActivationLayer{Activation::kLeakyRelu, 0.2f});
  g.layers.push_back(ConvLayer{"conv_post", plain_conv(c, 1, 7)});
  g.layers.push_back(ActivationLayer{Activation::kTanh, 0.0f});
  return g;
}

GeneratorGraph hifigan_v1_reference() {
  GeneratorGraph g;
  g.preset = std::string(preset_name(Preset::kHifiganV1Reference));
  g.upsampling_factors = {8, 8, 2, 2};
  const std::vector<int> kernels = {16, 16, 4, 4};
  int c = 512;
  g.layers.push_back(ConvLayer{"conv_pre", plain_conv(g.mel_channels, c, 7)});
  for (size_t i = 0; i < g.upsampling_factors.size(); ++i) {
    const int r = g.upsampling_factors[i];
    const std::string idx = std::to_string(i);
    g.layers.push_back(ActivationLayer{Activation::kLeakyRelu, 0.1f});
    g.layers.push_back(
        ConvLayer{"up." + idx, upsample_conv(c, c / 2, kernels[i], r)});
    c /= 2;
    g.layers.push_back(MrfLayer{"mrf." + idx,
                                c,
                                {3, 7, 11},
                                {{1, 3, 5}, {1, 3, 5}, {1, 3, 5}},
                                0.1f});
  }
  g.layers.push_back(ActivationLayer{Activation::kLeakyRelu, 0.01f});
  g.layers.push_back(ConvLayer{"conv_post", plain_conv(c, 1, 7)});
  g.layers.push_back(ActivationLayer{Activation::kTanh, 0.0f});
  return g;
}

}  // namespace

GeneratorGraph build_preset(Preset p) {
  GeneratorGraph g;
  switch (p) {
    case Preset::kBasisMelganLarge:
      g = basis_melgan(std::string(preset_name(p)), 1024, 2, 384, 256, 256);
      break;
    case Preset::kBasisMelganLight:
      g = basis_melgan(std::string(preset_name(p)), 512, 0, 256, 128, 512);
      break;
    case Preset::kMelganReference:
      g = melgan_reference();
      break;
    case Preset::kHifiganV1Reference:
      g = hifigan_v1_reference();
      break;
  }
  g.validate();
  return g;
}

GeneratorGraph build_preset(std::string_view name) {
  return build_preset(parse_preset(name));
}

// GeneratorGraph -------------------------------------------------------------

const BasisSynthesisLayer* GeneratorGraph::basis_layer() const {
  for (const auto& layer : layers) {
    if (auto* b = std::get_if<BasisSynthesisLayer>(&layer)) return b;
  }
  return nullptr;
}

bool GeneratorGraph::uses_basis() const { return basis_layer() != nullptr; }

int GeneratorGraph::transposed_stage_count() const {
  int n = 0;
  for (const auto& layer : layers) {
    if (auto* c = std::get_if<ConvLayer>(&layer); c && c->spec.transposed) ++n;
  }
  return n;
}

int GeneratorGraph::frame_ratio() const {
  return std::accumulate(upsampling_factors.begin(), upsampling_factors.end(),
                         1, std::multiplies<>());
}

void GeneratorGraph::validate() const {
  auto fail = [&](const std::string& msg) {
    throw ContractError("graph '" + preset + "': " + msg);
  };
  std::vector<int> strides;
  for (const auto& layer : layers) {
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      c->spec.validate();
      if (c->spec.transposed) strides.push_back(c->spec.stride);
    }
  }
  if (strides != upsampling_factors) {
    fail("transposed conv strides do not match upsampling factors");
  }
  const BasisSynthesisLayer* basis = basis_layer();
  const int hop = basis ? basis->hop : 1;
  if (frame_ratio() * hop != mel_hop) {
    fail("upsampling product " + std::to_string(frame_ratio()) + " x hop " +
         std::to_string(hop) + " != mel hop " + std::to_string(mel_hop));
  }
  if (basis) {
    const size_t n = layers.size();
    if (n < 3 || !std::holds_alternative<BasisSynthesisLayer>(layers[n - 1]) ||
        !std::holds_alternative<TransformLayer>(layers[n - 3])) {
      fail("basis graphs must end in transform -> relu -> basis synthesis");
    }
    auto* act = std::get_if<ActivationLayer>(&layers[n - 2]);
    if (!act || act->kind != Activation::kRelu) {
      fail("basis synthesis must be preceded by relu");
    }
  }
  // Channel flow.
  int channels = mel_channels;
  auto expect = [&](int in, const std::string& name) {
    if (in != channels) {
      fail("layer '" + name + "' expects " + std::to_string(in) +
           " channels, receives " + std::to_string(channels));
    }
  };
  for (const auto& layer : layers) {
    std::visit(Overloaded{
                   [&](const ConvLayer& l) {
                     expect(l.spec.in_channels, l.name);
                     channels = l.spec.out_channels;
                   },
                   [&](const ActivationLayer&) {},
                   [&](const ResidualStackLayer& l) { expect(l.channels, l.name); },
                   [&](const MrfLayer& l) {
                     expect(l.channels, l.name);
                     if (l.kernel_sizes.size() != l.dilations.size()) {
                       fail("layer '" + l.name + "' kernel/dilation mismatch");
                     }
                   },
                   [&](const TransformLayer& l) {
                     expect(l.in_channels, l.name);
                     channels = l.out_channels;
                   },
                   [&](const BasisSynthesisLayer& l) {
                     expect(l.n_basis, "basis_synthesis");
                     channels = 1;
                   }},
               layer);
  }
  if (!basis && channels != 1) fail("conventional graphs must end in 1 channel");
}

std::string describe(const GeneratorGraph& g) {
  std::ostringstream os;
  os << "preset " << g.preset << "\n";
  os << "input mel_channels=" << g.mel_channels << " mel_hop=" << g.mel_hop
     << " sample_rate=" << g.sample_rate << "\n";
  os << "upsampling_factors";
  for (int f : g.upsampling_factors) os << " " << f;
  os << "\n";
  auto conv_line = [&](const std::string& name, const ConvSpec& s) {
    os << "  " << (s.transposed ? "conv_transpose1d " : "conv1d ") << name
       << " in=" << s.in_channels << " out=" << s.out_channels
       << " k=" << s.kernel_size << " stride=" << s.stride
       << " dilation=" << s.dilation << " pad=" << s.padding
       << " groups=" << s.groups << "\n";
  };
  for (const auto& layer : g.layers) {
    std::visit(
        Overloaded{
            [&](const ConvLayer& l) { conv_line(l.name, l.spec); },
            [&](const ActivationLayer& l) {
              os << "  " << layer_label(layer);
              if (l.kind == Activation::kLeakyRelu) os << " slope=" << l.slope;
              os << "\n";
            },
            [&](const ResidualStackLayer& l) {
              os << "  residual_stack " << l.name << " channels=" << l.channels
                 << " slope=" << l.slope << "\n";
              for (const auto& [c1, c2] : residual_convs(l)) {
                conv_line(c1.name, c1.spec);
                conv_line(c2.name, c2.spec);
              }
            },
            [&](const MrfLayer& l) {
              os << "  mrf " << l.name << " channels=" << l.channels
                 << " branches=" << l.kernel_sizes.size()
                 << " slope=" << l.slope << "\n";
              for (const auto& branch : mrf_convs(l)) {
                for (const auto& [c1, c2] : branch) {
                  conv_line(c1.name, c1.spec);
                  conv_line(c2.name, c2.spec);
                }
              }
            },
            [&](const TransformLayer& l) {
              os << "  transform " << l.name << " in=" << l.in_channels
                 << " hidden=" << l.hidden << " out=" << l.out_channels
                 << " slope=" << l.slope << "\n";
            },
            [&](const BasisSynthesisLayer& l) {
              os << "  basis_synthesis window=" << l.window_len
                 << " n_basis=" << l.n_basis << " hop=" << l.hop << "\n";
            }},
        layer);
  }
  return os.str();
}

std::vector<WeightSlot> weight_slots(const GeneratorGraph& g) {
  std::vector<WeightSlot> slots;
  for (const auto& layer : g.layers) {
    std::visit(Overloaded{
                   [&](const ConvLayer& l) { add_conv_slots(slots, l.name, l.spec); },
                   [&](const ActivationLayer&) {},
                   [&](const ResidualStackLayer& l) {
                     for (const auto& [c1, c2] : residual_convs(l)) {
                       add_conv_slots(slots, c1.name, c1.spec);
                       add_conv_slots(slots, c2.name, c2.spec);
                     }
                   },
                   [&](const MrfLayer& l) {
                     for (const auto& branch : mrf_convs(l)) {
                       for (const auto& [c1, c2] : branch) {
                         add_conv_slots(slots, c1.name, c1.spec);
                         add_conv_slots(slots, c2.name, c2.spec);
                       }
                     }
                   },
                   [&](const TransformLayer& l) {
                     auto t = transform_parts(l);
                     add_conv_slots(slots, t.linear1.name, t.linear1.spec);
                     add_norm_slots(slots, t.norm1, l.hidden);
                     add_conv_slots(slots, t.linear2.name, t.linear2.spec);
                     add_norm_slots(slots, t.norm2, l.hidden);
                     add_conv_slots(slots, t.linear3.name, t.linear3.spec);
                   },
                   [&](const BasisSynthesisLayer&) {}},
               layer);
  }
  return slots;
}

ModelWeights init_random_weights(const GeneratorGraph& g, uint64_t seed) {
  return random_weights(weight_slots(g), g.preset, seed);
}

size_t count_params(const GeneratorGraph& g, const ModelWeights& w) {
  check_weights(weight_slots(g), w);
  return w.parameter_count();
}

// Forward --------------------------------------------------------------------

FeatureMap to_feature_map(const MelSpectrogram& mel) {
  std::vector<float> values(mel.data.begin(), mel.data.end());
  return FeatureMap(mel.n_mels, mel.frames, std::move(values));
}

GeneratorOutput forward_generator(const GeneratorGraph& g,
                                  const ModelWeights& w,
                                  const MelSpectrogram& mel,
                                  const BasisMatrix* basis,
                                  const ExecContext& ctx) {
  return forward_generator(g, w, to_feature_map(mel), basis, ctx);
}

GeneratorOutput forward_generator(const GeneratorGraph& g,
                                  const ModelWeights& w, const FeatureMap& mel,
                                  const BasisMatrix* basis,
                                  const ExecContext& ctx) {
  g.validate();
  if (const BasisSynthesisLayer* bl = g.basis_layer()) {
    if (!basis) {
      throw ContractError("layer 'basis_synthesis': preset '" + g.preset +
                          "' requires a basis matrix");
    }
    if (basis->window_len != bl->window_len || basis->n_basis != bl->n_basis ||
        basis->hop != bl->hop) {
      throw ContractError(
          "layer 'basis_synthesis': basis is [" +
          std::to_string(basis->window_len) + ", " +
          std::to_string(basis->n_basis) + "] hop " +
          std::to_string(basis->hop) + ", graph expects [" +
          std::to_string(bl->window_len) + ", " + std::to_string(bl->n_basis) +
          "] hop " + std::to_string(bl->hop));
    }
  }
  check_weights(weight_slots(g), w);
  if (mel.channels != g.mel_channels) {
    throw ContractError("layer 'input': mel has " +
                        std::to_string(mel.channels) + " bands, graph expects " +
                        std::to_string(g.mel_channels));
  }
  if (mel.time < 1) throw ContractError("layer 'input': mel has no frames");

  GeneratorOutput out;
  FeatureMap x = mel;
  for (const auto& layer : g.layers) {
    try {
      std::visit(
          Overloaded{
              [&](const ConvLayer& l) { x = run_conv(x, l.name, l.spec, w, ctx); },
              [&](const ActivationLayer& l) {
                switch (l.kind) {
                  case Activation::kLeakyRelu:
                    x = leaky_relu(std::move(x), l.slope);
                    break;
                  case Activation::kRelu:
                    x = relu(std::move(x));
                    break;
                  case Activation::kTanh:
                    x = tanh_map(std::move(x));
                    break;
                }
              },
              [&](const ResidualStackLayer& l) {
                for (const auto& [c1, c2] : residual_convs(l)) {
                  x = run_block(x, c1, c2, l.slope, w, ctx);
                }
              },
              [&](const MrfLayer& l) {
                std::vector<double> sum(x.data.size(), 0.0);
                auto branches = mrf_convs(l);
                for (const auto& branch : branches) {
                  FeatureMap h = x;
                  for (const auto& [c1, c2] : branch) {
                    h = run_block(h, c1, c2, l.slope, w, ctx);
                  }
                  for (size_t i = 0; i < sum.size(); ++i) sum[i] += h.data[i];
                }
                const double inv = 1.0 / static_cast<double>(branches.size());
                for (size_t i = 0; i < sum.size(); ++i) {
                  x.data[i] = static_cast<float>(sum[i] * inv);
                }
              },
              [&](const TransformLayer& l) {
                auto t = transform_parts(l);
                x = run_conv(x, t.linear1.name, t.linear1.spec, w, ctx);
                x = run_norm(leaky_relu(std::move(x), l.slope), t.norm1, w);
                x = run_conv(x, t.linear2.name, t.linear2.spec, w, ctx);
                x = run_norm(leaky_relu(std::move(x), l.slope), t.norm2, w);
                x = run_conv(x, t.linear3.name, t.linear3.spec, w, ctx);
              },
              [&](const BasisSynthesisLayer& l) {
                out.weights = WeightMatrix(l.n_basis, x.time);
                for (size_t i = 0; i < x.data.size(); ++i) {
                  out.weights.data[i] = x.data[i];
                }
                out.waveform = synthesize(*basis, out.weights, ctx.tally);
                x = FeatureMap(1, 0);
              }},
          layer);
    } catch (const ContractError& e) {
      throw ContractError("layer '" + layer_label(layer) + "': " + e.what());
    }
  }
  const size_t samples = static_cast<size_t>(mel.time) * g.mel_hop;
  if (g.uses_basis()) {
    out.waveform.resize(samples);
  } else {
    out.weights = WeightMatrix(1, 0);
    out.waveform.assign(x.data.begin(), x.data.end());
    if (out.waveform.size() != samples) {
      throw ContractError("layer 'output': produced " +
                          std::to_string(out.waveform.size()) +
                          " samples, expected " + std::to_string(samples));
    }
  }
  return out;
}

// Discriminators -------------------------------------------------------------

namespace {

std::vector<ConvSpec> melgan_block(int in_channels, const DiscriminatorWidth& w) {
  if (w.base_channels < 4 || w.max_channels < w.base_channels ||
      w.downsample_layers < 0) {
    throw ContractError("DiscriminatorWidth: invalid widths");
  }
  std::vector<ConvSpec> convs;
  convs.push_back(plain_conv(in_channels, w.base_channels, 15));
  int nf = w.base_channels;
  for (int i = 0; i < w.downsample_layers; ++i) {
    int prev = nf;
    nf = std::min(nf * 4, w.max_channels);
    ConvSpec s;
    s.in_channels = prev;
    s.out_channels = nf;
    s.kernel_size = 41;
    s.stride = 4;
    s.padding = 20;
    s.groups = std::max(1, prev / 4);
    s.validate();
    convs.push_back(s);
  }
  convs.push_back(plain_conv(nf, std::min(nf * 2, w.max_channels), 5));
  convs.push_back(plain_conv(convs.back().out_channels, 1, 3));
  return convs;
}

std::string conv_name(const SubDiscriminator& sub, size_t i) {
  return sub.name + ".conv" + std::to_string(i);
}

FeatureMap run_sub(const SubDiscriminator& sub, FeatureMap x, float slope,
                   const ModelWeights& w, const ExecContext& ctx) {
  for (size_t i = 0; i < sub.convs.size(); ++i) {
    x = run_conv(x, conv_name(sub, i), sub.convs[i], w, ctx);
    if (i + 1 < sub.convs.size()) x = leaky_relu(std::move(x), slope);
  }
  return x;
}

FeatureMap pool2(const FeatureMap& x) { return avg_pool1d(x, 4, 2, 1); }

}  // namespace

DiscriminatorGraph build_msd(const DiscriminatorWidth& width) {
  DiscriminatorGraph g;
  g.name = "msd";
  g.kind = DiscriminatorKind::kMultiScale;
  for (int s = 0; s < 3; ++s) {
    g.subs.push_back({"msd." + std::to_string(s), melgan_block(1, width)});
  }
  return g;
}

DiscriminatorGraph build_mfd(const DiscriminatorWidth& width) {
  DiscriminatorGraph g;
  g.name = "mfd";
  g.kind = DiscriminatorKind::kMultiResolutionStft;
  g.resolutions = multi_resolution_configs();
  for (size_t s = 0; s < g.resolutions.size(); ++s) {
    g.subs.push_back({"mfd." + std::to_string(s),
                      melgan_block(g.resolutions[s].bins(), width)});
  }
  return g;
}

std::vector<WeightSlot> weight_slots(const DiscriminatorGraph& g) {
  std::vector<WeightSlot> slots;
  for (const auto& sub : g.subs) {
    for (size_t i = 0; i < sub.convs.size(); ++i) {
      add_conv_slots(slots, conv_name(sub, i), sub.convs[i]);
    }
  }
  return slots;
}

ModelWeights init_random_weights(const DiscriminatorGraph& g, uint64_t seed) {
  return random_weights(weight_slots(g), g.name, seed);
}

std::vector<FeatureMap> forward_msd(const DiscriminatorGraph& g,
                                    const ModelWeights& w,
                                    std::span<const double> x,
                                    const ExecContext& ctx) {
  if (g.kind != DiscriminatorKind::kMultiScale) {
    throw ContractError("forward_msd: graph '" + g.name + "' is not multi-scale");
  }
  check_weights(weight_slots(g), w);
  if (x.empty()) throw ContractError("forward_msd: empty waveform");
  FeatureMap input(1, static_cast<int>(x.size()));
  for (size_t i = 0; i < x.size(); ++i) input.data[i] = static_cast<float>(x[i]);
  std::vector<FeatureMap> scores;
  for (size_t s = 0; s < g.subs.size(); ++s) {
    if (s > 0) input = pool2(input);
    scores.push_back(run_sub(g.subs[s], input, g.slope, w, ctx));
  }
  return scores;
}

std::vector<FeatureMap> forward_mfd(const DiscriminatorGraph& g,
                                    const ModelWeights& w,
                                    std::span<const double> x,
                                    const ExecContext& ctx) {
  if (g.kind != DiscriminatorKind::kMultiResolutionStft) {
    throw ContractError("forward_mfd: graph '" + g.name +
                        "' is not a spectrogram discriminator");
  }
  check_weights(weight_slots(g), w);
  std::vector<FeatureMap> scores;
  for (size_t s = 0; s < g.subs.size(); ++s) {
    auto mag = stft_magnitude(x, g.resolutions[s]);
    std::vector<float> values(mag.data.begin(), mag.data.end());
    FeatureMap spec(mag.bins, mag.frames, std::move(values));
    scores.push_back(run_sub(g.subs[s], std::move(spec), g.slope, w, ctx));
  }
  return scores;
}

std::vector<FeatureMap> forward_discriminator(const DiscriminatorGraph& g,
                                              const ModelWeights& w,
                                              std::span<const double> x,
                                              const ExecContext& ctx) {
  return g.kind == DiscriminatorKind::kMultiScale ? forward_msd(g, w, x, ctx)
                                                  : forward_mfd(g, w, x, ctx);
}

// Complexity -----------------------------------------------------------------

double ComplexityReport::gflops_per_second() const {
  return audio_seconds > 0.0 ? static_cast<double>(total_flops) / audio_seconds / 1e9
                             : 0.0;
}

double ComplexityReport::params_millions() const {
  return static_cast<double>(total_params) / 1e6;
}

namespace {

void finish(ComplexityReport& r) {
  r.total_flops = 0;
  r.total_params = 0;
  for (const auto& l : r.layers) {
    r.total_flops += l.flops;
    r.total_params += l.params;
  }
}

}  // namespace

ComplexityReport analyze(const GeneratorGraph& g, int mel_frames) {
  g.validate();
  if (mel_frames < 1) throw ContractError("analyze: mel_frames must be >= 1");
  ComplexityReport r;
  r.graph = g.preset;
  r.audio_seconds =
      static_cast<double>(mel_frames) * g.mel_hop / g.sample_rate;
  int time = mel_frames;
  auto conv_row = [&](const std::string& name, const ConvSpec& s) {
    r.layers.push_back({name, s.transposed ? "conv_transpose1d" : "conv1d",
                        s.flops(time), s.param_count()});
    time = s.output_length(time);
  };
  for (const auto& layer : g.layers) {
    std::visit(
        Overloaded{
            [&](const ConvLayer& l) { conv_row(l.name, l.spec); },
            [&](const ActivationLayer&) {},
            [&](const ResidualStackLayer& l) {
              for (const auto& [c1, c2] : residual_convs(l)) {
                conv_row(c1.name, c1.spec);
                conv_row(c2.name, c2.spec);
              }
            },
            [&](const MrfLayer& l) {
              const int in_time = time;
              for (const auto& branch : mrf_convs(l)) {
                time = in_time;
                for (const auto& [c1, c2] : branch) {
                  conv_row(c1.name, c1.spec);
                  conv_row(c2.name, c2.spec);
                }
              }
            },
            [&](const TransformLayer& l) {
              auto t = transform_parts(l);
              conv_row(t.linear1.name, t.linear1.spec);
              r.layers.push_back({t.norm1, "affine_norm", 0,
                                  2ull * static_cast<uint64_t>(l.hidden)});
              conv_row(t.linear2.name, t.linear2.spec);
              r.layers.push_back({t.norm2, "affine_norm", 0,
                                  2ull * static_cast<uint64_t>(l.hidden)});
              conv_row(t.linear3.name, t.linear3.spec);
            },
            [&](const BasisSynthesisLayer& l) {
              r.layers.push_back({"basis_synthesis", "basis_synthesis",
                                  2ull * time * l.window_len * l.n_basis, 0});
            }},
        layer);
  }
  finish(r);
  return r;
}

ComplexityReport analyze(const DiscriminatorGraph& g, size_t samples,
                         int sample_rate) {
  if (samples < 1) throw ContractError("analyze: samples must be >= 1");
  ComplexityReport r;
  r.graph = g.name;
  r.audio_seconds = static_cast<double>(samples) / sample_rate;
  int scale_len = static_cast<int>(samples);
  for (size_t s = 0; s < g.subs.size(); ++s) {
    const auto& sub = g.subs[s];
    int time;
    if (g.kind == DiscriminatorKind::kMultiScale) {
      if (s > 0) scale_len = (scale_len + 2 - 4) / 2 + 1;
      time = scale_len;
    } else {
      time = stft_frame_count(samples, g.resolutions[s].hop_size);
    }
    for (size_t i = 0; i < sub.convs.size(); ++i) {
      const ConvSpec& spec = sub.convs[i];
      r.layers.push_back({conv_name(sub, i), "conv1d", spec.flops(time),
                          spec.param_count()});
      time = spec.output_length(time);
    }
  }
  finish(r);
  return r;
}

}  // namespace bmg
