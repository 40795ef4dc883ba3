// bmg: command-line front end for the vocoder library.
//
// Every command prints results on stdout and exits 0, or prints a single
// "error: ..." line on stderr and exits 1.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bmg/basis.h"
#include "bmg/bench.h"
#include "bmg/io.h"
#include "bmg/objectives.h"
#include "bmg/spectral.h"
#include "bmg/vocoder.h"

namespace fs = std::filesystem;
using bmg::ContractError;

namespace {

class Timer {
 public:
  double lap() {
    auto now = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

uint64_t resolve_seed(const std::optional<uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("BMG_SEED")) {
    try {
      size_t used = 0;
      uint64_t v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ContractError(std::string("BMG_SEED is not an unsigned integer: ") + env);
  }
  return 0;
}

// Picks the preset for a weight archive: explicit flag, stored name, or the
// unique preset whose slots match the tensors.
bmg::GeneratorGraph resolve_graph(const std::string& flag,
                                  const bmg::ModelWeights& w) {
  std::string name = flag.empty() ? w.preset : flag;
  if (!name.empty()) {
    auto g = bmg::build_preset(name);
    try {
      bmg::check_weights(bmg::weight_slots(g), w);
    } catch (const ContractError& e) {
      throw ContractError("preset/weights mismatch for '" + name +
                          "': " + e.what());
    }
    return g;
  }
  for (auto p : bmg::all_presets()) {
    auto g = bmg::build_preset(p);
    try {
      bmg::check_weights(bmg::weight_slots(g), w);
      return g;
    } catch (const ContractError&) {
    }
  }
  throw ContractError("weights match no known preset");
}

std::vector<fs::path> wav_files(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw ContractError("corpus dir '" + dir + "' is not a directory");
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw ContractError("corpus dir '" + dir + "' contains no .wav files");
  }
  return files;
}

// Commands -------------------------------------------------------------------

struct SynthArgs {
  std::string model, basis, mel, wav_in, out, preset;
  int threads = 1;
};

void cmd_synth(const SynthArgs& a) {
  Timer timer;
  const auto weights = bmg::load_model(a.model);
  const auto graph = resolve_graph(a.preset, weights);
  std::optional<bmg::BasisMatrix> basis;
  if (graph.uses_basis()) {
    if (a.basis.empty()) {
      throw ContractError("preset '" + graph.preset +
                          "' needs --basis; nothing was computed");
    }
    basis = bmg::load_basis(a.basis);
  }
  const double t_load = timer.lap();

  bmg::MelSpectrogram mel;
  size_t input_samples = 0;
  if (!a.mel.empty()) {
    mel = bmg::load_mel(a.mel);
  } else {
    auto audio = bmg::wav_read(a.wav_in);
    mel = bmg::mel_spectrogram(audio.samples, audio.sample_rate);
    input_samples = audio.samples.size();
  }
  if (mel.sample_rate != graph.sample_rate || mel.hop_size != graph.mel_hop) {
    throw ContractError("mel is " + std::to_string(mel.sample_rate) + " Hz hop " +
                        std::to_string(mel.hop_size) + ", preset expects " +
                        std::to_string(graph.sample_rate) + " Hz hop " +
                        std::to_string(graph.mel_hop));
  }
  const double t_mel = timer.lap();

  bmg::ExecContext ctx;
  ctx.threads = a.threads;
  auto out = bmg::forward_generator(graph, weights, mel,
                                    basis ? &*basis : nullptr, ctx);
  const double t_gen = timer.lap();
  // Copy-synthesis output matches the input length; the last mel frame
  // overhangs the input by less than one hop.
  if (input_samples > 0 && input_samples < out.waveform.size()) {
    out.waveform.resize(input_samples);
  }

  bmg::wav_write(a.out, {out.waveform, graph.sample_rate});
  const double t_write = timer.lap();

  const double duration =
      static_cast<double>(out.waveform.size()) / graph.sample_rate;
  std::cout << "preset=" << graph.preset << "\n"
            << "mel_frames=" << mel.frames << "\n"
            << "samples=" << out.waveform.size() << "\n"
            << "duration_s=" << duration << "\n"
            << "time_load_s=" << t_load << "\n"
            << "time_mel_s=" << t_mel << "\n"
            << "time_generator_s=" << t_gen << "\n"
            << "time_write_s=" << t_write << "\n"
            << "rtf=" << t_gen / duration << "\n";
}

void cmd_flops(const std::string& preset, bool json) {
  const auto graph = bmg::build_preset(preset);
  const auto report = bmg::analyze(graph);
  const auto reference =
      bmg::analyze(bmg::build_preset(bmg::Preset::kHifiganV1Reference));
  const double ratio =
      reference.gflops_per_second() / report.gflops_per_second();
  if (json) {
    nlohmann::json j;
    j["preset"] = report.graph;
    j["gflops_per_second"] = report.gflops_per_second();
    j["params"] = report.total_params;
    j["params_millions"] = report.params_millions();
    j["reduction_vs_hifigan_v1"] = ratio;
    for (const auto& l : report.layers) {
      const double gf = static_cast<double>(l.flops) / report.audio_seconds / 1e9;
      j["layers"].push_back(
          {{"name", l.name}, {"kind", l.kind}, {"gflops_per_second", gf},
           {"params", l.params}});
    }
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::cout << "preset " << report.graph << " (GFLOPs per second of audio)\n";
  std::cout << std::left << std::setw(28) << "layer" << std::setw(18) << "kind"
            << std::right << std::setw(12) << "GFLOPs/s" << std::setw(12)
            << "params" << "\n";
  std::cout << std::fixed;
  for (const auto& l : report.layers) {
    const double gf = static_cast<double>(l.flops) / report.audio_seconds / 1e9;
    std::cout << std::left << std::setw(28) << l.name << std::setw(18) << l.kind
              << std::right << std::setw(12) << std::setprecision(4) << gf
              << std::setw(12) << l.params << "\n";
  }
  std::cout << "total_gflops_per_second=" << std::setprecision(3)
            << report.gflops_per_second() << "\n"
            << "total_params=" << report.total_params << "\n"
            << "params_millions=" << report.params_millions() << "\n"
            << "reduction_vs_hifigan_v1=" << std::setprecision(2) << ratio
            << "x\n";
}

void cmd_bench(const std::string& preset, const bmg::BenchOptions& opts,
               bool json) {
  if (opts.seconds < 1.0) throw ContractError("--seconds must be >= 1");
  const auto r = bmg::measure_rtf(bmg::build_preset(preset), opts);
  if (json) {
    nlohmann::json j = {{"preset", r.preset},
                        {"platform", r.platform},
                        {"threads", r.threads},
                        {"repetitions", r.repetitions},
                        {"warmup", r.warmup},
                        {"audio_seconds", r.audio_seconds},
                        {"wall_seconds", r.wall_seconds},
                        {"rtf", r.rtf},
                        {"rep_rtf", r.rep_rtf},
                        {"spread", r.spread()}};
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::cout << "preset=" << r.preset << "\n"
            << "platform=" << r.platform << "\n"
            << "threads=" << r.threads << "\n"
            << "warmup=" << r.warmup << "\n"
            << "repetitions=" << r.repetitions << "\n"
            << "audio_seconds=" << r.audio_seconds << "\n"
            << "wall_seconds_median=" << r.wall_seconds << "\n"
            << "rtf_median=" << r.rtf << "\n"
            << "rtf_spread=" << r.spread() << "\n";
  for (size_t i = 0; i < r.rep_rtf.size(); ++i) {
    std::cout << "rtf_rep" << i << "=" << r.rep_rtf[i] << "\n";
  }
}

void cmd_decompose(const std::string& basis_path, const std::string& wav_in,
                   const std::string& out, const bmg::DecomposeOptions& opts) {
  const auto basis = bmg::load_basis(basis_path);
  const auto audio = bmg::wav_read(wav_in);
  if (audio.samples.empty()) throw ContractError("input '" + wav_in + "' is empty");
  auto result = bmg::decompose_signal(basis, audio.samples, opts);
  bmg::save_weight_matrix(out, result.weights);
  auto recon = bmg::synthesize(basis, result.weights);
  recon.resize(audio.samples.size());
  std::cout << "frames=" << result.weights.n_frames << "\n"
            << "unconverged_frames=" << result.unconverged_frames << "\n"
            << "si_snr_db=" << bmg::si_snr(recon, audio.samples) << "\n";
}

void cmd_learn_basis(const std::string& dir, const std::string& out,
                     const bmg::LearnOptions& opts) {
  std::vector<bmg::Signal> corpus;
  for (const auto& f : wav_files(dir)) corpus.push_back(bmg::wav_read(f).samples);
  auto result = bmg::learn_basis(corpus, opts);
  bmg::save_basis(out, result.basis);
  std::cout << "clips=" << corpus.size() << "\n"
            << "basis_shape=[" << result.basis.window_len << ", "
            << result.basis.n_basis << "]\n"
            << "hop=" << result.basis.hop << "\n"
            << "objective_initial=" << result.objective_trace.front() << "\n"
            << "objective_final=" << result.objective_trace.back() << "\n";
}

struct LossArgs {
  std::string ref, est, ref_weights, est_weights;
  bool adversarial = false;
  bool real_label = false;
};

void cmd_loss(const LossArgs& a, uint64_t seed) {
  auto ref = bmg::wav_read(a.ref);
  auto est = bmg::wav_read(a.est);
  if (ref.sample_rate != est.sample_rate) {
    throw ContractError("sample rates differ: " + std::to_string(ref.sample_rate) +
                        " vs " + std::to_string(est.sample_rate));
  }
  const size_t hop = bmg::default_mel_config().hop_size;
  const size_t n1 = ref.samples.size(), n2 = est.samples.size();
  if (n1 != n2) {
    const size_t diff = n1 > n2 ? n1 - n2 : n2 - n1;
    if (diff > hop) {
      throw ContractError("lengths differ by " + std::to_string(diff) +
                          " samples, more than one hop (" + std::to_string(hop) +
                          ")");
    }
    std::cerr << "warning: lengths differ by " << diff
              << " samples; trimming to " << std::min(n1, n2) << "\n";
    ref.samples.resize(std::min(n1, n2));
    est.samples.resize(std::min(n1, n2));
  }
  std::optional<bmg::WeightMatrix> w_ref, w_est;
  if (!a.ref_weights.empty() || !a.est_weights.empty()) {
    if (a.ref_weights.empty() || a.est_weights.empty()) {
      throw ContractError("--ref-weights and --est-weights go together");
    }
    w_ref = bmg::load_weight_matrix(a.ref_weights);
    w_est = bmg::load_weight_matrix(a.est_weights);
  }
  bmg::LossFlags flags;
  flags.adversarial = a.adversarial;
  if (a.real_label) flags.form = bmg::AdversarialForm::kRealLabel;
  std::optional<bmg::Discriminators> d;
  if (a.adversarial) d = bmg::make_discriminators(seed);
  auto b = bmg::generator_total(ref.samples, est.samples,
                                w_ref ? &*w_ref : nullptr,
                                w_est ? &*w_est : nullptr, flags,
                                d ? &*d : nullptr);
  std::cout << b.to_text();
}

void cmd_presets(const std::string& preset) {
  if (!preset.empty()) {
    std::cout << bmg::describe(bmg::build_preset(preset));
    return;
  }
  for (auto p : bmg::all_presets()) {
    std::cout << bmg::describe(bmg::build_preset(p)) << "\n";
  }
}

void cmd_init_model(const std::string& preset, const std::string& out,
                    const std::string& basis_out, uint64_t seed) {
  const auto graph = bmg::build_preset(preset);
  const auto w = bmg::init_random_weights(graph, seed);
  bmg::save_model(out, w);
  std::cout << "preset=" << graph.preset << "\n"
            << "params=" << w.parameter_count() << "\n";
  if (!basis_out.empty()) {
    const auto* bl = graph.basis_layer();
    if (!bl) throw ContractError("preset '" + graph.preset + "' has no basis");
    bmg::save_basis(basis_out, bmg::random_basis(bl->window_len, bl->n_basis,
                                                 bl->hop, seed + 1));
    std::cout << "basis=" << basis_out << "\n";
  }
}

void cmd_mel(const std::string& wav_in, const std::string& out) {
  const auto audio = bmg::wav_read(wav_in);
  const auto mel = bmg::mel_spectrogram(audio.samples, audio.sample_rate);
  bmg::save_mel(out, mel);
  std::cout << "mel_shape=[" << mel.n_mels << ", " << mel.frames << "]\n";
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Basis-weight neural vocoder tools"};
  app.require_subcommand(1);
  std::optional<uint64_t> seed_flag;

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Mel or WAV in, waveform out");
  synth_cmd->add_option("--model", synth.model, "Weight archive")->required();
  synth_cmd->add_option("--basis", synth.basis, "Basis archive");
  auto* mel_opt = synth_cmd->add_option("--mel", synth.mel, "Mel archive");
  auto* wav_opt =
      synth_cmd->add_option("--wav-in", synth.wav_in, "WAV for copy-synthesis");
  mel_opt->excludes(wav_opt);
  synth_cmd->add_option("--out", synth.out, "Output WAV")->required();
  synth_cmd->add_option("--preset", synth.preset, "Override stored preset");
  synth_cmd->add_option("--threads", synth.threads)->check(CLI::PositiveNumber);

  std::string flops_preset;
  bool flops_json = false;
  auto* flops_cmd = app.add_subcommand("flops", "Analytic complexity report");
  flops_cmd->add_option("--preset", flops_preset)->required();
  flops_cmd->add_flag("--json", flops_json);

  std::string bench_preset;
  bmg::BenchOptions bench;
  bool bench_json = false;
  auto* bench_cmd = app.add_subcommand("bench", "Real-time factor benchmark");
  bench_cmd->add_option("--preset", bench_preset)->required();
  bench_cmd->add_option("--seconds", bench.seconds);
  bench_cmd->add_option("--threads", bench.threads)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--reps", bench.reps);
  bench_cmd->add_option("--warmup", bench.warmup);
  bench_cmd->add_option("--seed", seed_flag);
  bench_cmd->add_flag("--json", bench_json);

  std::string dec_basis, dec_wav, dec_out;
  bmg::DecomposeOptions dec;
  auto* dec_cmd = app.add_subcommand("decompose", "NNLS weights for a WAV");
  dec_cmd->add_option("--basis", dec_basis)->required();
  dec_cmd->add_option("--wav-in", dec_wav)->required();
  dec_cmd->add_option("--out-weights", dec_out)->required();
  dec_cmd->add_option("--threads", dec.threads)->check(CLI::PositiveNumber);
  dec_cmd->add_option("--tol", dec.tol);
  dec_cmd->add_option("--max-iter", dec.max_iter);

  std::string corpus_dir, learn_out;
  bmg::LearnOptions learn;
  auto* learn_cmd = app.add_subcommand("learn-basis", "Learn a basis from WAVs");
  learn_cmd->add_option("--corpus-dir", corpus_dir)->required();
  learn_cmd->add_option("--out", learn_out)->required();
  learn_cmd->add_option("--iters", learn.iters);
  learn_cmd->add_option("--weight-steps", learn.weight_steps);
  learn_cmd->add_option("--window", learn.window_len);
  learn_cmd->add_option("--n-basis", learn.n_basis);
  learn_cmd->add_option("--hop", learn.hop);
  learn_cmd->add_option("--seed", seed_flag);

  LossArgs loss;
  auto* loss_cmd = app.add_subcommand("loss", "Generator loss breakdown");
  loss_cmd->add_option("--ref", loss.ref)->required();
  loss_cmd->add_option("--est", loss.est)->required();
  loss_cmd->add_option("--ref-weights", loss.ref_weights);
  loss_cmd->add_option("--est-weights", loss.est_weights);
  loss_cmd->add_flag("--adversarial", loss.adversarial);
  loss_cmd->add_flag("--real-label", loss.real_label,
                     "Adversarial target is the real label");
  loss_cmd->add_option("--seed", seed_flag, "Discriminator init seed");

  std::string dump_preset;
  auto* presets_cmd = app.add_subcommand("presets", "Dump preset definitions");
  presets_cmd->add_option("--preset", dump_preset);

  std::string init_preset, init_out, init_basis;
  auto* init_cmd = app.add_subcommand("init-model", "Random weight archive");
  init_cmd->add_option("--preset", init_preset)->required();
  init_cmd->add_option("--out", init_out)->required();
  init_cmd->add_option("--basis-out", init_basis, "Also write a random basis");
  init_cmd->add_option("--seed", seed_flag);

  std::string mel_in, mel_out;
  auto* mel_cmd = app.add_subcommand("mel", "Log-mel archive from a WAV");
  mel_cmd->add_option("--wav-in", mel_in)->required();
  mel_cmd->add_option("--out", mel_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*synth_cmd) {
      if (synth.mel.empty() == synth.wav_in.empty()) {
        throw ContractError("synth needs exactly one of --mel or --wav-in");
      }
      cmd_synth(synth);
    } else if (*flops_cmd) {
      cmd_flops(flops_preset, flops_json);
    } else if (*bench_cmd) {
      bench.seed = resolve_seed(seed_flag);
      cmd_bench(bench_preset, bench, bench_json);
    } else if (*dec_cmd) {
      cmd_decompose(dec_basis, dec_wav, dec_out, dec);
    } else if (*learn_cmd) {
      learn.seed = resolve_seed(seed_flag);
      cmd_learn_basis(corpus_dir, learn_out, learn);
    } else if (*loss_cmd) {
      cmd_loss(loss, resolve_seed(seed_flag));
    } else if (*presets_cmd) {
      cmd_presets(dump_preset);
    } else if (*init_cmd) {
      cmd_init_model(init_preset, init_out, init_basis, resolve_seed(seed_flag));
    } else if (*mel_cmd) {
      cmd_mel(mel_in, mel_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
