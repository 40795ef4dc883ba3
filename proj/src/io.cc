#include "bmg/io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace bmg {

namespace {

static_assert(std::endian::native == std::endian::little,
              "archive and WAV code assume a little-endian host");

constexpr char kArchiveMagic[4] = {'B', 'M', 'G', '1'};
constexpr char kPresetKey[] = "meta.preset";

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write to '" + path + "' failed");
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

// Bounds-checked little-endian reader over a byte buffer.
class Cursor {
 public:
  Cursor(const std::vector<char>& bytes, std::string path)
      : bytes_(bytes), path_(std::move(path)) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  const char* take(size_t n, const char* what) {
    need(n, what);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  size_t remaining() const { return bytes_.size() - pos_; }
  void skip(size_t n) { pos_ += std::min(n, remaining()); }

 private:
  void need(size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError("'" + path_ + "' truncated reading " + what +
                        ": expected " + std::to_string(n) + " bytes, " +
                        std::to_string(remaining()) + " available");
    }
  }

  const std::vector<char>& bytes_;
  std::string path_;
  size_t pos_ = 0;
};

Tensor scalar(float v) { return Tensor{{}, {v}}; }

const Tensor& find(const std::vector<ArchiveEntry>& entries,
                   const std::string& name, const std::string& path) {
  for (const auto& e : entries) {
    if (e.name == name) return e.tensor;
  }
  throw FormatError("'" + path + "' has no entry '" + name + "'");
}

void expect_ndim(const Tensor& t, size_t ndim, const std::string& name) {
  if (t.dims.size() != ndim) {
    throw FormatError("entry '" + name + "' has " +
                      std::to_string(t.dims.size()) + " dims, expected " +
                      std::to_string(ndim));
  }
}

}  // namespace

// WAV ------------------------------------------------------------------------

int16_t quantize_pcm16(double sample) {
  const double q = std::round(sample * 32768.0);  // half away from zero
  return static_cast<int16_t>(std::clamp(q, -32768.0, 32767.0));
}

WavAudio wav_read(const std::string& path) {
  const auto bytes = read_file(path);
  Cursor c(bytes, path);
  if (c.get_string(4, "RIFF tag") != "RIFF") {
    throw FormatError("'" + path + "' is not a RIFF file");
  }
  c.get<uint32_t>("RIFF size");
  if (c.get_string(4, "WAVE tag") != "WAVE") {
    throw FormatError("'" + path + "' is not a WAVE file");
  }
  bool have_fmt = false;
  WavAudio audio;
  while (c.remaining() >= 8) {
    const std::string id = c.get_string(4, "chunk id");
    const uint32_t size = c.get<uint32_t>("chunk size");
    if (id == "fmt ") {
      if (size < 16) throw FormatError("'" + path + "' has a short fmt chunk");
      const uint16_t format = c.get<uint16_t>("audio format");
      const uint16_t channels = c.get<uint16_t>("channel count");
      const uint32_t rate = c.get<uint32_t>("sample rate");
      c.get<uint32_t>("byte rate");
      c.get<uint16_t>("block align");
      const uint16_t bits = c.get<uint16_t>("bits per sample");
      c.skip(size - 16 + (size & 1));
      if (format != 1) {
        throw FormatError("'" + path + "' unsupported encoding: format tag " +
                          std::to_string(format) + ", only PCM (1) is read");
      }
      if (channels != 1) {
        throw FormatError("'" + path + "' unsupported format: " +
                          std::to_string(channels) +
                          " channels, only mono is read");
      }
      if (bits != 16) {
        throw FormatError("'" + path + "' unsupported encoding: " +
                          std::to_string(bits) + "-bit samples, only 16-bit");
      }
      if (rate == 0) throw FormatError("'" + path + "' has sample rate 0");
      audio.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) {
        throw FormatError("'" + path + "' has a data chunk before fmt");
      }
      if (size % 2 != 0) {
        throw FormatError("'" + path + "' data chunk size " +
                          std::to_string(size) + " is not a whole sample count");
      }
      const char* p = c.take(size, "data chunk");
      audio.samples.resize(size / 2);
      for (size_t i = 0; i < audio.samples.size(); ++i) {
        int16_t s;
        std::memcpy(&s, p + 2 * i, 2);
        audio.samples[i] = s / 32768.0;
      }
      return audio;
    } else {
      c.skip(size + (size & 1));
    }
  }
  throw FormatError("'" + path + "' has no " +
                    std::string(have_fmt ? "data" : "fmt") + " chunk");
}

void wav_write(const std::string& path, const WavAudio& audio) {
  if (audio.sample_rate <= 0) throw FormatError("wav_write: invalid sample rate");
  const uint32_t data_bytes = static_cast<uint32_t>(audio.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put<uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put<uint32_t>(out, 16);
  put<uint16_t>(out, 1);
  put<uint16_t>(out, 1);
  put<uint32_t>(out, static_cast<uint32_t>(audio.sample_rate));
  put<uint32_t>(out, static_cast<uint32_t>(audio.sample_rate) * 2);
  put<uint16_t>(out, 2);
  put<uint16_t>(out, 16);
  out += "data";
  put<uint32_t>(out, data_bytes);
  for (double s : audio.samples) put<int16_t>(out, quantize_pcm16(s));
  write_file(path, out);
}

// Archives -------------------------------------------------------------------

std::vector<ArchiveEntry> archive_read(const std::string& path) {
  const auto bytes = read_file(path);
  Cursor c(bytes, path);
  if (c.get_string(4, "magic") != std::string(kArchiveMagic, 4)) {
    throw FormatError("'" + path + "' bad magic, expected BMG1");
  }
  const uint32_t count = c.get<uint32_t>("entry count");
  std::vector<ArchiveEntry> entries;
  std::set<std::string> names;
  for (uint32_t e = 0; e < count; ++e) {
    ArchiveEntry entry;
    const uint32_t name_len = c.get<uint32_t>("name length");
    entry.name = c.get_string(name_len, "entry name");
    const uint8_t dtype = c.get<uint8_t>("dtype");
    if (dtype != 0) {
      throw FormatError("'" + path + "' entry '" + entry.name +
                        "' has unsupported dtype " + std::to_string(dtype));
    }
    const uint8_t ndim = c.get<uint8_t>("ndim");
    size_t count_elems = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      const uint32_t dim = c.get<uint32_t>("dims");
      entry.tensor.dims.push_back(static_cast<int>(dim));
      count_elems *= dim;
    }
    const char* p = c.take(4 * count_elems, "tensor payload");
    entry.tensor.data.resize(count_elems);
    std::memcpy(entry.tensor.data.data(), p, 4 * count_elems);
    if (!names.insert(entry.name).second) {
      throw FormatError("'" + path + "' duplicate entry '" + entry.name + "'");
    }
    entries.push_back(std::move(entry));
  }
  if (c.remaining() != 0) {
    throw FormatError("'" + path + "' has " + std::to_string(c.remaining()) +
                      " trailing bytes");
  }
  return entries;
}

void archive_write(const std::string& path,
                   const std::vector<ArchiveEntry>& entries) {
  std::set<std::string> names;
  std::string out(kArchiveMagic, 4);
  put<uint32_t>(out, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) {
      throw FormatError("archive_write: duplicate entry '" + e.name + "'");
    }
    if (e.tensor.dims.size() > 255) {
      throw FormatError("archive_write: entry '" + e.name + "' has too many dims");
    }
    size_t n = 1;
    for (int d : e.tensor.dims) {
      if (d < 0) throw FormatError("archive_write: negative dim in '" + e.name + "'");
      n *= static_cast<size_t>(d);
    }
    if (n != e.tensor.data.size()) {
      throw FormatError("archive_write: entry '" + e.name + "' holds " +
                        std::to_string(e.tensor.data.size()) +
                        " values, dims imply " + std::to_string(n));
    }
    put<uint32_t>(out, static_cast<uint32_t>(e.name.size()));
    out += e.name;
    put<uint8_t>(out, 0);
    put<uint8_t>(out, static_cast<uint8_t>(e.tensor.dims.size()));
    for (int d : e.tensor.dims) put<uint32_t>(out, static_cast<uint32_t>(d));
    out.append(reinterpret_cast<const char*>(e.tensor.data.data()), 4 * n);
  }
  write_file(path, out);
}

// Typed views ----------------------------------------------------------------

void save_basis(const std::string& path, const BasisMatrix& b) {
  Tensor m;
  m.dims = {b.window_len, b.n_basis};
  m.data.assign(b.data.begin(), b.data.end());
  archive_write(path, {{"basis.matrix", std::move(m)},
                       {"basis.hop", scalar(static_cast<float>(b.hop))}});
}

BasisMatrix load_basis(const std::string& path) {
  const auto entries = archive_read(path);
  const Tensor& m = find(entries, "basis.matrix", path);
  const Tensor& hop = find(entries, "basis.hop", path);
  expect_ndim(m, 2, "basis.matrix");
  expect_ndim(hop, 0, "basis.hop");
  BasisMatrix b(m.dims[0], m.dims[1], static_cast<int>(hop.data[0]),
                std::vector<double>(m.data.begin(), m.data.end()));
  b.validate();
  return b;
}

void save_model(const std::string& path, const ModelWeights& w) {
  std::vector<ArchiveEntry> entries;
  Tensor preset;
  preset.dims = {static_cast<int>(w.preset.size())};
  for (unsigned char ch : w.preset) preset.data.push_back(ch);
  entries.push_back({kPresetKey, std::move(preset)});
  for (const auto& [name, t] : w.tensors) entries.push_back({name, t});
  archive_write(path, entries);
}

ModelWeights load_model(const std::string& path) {
  ModelWeights w;
  for (auto& e : archive_read(path)) {
    if (e.name == kPresetKey) {
      for (float ch : e.tensor.data) w.preset.push_back(static_cast<char>(ch));
    } else {
      w.tensors.emplace(std::move(e.name), std::move(e.tensor));
    }
  }
  return w;
}

void save_weight_matrix(const std::string& path, const WeightMatrix& w) {
  Tensor t;
  t.dims = {w.n_basis, w.n_frames};
  t.data.assign(w.data.begin(), w.data.end());
  archive_write(path, {{"weights", std::move(t)}});
}

WeightMatrix load_weight_matrix(const std::string& path) {
  const auto entries = archive_read(path);
  const Tensor& t = find(entries, "weights", path);
  expect_ndim(t, 2, "weights");
  WeightMatrix w(t.dims[0], t.dims[1]);
  std::copy(t.data.begin(), t.data.end(), w.data.begin());
  return w;
}

void save_mel(const std::string& path, const MelSpectrogram& mel) {
  Tensor t;
  t.dims = {mel.n_mels, mel.frames};
  t.data.assign(mel.data.begin(), mel.data.end());
  archive_write(path,
                {{"mel", std::move(t)},
                 {"mel.sample_rate", scalar(static_cast<float>(mel.sample_rate))},
                 {"mel.hop", scalar(static_cast<float>(mel.hop_size))}});
}

MelSpectrogram load_mel(const std::string& path) {
  const auto entries = archive_read(path);
  const Tensor& t = find(entries, "mel", path);
  expect_ndim(t, 2, "mel");
  MelSpectrogram mel;
  mel.n_mels = t.dims[0];
  mel.frames = t.dims[1];
  mel.data.assign(t.data.begin(), t.data.end());
  mel.sample_rate = default_mel_config().sample_rate;
  mel.hop_size = default_mel_config().hop_size;
  for (const auto& e : entries) {
    if (e.name == "mel.sample_rate" && e.tensor.data.size() == 1) {
      mel.sample_rate = static_cast<int>(e.tensor.data[0]);
    } else if (e.name == "mel.hop" && e.tensor.data.size() == 1) {
      mel.hop_size = static_cast<int>(e.tensor.data[0]);
    }
  }
  return mel;
}

}  // namespace bmg
