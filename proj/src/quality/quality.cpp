#include "qad/quality.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "qad/binary_io.hpp"
#include "qad/error.hpp"
#include "qad/rng.hpp"

namespace qad::quality {
namespace {

constexpr std::size_t kBlock = 8;

using Basis = std::array<std::array<double, kBlock>, kBlock>;

// Orthonormal DCT-II basis: basis[k][n] = a(k) cos(pi (2n + 1) k / 16).
const Basis& dct_basis() {
  static const Basis basis = [] {
    Basis b{};
    for (std::size_t k = 0; k < kBlock; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / kBlock) : std::sqrt(2.0 / kBlock);
      for (std::size_t n = 0; n < kBlock; ++n) {
        b[k][n] = scale * std::cos(std::numbers::pi * (2.0 * n + 1.0) * k / (2.0 * kBlock));
      }
    }
    return b;
  }();
  return basis;
}

using Block = std::array<std::array<double, kBlock>, kBlock>;

Block forward_dct(const Block& x) {
  const auto& c = dct_basis();
  Block tmp{}, out{};
  for (std::size_t u = 0; u < kBlock; ++u)
    for (std::size_t n = 0; n < kBlock; ++n) {
      double s = 0.0;
      for (std::size_t m = 0; m < kBlock; ++m) s += c[u][m] * x[m][n];
      tmp[u][n] = s;
    }
  for (std::size_t u = 0; u < kBlock; ++u)
    for (std::size_t v = 0; v < kBlock; ++v) {
      double s = 0.0;
      for (std::size_t n = 0; n < kBlock; ++n) s += tmp[u][n] * c[v][n];
      out[u][v] = s;
    }
  return out;
}

Block inverse_dct(const Block& coef) {
  const auto& c = dct_basis();
  Block tmp{}, out{};
  for (std::size_t m = 0; m < kBlock; ++m)
    for (std::size_t v = 0; v < kBlock; ++v) {
      double s = 0.0;
      for (std::size_t u = 0; u < kBlock; ++u) s += c[u][m] * coef[u][v];
      tmp[m][v] = s;
    }
  for (std::size_t m = 0; m < kBlock; ++m)
    for (std::size_t n = 0; n < kBlock; ++n) {
      double s = 0.0;
      for (std::size_t v = 0; v < kBlock; ++v) s += tmp[m][v] * c[v][n];
      out[m][n] = s;
    }
  return out;
}

double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

const char* split_name(SplitKind kind) {
  switch (kind) {
    case SplitKind::train: return "train";
    case SplitKind::val: return "val";
    case SplitKind::test: return "test";
  }
  return "?";
}

std::size_t split_size(const SynthTaskConfig& cfg, SplitKind kind) {
  switch (kind) {
    case SplitKind::train: return cfg.train_size;
    case SplitKind::val: return cfg.val_size;
    case SplitKind::test: return cfg.test_size;
  }
  return 0;
}

// Adds a*cos(2 pi (fx x + fy y) / S + phase) to every channel.
void add_grating(std::vector<double>& img, const SynthTaskConfig& cfg, double fx, double fy,
                 double phase, double amplitude) {
  const std::size_t s = cfg.image_size;
  const double w = 2.0 * std::numbers::pi / static_cast<double>(s);
  for (std::size_t c = 0; c < cfg.channels; ++c)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        img[(c * s + y) * s + x] += amplitude * std::cos(w * (fx * x + fy * y) + phase);
      }
}

}  // namespace

std::string Modality::name() const {
  if (is_raw()) return "raw";
  std::ostringstream out;
  out << 'q' << level;
  return out.str();
}

Modality parse_modality(const std::string& text) {
  if (text == "raw") return {0.0};
  if (text.size() > 1 && text[0] == 'q') {
    std::size_t used = 0;
    double level = 0.0;
    try {
      level = std::stod(text.substr(1), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == text.size() - 1 && std::isfinite(level) && level > 0.0) return {level};
  }
  fail(ErrorKind::invalid_config, "unknown modality '" + text + "' (expected raw or q<level>)");
}

void validate_modalities(std::span<const Modality> modalities) {
  if (modalities.empty()) fail(ErrorKind::invalid_config, "at least one modality is required");
  if (!modalities[0].is_raw()) fail(ErrorKind::invalid_config, "the first modality must be raw");
  for (std::size_t i = 1; i < modalities.size(); ++i) {
    const double level = modalities[i].level;
    if (!std::isfinite(level) || !(level > modalities[i - 1].level)) {
      fail(ErrorKind::invalid_config, "modality levels must be finite and strictly increasing");
    }
  }
}

std::vector<Modality> default_modalities() { return {{0.0}, {2.0}, {6.0}}; }

double quant_weight(std::size_t u, std::size_t v) noexcept {
  return 1.0 + static_cast<double>(u + v);
}

std::vector<double> degrade(std::span<const double> image, std::size_t channels, std::size_t height,
                            std::size_t width, double level) {
  if (!(level >= 0.0) || !std::isfinite(level)) {
    fail(ErrorKind::invalid_config, "degradation level must be finite and non-negative");
  }
  if (image.size() != channels * height * width) {
    fail(ErrorKind::invalid_input, "image size does not match its shape");
  }
  std::vector<double> out(image.begin(), image.end());
  if (level == 0.0) return out;
  if (height % kBlock != 0 || width % kBlock != 0) {
    fail(ErrorKind::invalid_input, "image sides must be multiples of 8");
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = image.data() + c * height * width;
    double* dst = out.data() + c * height * width;
    for (std::size_t by = 0; by < height; by += kBlock)
      for (std::size_t bx = 0; bx < width; bx += kBlock) {
        Block block{};
        for (std::size_t y = 0; y < kBlock; ++y)
          for (std::size_t x = 0; x < kBlock; ++x) block[y][x] = plane[(by + y) * width + bx + x];
        Block coef = forward_dct(block);
        for (std::size_t u = 0; u < kBlock; ++u)
          for (std::size_t v = 0; v < kBlock; ++v) {
            if (u == 0 && v == 0) continue;
            const double step = level * kQuantBase * quant_weight(u, v);
            coef[u][v] = std::nearbyint(coef[u][v] / step) * step;
          }
        const Block rec = inverse_dct(coef);
        for (std::size_t y = 0; y < kBlock; ++y)
          for (std::size_t x = 0; x < kBlock; ++x) {
            dst[(by + y) * width + bx + x] = to_float(std::clamp(rec[y][x], 0.0, 1.0));
          }
      }
  }
  return out;
}

void SynthTaskConfig::validate() const {
  if (channels == 0 || image_size == 0 || image_size % kBlock != 0) {
    fail(ErrorKind::invalid_config, "image size must be a positive multiple of 8 with at least one channel");
  }
  if (train_size == 0 || val_size == 0 || test_size == 0) {
    fail(ErrorKind::invalid_config, "split sizes must be positive");
  }
  for (double v : {background_amplitude, texture_amplitude, mid_amplitude, noise}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      fail(ErrorKind::invalid_config, "signal amplitudes and noise must be finite and non-negative");
    }
  }
}

const Split& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  fail(ErrorKind::invalid_config, "unknown split '" + name + "'");
}

std::vector<double> render_sample(const SynthTaskConfig& cfg, SplitKind split, std::uint64_t index,
                                  int& label) {
  Rng rng(Rng::derive(Rng::derive(cfg.seed, static_cast<std::uint64_t>(split) + 1), index));
  label = static_cast<int>(rng.below(2));
  const std::size_t s = cfg.image_size;
  std::vector<double> img(cfg.channels * s * s, 0.5);

  // Shared low-frequency background.
  static constexpr std::array<std::array<double, 2>, 3> kLow{{{1, 0}, {0, 1}, {1, 1}}};
  for (const auto& f : kLow) {
    const double a = cfg.background_amplitude * rng.normal() / std::sqrt(3.0);
    add_grating(img, cfg, f[0], f[1], rng.uniform(0.0, 2.0 * std::numbers::pi), a);
  }
  // Class 1 carries a high-frequency texture and a weaker mid-frequency cue,
  // both with random orientation and phase. The draws happen for both classes
  // so the random stream stays aligned.
  const double scale = static_cast<double>(s) / 16.0;
  const double hx = scale * static_cast<double>(5 + rng.below(3));
  const double hy = scale * static_cast<double>(5 + rng.below(3));
  const double hphase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double mx = scale * static_cast<double>(2 + rng.below(2));
  const double my = scale * static_cast<double>(rng.below(3));
  const double mphase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  if (label == 1) {
    add_grating(img, cfg, hx, rng.below(2) ? hy : -hy, hphase, cfg.texture_amplitude);
    add_grating(img, cfg, mx, my, mphase, cfg.mid_amplitude);
  } else {
    (void)rng.below(2);
  }
  for (double& v : img) v = to_float(std::clamp(v + cfg.noise * rng.normal(), 0.0, 1.0));
  return img;
}

Dataset generate_dataset(const SynthTaskConfig& cfg, std::vector<Modality> modalities,
                         unsigned threads) {
  cfg.validate();
  validate_modalities(modalities);
  Dataset data;
  data.config = cfg;
  data.modalities = std::move(modalities);
  const std::size_t numel = data.image_numel();
  const std::size_t s = cfg.image_size;

  for (SplitKind kind : {SplitKind::train, SplitKind::val, SplitKind::test}) {
    Split& split = kind == SplitKind::train ? data.train : kind == SplitKind::val ? data.val : data.test;
    const std::size_t n = split_size(cfg, kind);
    split.count = n;
    split.labels.assign(n, 0);
    split.sample_ids.resize(n);
    split.images.assign(data.modalities.size(), std::vector<double>(n * numel));

    auto work = [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        split.sample_ids[i] = i;
        const auto raw = render_sample(cfg, kind, i, split.labels[i]);
        for (std::size_t m = 0; m < data.modalities.size(); ++m) {
          const auto img = degrade(raw, cfg.channels, s, s, data.modalities[m].level);
          std::copy(img.begin(), img.end(), split.images[m].begin() + static_cast<std::ptrdiff_t>(i * numel));
        }
      }
    };
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, n);
    if (workers == 1) {
      work(0, n);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, n * w / workers, n * (w + 1) / workers);
      for (auto& t : pool) t.join();
    }
  }
  return data;
}

std::vector<double> random_quality_images(const Dataset& data, const Split& split, double lo,
                                          double hi, std::uint64_t seed, std::vector<double>* levels) {
  if (!(lo >= 0.0) || !(hi >= lo) || !std::isfinite(hi)) {
    fail(ErrorKind::invalid_config, "random quality range must satisfy 0 <= lo <= hi");
  }
  const std::size_t numel = data.image_numel();
  const std::size_t s = data.config.image_size;
  std::vector<double> out(split.count * numel);
  if (levels) levels->resize(split.count);
  for (std::size_t i = 0; i < split.count; ++i) {
    Rng rng(Rng::derive(seed, split.sample_ids[i]));
    const double level = rng.uniform(lo, hi);
    if (levels) (*levels)[i] = level;
    std::span<const double> raw(split.images[0].data() + i * numel, numel);
    const auto img = degrade(raw, data.config.channels, s, s, level);
    std::copy(img.begin(), img.end(), out.begin() + static_cast<std::ptrdiff_t>(i * numel));
  }
  return out;
}

double mean_distortion(const Dataset& data, const Split& split, std::size_t modality) {
  (void)data;
  if (modality >= split.images.size()) fail(ErrorKind::invalid_input, "modality index out of range");
  const auto& raw = split.images[0];
  const auto& deg = split.images[modality];
  double total = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) total += (raw[i] - deg[i]) * (raw[i] - deg[i]);
  return split.count == 0 ? 0.0 : total / static_cast<double>(split.count);
}

MultiQualityBatch gather(const Dataset& data, const Split& split, std::span<const std::size_t> rows) {
  MultiQualityBatch batch;
  const std::size_t numel = data.image_numel();
  nn::Shape shape{rows.size()};
  for (std::size_t d : data.image_shape()) shape.push_back(d);
  for (std::size_t m = 0; m < split.images.size(); ++m) {
    nn::Tensor t(shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= split.count) fail(ErrorKind::invalid_input, "batch row out of range");
      std::copy_n(split.images[m].begin() + static_cast<std::ptrdiff_t>(rows[r] * numel), numel,
                  t.values.begin() + static_cast<std::ptrdiff_t>(r * numel));
    }
    batch.inputs.push_back(std::move(t));
  }
  for (std::size_t r : rows) {
    batch.labels.push_back(split.labels[r]);
    batch.sample_ids.push_back(split.sample_ids[r]);
  }
  return batch;
}

BatchIterator::BatchIterator(const Dataset& data, const Split& split, std::size_t batch_size,
                             std::uint64_t seed, bool shuffle)
    : data_(&data), split_(&split), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0 || batch_size > split.count) {
    fail(ErrorKind::invalid_config, "batch size must be between 1 and the split size");
  }
  start_epoch(0);
}

void BatchIterator::start_epoch(std::size_t epoch) {
  order_.resize(split_->count);
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_) {
    Rng rng(Rng::derive(seed_, epoch));
    qad::shuffle(std::span<std::size_t>(order_), rng);
  }
  cursor_ = 0;
}

bool BatchIterator::next(MultiQualityBatch& batch) {
  if (cursor_ >= order_.size()) return false;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  batch = gather(*data_, *split_, std::span<const std::size_t>(order_.data() + cursor_, end - cursor_));
  cursor_ = end;
  return true;
}

std::size_t BatchIterator::batches_per_epoch() const noexcept {
  return (split_->count + batch_size_ - 1) / batch_size_;
}

// ---- export / import ------------------------------------------------------

namespace {

constexpr char kTensorMagic[4] = {'Q', 'A', 'D', 'T'};

void write_values(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims,
                  const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(kTensorMagic, 4);
  io::put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) io::put_u32(out, d);
  for (double v : values) io::put_f64(out, v);
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

std::vector<double> read_values(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kTensorMagic)) {
    fail(ErrorKind::format, path.string() + ": not a tensor file");
  }
  const auto rank = io::get_u32(in, "tensor rank");
  if (rank != dims.size()) fail(ErrorKind::format, path.string() + ": unexpected rank");
  std::size_t total = 1;
  for (auto expected : dims) {
    if (io::get_u32(in, "tensor dims") != expected) fail(ErrorKind::format, path.string() + ": unexpected shape");
    total *= expected;
  }
  std::vector<double> values(total);
  for (double& v : values) v = io::get_f64(in, "tensor data");
  if (in.peek() != std::char_traits<char>::eof()) fail(ErrorKind::format, path.string() + ": trailing bytes");
  return values;
}

}  // namespace

void export_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  const auto& cfg = data.config;
  nlohmann::ordered_json manifest;
  manifest["format"] = "qad-dataset";
  manifest["version"] = 1;
  manifest["config"] = {{"channels", cfg.channels},
                        {"image_size", cfg.image_size},
                        {"background_amplitude", cfg.background_amplitude},
                        {"texture_amplitude", cfg.texture_amplitude},
                        {"mid_amplitude", cfg.mid_amplitude},
                        {"noise", cfg.noise},
                        {"train_size", cfg.train_size},
                        {"val_size", cfg.val_size},
                        {"test_size", cfg.test_size},
                        {"seed", cfg.seed}};
  auto& mods = manifest["modalities"] = nlohmann::ordered_json::array();
  for (const auto& m : data.modalities) mods.push_back({{"name", m.name()}, {"level", m.level}});
  auto& files = manifest["files"] = nlohmann::ordered_json::array();
  for (SplitKind kind : {SplitKind::train, SplitKind::val, SplitKind::test}) {
    const Split& split = data.split(split_name(kind));
    const auto n = static_cast<std::uint32_t>(split.count);
    std::vector<double> labels(split.labels.begin(), split.labels.end());
    const std::string label_file = std::string(split_name(kind)) + ".labels.bin";
    write_values(dir / label_file, {n}, labels);
    files.push_back(label_file);
    for (std::size_t m = 0; m < data.modalities.size(); ++m) {
      const std::string file = std::string(split_name(kind)) + "." + data.modalities[m].name() + ".bin";
      std::vector<std::uint32_t> dims{n};
      for (auto d : data.image_shape()) dims.push_back(static_cast<std::uint32_t>(d));
      write_values(dir / file, dims, split.images[m]);
      files.push_back(file);
    }
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) fail(ErrorKind::io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Dataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::io, "cannot read " + (dir / "manifest.json").string());
  Dataset data;
  try {
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.at("format") != "qad-dataset" || manifest.at("version") != 1) {
      fail(ErrorKind::format, "unsupported dataset manifest");
    }
    const auto& c = manifest.at("config");
    auto& cfg = data.config;
    cfg.channels = c.at("channels").get<std::size_t>();
    cfg.image_size = c.at("image_size").get<std::size_t>();
    cfg.background_amplitude = c.at("background_amplitude").get<double>();
    cfg.texture_amplitude = c.at("texture_amplitude").get<double>();
    cfg.mid_amplitude = c.at("mid_amplitude").get<double>();
    cfg.noise = c.at("noise").get<double>();
    cfg.train_size = c.at("train_size").get<std::size_t>();
    cfg.val_size = c.at("val_size").get<std::size_t>();
    cfg.test_size = c.at("test_size").get<std::size_t>();
    cfg.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& m : manifest.at("modalities")) data.modalities.push_back({m.at("level").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "bad dataset manifest: " + std::string(e.what()));
  }
  data.config.validate();
  validate_modalities(data.modalities);
  for (SplitKind kind : {SplitKind::train, SplitKind::val, SplitKind::test}) {
    Split& split = kind == SplitKind::train ? data.train : kind == SplitKind::val ? data.val : data.test;
    const auto n = static_cast<std::uint32_t>(split_size(data.config, kind));
    split.count = n;
    const auto labels = read_values(dir / (std::string(split_name(kind)) + ".labels.bin"), {n});
    for (double v : labels) {
      if (v != 0.0 && v != 1.0) fail(ErrorKind::format, "labels must be 0 or 1");
      split.labels.push_back(static_cast<int>(v));
    }
    split.sample_ids.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) split.sample_ids[i] = i;
    std::vector<std::uint32_t> dims{n};
    for (auto d : data.image_shape()) dims.push_back(static_cast<std::uint32_t>(d));
    for (const auto& m : data.modalities) {
      split.images.push_back(read_values(dir / (std::string(split_name(kind)) + "." + m.name() + ".bin"), dims));
    }
  }
  return data;
}

}  // namespace qad::quality
