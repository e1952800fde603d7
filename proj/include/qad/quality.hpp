#pragma once

// Synthetic multi-quality dataset. Every sample is rendered once at full
// quality and then degraded by block-DCT quantization at each configured
// level, so all modalities of a sample are aligned by construction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qad/nn/tensor.hpp"

namespace qad::quality {

/// Quantization strength; level 0 is the raw modality.
struct Modality {
  double level = 0.0;

  bool is_raw() const noexcept { return level == 0.0; }
  /// "raw" or "q<level>", e.g. "q2", "q0.5".
  std::string name() const;
  bool operator==(const Modality&) const = default;
};

/// The first entry must be raw and levels must increase strictly.
void validate_modalities(std::span<const Modality> modalities);
std::vector<Modality> default_modalities();  // {0, 2, 6}

/// Parses "raw" or "q<level>".
Modality parse_modality(const std::string& text);

/// 8x8 quantization weights, rising with spatial frequency (1 + u + v).
double quant_weight(std::size_t u, std::size_t v) noexcept;

/// Coefficient (u, v) is quantized with step level * kQuantBase * quant_weight(u, v).
/// The DC coefficient is left untouched so flat regions keep their value.
inline constexpr double kQuantBase = 0.02;

/// Degrades a [channels, height, width] image with values in [0, 1]. Height
/// and width must be multiples of 8. Level 0 returns the input unchanged.
/// Output values are clipped to [0, 1] and rounded to float.
std::vector<double> degrade(std::span<const double> image, std::size_t channels, std::size_t height,
                            std::size_t width, double level);

struct SynthTaskConfig {
  std::size_t channels = 1;
  std::size_t image_size = 16;
  double background_amplitude = 0.2;  // low-frequency content, class independent
  double texture_amplitude = 0.1;     // high-frequency texture, class 1 only
  double mid_amplitude = 0.07;        // weaker mid-frequency cue, class 1 only
  double noise = 0.03;
  std::size_t train_size = 1024;
  std::size_t val_size = 256;
  std::size_t test_size = 512;
  std::uint64_t seed = 7;

  void validate() const;
  bool operator==(const SynthTaskConfig&) const = default;
};

/// One split. images[m] holds count * C * H * W values for modalities[m].
struct Split {
  std::size_t count = 0;
  std::vector<int> labels;
  std::vector<std::uint64_t> sample_ids;
  std::vector<std::vector<double>> images;
};

struct Dataset {
  SynthTaskConfig config;
  std::vector<Modality> modalities;
  Split train;
  Split val;
  Split test;

  std::size_t image_numel() const noexcept {
    return config.channels * config.image_size * config.image_size;
  }
  nn::Shape image_shape() const { return {config.channels, config.image_size, config.image_size}; }
  const Split& split(const std::string& name) const;
};

enum class SplitKind { train = 0, val = 1, test = 2 };

/// Renders the raw image of one sample; deterministic in (cfg.seed, split, index).
std::vector<double> render_sample(const SynthTaskConfig& cfg, SplitKind split, std::uint64_t index,
                                  int& label);

/// Deterministic in the config; samples are generated in parallel over
/// `threads` workers with per-sample seeds, so the result does not depend on
/// the thread count.
Dataset generate_dataset(const SynthTaskConfig& cfg, std::vector<Modality> modalities,
                         unsigned threads = 1);

/// Degrades each raw image of a split at a level drawn uniformly from
/// [lo, hi] per sample. Models the random-quality test condition.
std::vector<double> random_quality_images(const Dataset& data, const Split& split, double lo,
                                          double hi, std::uint64_t seed,
                                          std::vector<double>* levels = nullptr);

/// Mean squared distortion of modality m against raw over a split.
double mean_distortion(const Dataset& data, const Split& split, std::size_t modality);

struct MultiQualityBatch {
  std::vector<nn::Tensor> inputs;  // one [B, C, H, W] tensor per modality
  std::vector<int> labels;
  std::vector<std::uint64_t> sample_ids;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Mini-batches over one split. Epoch e visits the samples in the order of a
/// permutation seeded by (seed, e); the last batch may be smaller than B.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, const Split& split, std::size_t batch_size, std::uint64_t seed,
                bool shuffle);

  void start_epoch(std::size_t epoch);
  bool next(MultiQualityBatch& batch);
  std::size_t batches_per_epoch() const noexcept;

 private:
  const Dataset* data_;
  const Split* split_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Gathers the given rows of a split for every modality.
MultiQualityBatch gather(const Dataset& data, const Split& split, std::span<const std::size_t> rows);

/// Directory layout: manifest.json plus one binary tensor file per split and
/// modality ("<split>.<modality>.bin") and per split labels ("<split>.labels.bin").
void export_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace qad::quality
