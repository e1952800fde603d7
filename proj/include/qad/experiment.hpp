#pragma once

// Experiment configuration and run orchestration shared by the command line
// tool and the acceptance suite.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qad/bound.hpp"
#include "qad/nn/model.hpp"
#include "qad/quality.hpp"
#include "qad/trainer.hpp"

namespace qad::exp {

inline constexpr const char* kToolkitVersion = "0.3.0";
inline constexpr const char* kMetricsSchema = "qad-metrics/1";
inline constexpr const char* kMetricsHeader = "epoch,split,modality,metric,value";

struct RandomQualityConfig {
  bool enabled = true;
  double lo = 1.0;
  double hi = 6.0;
  std::uint64_t seed = 5;

  bool operator==(const RandomQualityConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "qad";
  quality::SynthTaskConfig data{};
  std::vector<quality::Modality> modalities = quality::default_modalities();
  std::string data_path;  // import this exported dataset instead of generating one
  nn::ModelSpec model = nn::ModelSpec::desk_default();
  train::TrainConfig train{};
  train::LossConfig loss{};
  double bound_temperature = 1.0;
  RandomQualityConfig random_quality{};

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Every key is written, so the output documents the full resolved config.
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

/// Strict: unknown keys and wrongly typed values raise invalid-config naming
/// the key path (e.g. "train.epochs"). Missing keys keep their defaults.
ExperimentConfig from_json(const nlohmann::json& doc);

/// Reads a config file, or the config embedded in a run manifest. A missing
/// file is an invalid-config error naming the path.
ExperimentConfig load_config(const std::filesystem::path& path);

/// "a.b.c=value". The value is parsed as JSON when possible and taken as a
/// string otherwise. Short aliases: alpha, gamma, eta, sigma, variant, epochs,
/// seed.
void apply_override(nlohmann::json& doc, const std::string& assignment);
ExperimentConfig with_overrides(const ExperimentConfig& base, const std::vector<std::string>& assignments);

/// Layer strings: "conv2d:<channels>:<kernel>[:<stride>]", "relu",
/// "max-pool:<window>", "flatten", "dense:<units>".
std::string layer_to_string(const nn::LayerSpec& layer);
nn::LayerSpec parse_layer(const std::string& text);

/// SHA-1 of "blob <size>\0<canonical json>", as git hashes a file.
std::string config_hash(const ExperimentConfig& cfg);
std::string git_blob_sha1(const std::string& content);

quality::Dataset make_dataset(const ExperimentConfig& cfg);

struct RunOutcome {
  std::filesystem::path dir;
  train::TrainResult result;
  train::EvalReport best_test;
  std::vector<bound::BoundReport> bounds;  // raw vs each degraded modality, best checkpoint
  std::optional<train::ModalityMetrics> random_quality;
  nlohmann::ordered_json summary;
  std::string metrics_csv;  // contents of metrics.csv
};

struct RunOptions {
  bool write_checkpoints = true;
  std::function<void(const std::string&)> log;  // progress lines
};

/// Writes manifest.json (before training), metrics.csv, summary.json,
/// best.ckpt and final.ckpt into dir. Nothing is written outside dir.
RunOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                          const RunOptions& options = {});

/// Same computation on an already built dataset, without touching the
/// filesystem.
RunOutcome run_in_memory(const ExperimentConfig& cfg, const quality::Dataset& data, const RunOptions& options = {});

/// One grid axis: dotted key (or alias) and its values as JSON literals.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

GridAxis parse_grid_axis(const std::string& text);  // "alpha=0,0.004"

struct AblationCell {
  std::string id;     // "cell-000"
  std::string label;  // "baseline" when alpha = 0 and gamma = 0, else the assignments
  std::vector<std::string> assignments;
  ExperimentConfig config;
};

/// Cartesian product in axis order (last axis fastest). Empty grid is an
/// invalid-config error.
std::vector<AblationCell> expand_grid(const ExperimentConfig& base, const std::vector<GridAxis>& grid);

/// Runs each cell into dir/<cell id> and writes dir/ablation.csv with one row
/// per (cell, modality) of the best checkpoint's test metrics.
std::vector<RunOutcome> run_ablation(const ExperimentConfig& base, const std::vector<GridAxis>& grid,
                                     const std::filesystem::path& dir, const RunOptions& options = {});

/// Metrics CSV text for a training history (header plus rows).
std::string metrics_csv(const train::TrainResult& result, const std::vector<std::vector<bound::BoundReport>>& bounds,
                        const std::vector<std::string>& degraded_names);

/// Shortest round-trip decimal form, so CSV output is exact and stable.
std::string format_number(double value);

}  // namespace qad::exp
