#pragma once

// Loss composition, the QAD training loop and per-modality evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qad/awp.hpp"
#include "qad/kernels.hpp"
#include "qad/nn/graph.hpp"
#include "qad/nn/model.hpp"
#include "qad/optim.hpp"
#include "qad/quality.hpp"

namespace qad::train {

enum class CollabVariant { hsic, pairwise, center, soft_label, none };

std::string_view to_string(CollabVariant variant) noexcept;
CollabVariant parse_variant(std::string_view text);

struct LossConfig {
  double alpha = 0.004;
  CollabVariant variant = CollabVariant::hsic;
  kernels::KernelConfig kernel{};  // gaussian-rbf, sigma 6
  bool pool_taps = false;          // spatially average conv taps before kerneling
  double soft_label_mix = 0.5;     // weight of the one-hot target
  double soft_label_temperature = 2.0;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// Per-modality network outputs for one batch.
struct ModalityOutputs {
  nn::Var logits;
  std::vector<nn::Var> taps;  // flattened [B, F], in tap-layer order
};

/// -sum over unordered modality pairs (t < r) and tap layers of
/// hsic_biased(K(Z_t), K(Z_r)). Needs B >= 2.
nn::Var collaborative_hsic(std::span<const ModalityOutputs> outputs, const kernels::KernelConfig& kernel,
                           unsigned threads = 1);

/// Sum over unordered pairs of the mean row distance between logits.
nn::Var pairwise_loss(std::span<const ModalityOutputs> outputs);

/// Collaborative term for the configured variant; an empty pair set (M = 1)
/// or variant none gives a zero constant.
nn::Var collaborative_loss(nn::Graph& graph, std::span<const ModalityOutputs> outputs,
                           std::span<const int> labels, const LossConfig& cfg, unsigned threads = 1);

struct LossTerms {
  nn::Var total;
  nn::Var classification;
  nn::Var collaborative;
  std::vector<ModalityOutputs> outputs;
};

/// Forwards the M modality tensors of a batch as one stacked [M*B, ...] batch.
std::vector<ModalityOutputs> forward_modalities(const nn::ModelSpec& spec, nn::Graph& graph,
                                                nn::ParameterSet& params,
                                                std::span<const nn::Tensor> inputs, bool pool_taps);

/// Mean cross-entropy over all M*B pairs plus alpha times the collaborative term.
LossTerms qad_loss(const nn::ModelSpec& spec, nn::Graph& graph, nn::ParameterSet& params,
                   std::span<const nn::Tensor> inputs, std::span<const int> labels,
                   const LossConfig& cfg, unsigned threads = 1);

// ---- evaluation -----------------------------------------------------------

struct ModalityMetrics {
  std::string modality;
  std::size_t count = 0;
  double acc = 0.0;
  double auc = 0.0;
  double loss = 0.0;        // mean cross-entropy
  double distortion = 0.0;  // mean squared distance to raw per image
};

struct EvalReport {
  std::vector<ModalityMetrics> modalities;
  std::optional<double> pooled_acc;
  std::optional<double> pooled_auc;

  const ModalityMetrics& at(std::string_view modality) const;
  /// Lowest AUC over the evaluated modalities.
  double min_auc() const;
};

/// P(class 1) for every sample of one image block [n * C * H * W].
std::vector<double> predict_scores(const nn::ModelSpec& spec, const nn::ParameterSet& params,
                                   std::span<const double> images, std::size_t count,
                                   const nn::Shape& image_shape, unsigned threads = 1,
                                   std::vector<double>* logits = nullptr);

/// Metrics for the listed modality indices of a split plus pooled ACC/AUC
/// over their concatenated scores. An empty list gives an empty report.
EvalReport evaluate(const nn::ModelSpec& spec, const nn::ParameterSet& params,
                    const quality::Dataset& data, const quality::Split& split,
                    std::span<const std::size_t> modalities, unsigned threads = 1);

// ---- training -------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 64;
  optim::AdamConfig adam{};
  optim::OneCycleConfig schedule{};
  awp::AwpConfig awp{};
  std::size_t evals_per_epoch = 1;
  bool all_modalities = true;  // false trains on raw only
  std::uint64_t seed = 1;
  unsigned threads = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainLog {
  double epoch = 0.0;  // fractional when evaluating several times per epoch
  std::size_t step = 0;
  double loss_total = 0.0;  // means over the batches since the previous record
  double loss_classification = 0.0;
  double loss_collaborative = 0.0;
  double lr = 0.0;
  EvalReport val;
  EvalReport test;
};

struct TrainStats {
  std::size_t batches = 0;
  std::size_t awp_gradient_evaluations = 0;
  std::size_t awp_ascent_steps = 0;
  std::size_t awp_projections = 0;
  std::size_t ball_checks = 0;
  std::size_t ball_violations = 0;
  double max_ball_ratio = 0.0;
};

struct TrainResult {
  nn::ParameterSet initial;
  nn::ParameterSet final_params;
  nn::ParameterSet best;
  std::size_t best_index = 0;  // into history
  std::vector<TrainLog> history;
  TrainStats stats;
};

/// Called after each evaluation record with the parameters it evaluated.
using TrainObserver = std::function<void(const TrainLog&, const nn::ParameterSet&)>;

/// Algorithm per batch: (1) gradient of the AWP objective at theta,
/// (2) ascent step, (3) theta += phi, (4-5) forward with taps and qad_loss,
/// (6) backward and optimizer step, (7) theta -= phi. Evaluates before the
/// first batch and at the configured cadence; the best record by pooled
/// validation accuracy is kept.
TrainResult train(const nn::ModelSpec& spec, const quality::Dataset& data, const TrainConfig& train_cfg,
                  const LossConfig& loss_cfg, const TrainObserver& observer = {});

/// Loss maximized by the AWP inner step on a batch.
nn::Var awp_objective(const nn::ModelSpec& spec, nn::Graph& graph, nn::ParameterSet& params,
                      std::span<const nn::Tensor> inputs, std::span<const int> labels,
                      awp::Objective objective);

}  // namespace qad::train
