#include "qad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "qad/error.hpp"
#include "qad/metrics.hpp"
#include "qad/rng.hpp"

namespace qad::train {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

std::string_view to_string(CollabVariant variant) noexcept {
  switch (variant) {
    case CollabVariant::hsic: return "hsic";
    case CollabVariant::pairwise: return "pairwise";
    case CollabVariant::center: return "center";
    case CollabVariant::soft_label: return "soft-label";
    case CollabVariant::none: return "none";
  }
  return "?";
}

CollabVariant parse_variant(std::string_view text) {
  for (auto v : {CollabVariant::hsic, CollabVariant::pairwise, CollabVariant::center,
                 CollabVariant::soft_label, CollabVariant::none}) {
    if (text == to_string(v)) return v;
  }
  fail(ErrorKind::invalid_config, "unknown collaborative variant '" + std::string(text) + "'");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail(ErrorKind::invalid_config, "alpha must be >= 0");
  kernel.validate();
  if (!(soft_label_mix >= 0.0 && soft_label_mix <= 1.0)) {
    fail(ErrorKind::invalid_config, "soft_label_mix must lie in [0, 1]");
  }
  if (!(soft_label_temperature > 0.0)) fail(ErrorKind::invalid_config, "soft-label temperature must be positive");
}

namespace {

Var zero(Graph& graph) { return graph.input(Tensor({1}, {0.0})); }

void check_outputs(std::span<const ModalityOutputs> outputs) {
  for (const auto& o : outputs) {
    if (o.taps.size() != outputs[0].taps.size()) fail(ErrorKind::invalid_input, "modalities expose different taps");
    if (o.logits.shape() != outputs[0].logits.shape()) fail(ErrorKind::invalid_input, "modality batch sizes differ");
  }
}

}  // namespace

Var collaborative_hsic(std::span<const ModalityOutputs> outputs, const kernels::KernelConfig& kernel,
                       unsigned threads) {
  if (outputs.empty()) fail(ErrorKind::invalid_input, "no modalities");
  check_outputs(outputs);
  Graph& graph = outputs[0].logits.graph();
  if (outputs[0].logits.shape()[0] < 2) fail(ErrorKind::invalid_input, "HSIC needs a batch of at least two samples");
  Var total = zero(graph);
  if (outputs.size() < 2) return total;
  for (std::size_t l = 0; l < outputs[0].taps.size(); ++l) {
    std::vector<Var> grams;
    for (const auto& o : outputs) grams.push_back(nn::gram_matrix(o.taps[l], kernel, threads));
    for (std::size_t t = 0; t < grams.size(); ++t)
      for (std::size_t r = t + 1; r < grams.size(); ++r) total = nn::sub(total, nn::hsic(grams[t], grams[r]));
  }
  return total;
}

Var pairwise_loss(std::span<const ModalityOutputs> outputs) {
  if (outputs.empty()) fail(ErrorKind::invalid_input, "no modalities");
  check_outputs(outputs);
  Var total = zero(outputs[0].logits.graph());
  for (std::size_t t = 0; t < outputs.size(); ++t)
    for (std::size_t r = t + 1; r < outputs.size(); ++r) {
      total = nn::add(total, nn::mean_row_distance(outputs[t].logits, outputs[r].logits));
    }
  return total;
}

Var collaborative_loss(Graph& graph, std::span<const ModalityOutputs> outputs, std::span<const int> labels,
                       const LossConfig& cfg, unsigned threads) {
  if (outputs.size() < 2 || cfg.variant == CollabVariant::none) return zero(graph);
  switch (cfg.variant) {
    case CollabVariant::hsic: return collaborative_hsic(outputs, cfg.kernel, threads);
    case CollabVariant::pairwise: return pairwise_loss(outputs);
    case CollabVariant::center: {
      // Class-center loss on every tap layer over the stacked modalities.
      check_outputs(outputs);
      std::vector<int> stacked;
      for (std::size_t m = 0; m < outputs.size(); ++m) stacked.insert(stacked.end(), labels.begin(), labels.end());
      Var total = zero(graph);
      for (std::size_t l = 0; l < outputs[0].taps.size(); ++l) {
        std::vector<Var> parts;
        for (const auto& o : outputs) parts.push_back(o.taps[l]);
        total = nn::add(total, nn::class_center_loss(nn::concat_rows(parts), stacked));
      }
      return total;
    }
    case CollabVariant::soft_label: {
      // Targets mix the one-hot label with the softened mean prediction of all
      // modalities; the targets are constants.
      check_outputs(outputs);
      const auto& shape = outputs[0].logits.shape();
      const std::size_t b = shape[0], k = shape[1];
      if (labels.size() != b) fail(ErrorKind::invalid_input, "label count does not match the batch");
      Tensor mean_logits(shape);
      for (const auto& o : outputs)
        for (std::size_t i = 0; i < b * k; ++i) mean_logits.values[i] += o.logits.value().values[i] / outputs.size();
      Tensor targets = nn::softmax_temperature(mean_logits, cfg.soft_label_temperature);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < k; ++c) {
          const double onehot = labels[i] == static_cast<int>(c) ? 1.0 : 0.0;
          double& t = targets.values[i * k + c];
          t = cfg.soft_label_mix * onehot + (1.0 - cfg.soft_label_mix) * t;
        }
      Var total = zero(graph);
      for (const auto& o : outputs) {
        total = nn::add(total, nn::soft_cross_entropy(o.logits, targets, cfg.soft_label_temperature));
      }
      return nn::scale(total, 1.0 / static_cast<double>(outputs.size()));
    }
    case CollabVariant::none: break;
  }
  return zero(graph);
}

std::vector<ModalityOutputs> forward_modalities(const nn::ModelSpec& spec, Graph& graph, nn::ParameterSet& params,
                                                std::span<const Tensor> inputs, bool pool_taps) {
  if (inputs.empty()) fail(ErrorKind::invalid_input, "no modality inputs");
  const Shape& shape = inputs[0].shape;
  if (shape.empty()) fail(ErrorKind::invalid_input, "modality input has no batch dimension");
  const std::size_t b = shape[0];
  Shape stacked_shape = shape;
  stacked_shape[0] = b * inputs.size();
  Tensor stacked(stacked_shape);
  std::size_t offset = 0;
  for (const auto& x : inputs) {
    if (x.shape != shape) fail(ErrorKind::invalid_input, "modality inputs differ in shape");
    std::copy(x.values.begin(), x.values.end(), stacked.values.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += x.numel();
  }
  const auto result = nn::forward(spec, graph, params, stacked);

  std::vector<Var> taps;
  for (const auto& [layer, tap] : result.taps) {
    if (pool_taps && tap.feature_shape.size() == 3) {
      Shape full{stacked_shape[0]};
      full.insert(full.end(), tap.feature_shape.begin(), tap.feature_shape.end());
      taps.push_back(nn::spatial_mean(nn::reshape(tap.flat, full)));
    } else {
      taps.push_back(tap.flat);
    }
  }
  std::vector<ModalityOutputs> outputs(inputs.size());
  for (std::size_t m = 0; m < inputs.size(); ++m) {
    outputs[m].logits = nn::slice_rows(result.logits, m * b, (m + 1) * b);
    for (const Var& t : taps) outputs[m].taps.push_back(nn::slice_rows(t, m * b, (m + 1) * b));
  }
  return outputs;
}

LossTerms qad_loss(const nn::ModelSpec& spec, Graph& graph, nn::ParameterSet& params,
                   std::span<const Tensor> inputs, std::span<const int> labels, const LossConfig& cfg,
                   unsigned threads) {
  cfg.validate();
  LossTerms terms;
  terms.outputs = forward_modalities(spec, graph, params, inputs, cfg.pool_taps);
  if (labels.size() != inputs[0].shape[0]) fail(ErrorKind::invalid_input, "label count does not match the batch");
  std::vector<int> stacked;
  for (std::size_t m = 0; m < inputs.size(); ++m) stacked.insert(stacked.end(), labels.begin(), labels.end());
  std::vector<Var> logits;
  for (const auto& o : terms.outputs) logits.push_back(o.logits);
  terms.classification = nn::cross_entropy(nn::concat_rows(logits), stacked);
  if (cfg.alpha == 0.0 || cfg.variant == CollabVariant::none || inputs.size() < 2) {
    terms.collaborative = zero(graph);
    terms.total = terms.classification;
  } else {
    terms.collaborative = collaborative_loss(graph, terms.outputs, labels, cfg, threads);
    terms.total = nn::add(terms.classification, nn::scale(terms.collaborative, cfg.alpha));
  }
  return terms;
}

Var awp_objective(const nn::ModelSpec& spec, Graph& graph, nn::ParameterSet& params,
                  std::span<const Tensor> inputs, std::span<const int> labels, awp::Objective objective) {
  const auto outputs = forward_modalities(spec, graph, params, inputs, false);
  if (objective == awp::Objective::cross_entropy) {
    std::vector<int> stacked;
    std::vector<Var> logits;
    for (const auto& o : outputs) {
      stacked.insert(stacked.end(), labels.begin(), labels.end());
      logits.push_back(o.logits);
    }
    return nn::cross_entropy(nn::concat_rows(logits), stacked);
  }
  if (outputs.size() < 2) fail(ErrorKind::invalid_config, "the KL objective needs a degraded modality");
  Var total = zero(graph);
  for (std::size_t m = 1; m < outputs.size(); ++m) {
    total = nn::add(total, nn::kl_divergence(outputs[0].logits, outputs[m].logits));
  }
  return nn::scale(total, 1.0 / static_cast<double>(outputs.size() - 1));
}

// ---- evaluation -----------------------------------------------------------

const ModalityMetrics& EvalReport::at(std::string_view modality) const {
  for (const auto& m : modalities) {
    if (m.modality == modality) return m;
  }
  fail(ErrorKind::invalid_input, "no metrics for modality '" + std::string(modality) + "'");
}

double EvalReport::min_auc() const {
  if (modalities.empty()) fail(ErrorKind::undefined_metric, "empty report");
  double worst = modalities[0].auc;
  for (const auto& m : modalities) worst = std::min(worst, m.auc);
  return worst;
}

std::vector<double> predict_scores(const nn::ModelSpec& spec, const nn::ParameterSet& params,
                                   std::span<const double> images, std::size_t count, const Shape& image_shape,
                                   unsigned threads, std::vector<double>* logits) {
  const std::size_t numel = nn::numel(image_shape);
  if (images.size() != count * numel) fail(ErrorKind::invalid_input, "image block does not match its count");
  const std::size_t k = spec.num_classes;
  std::vector<double> scores(count);
  std::vector<double> raw_logits(count * k);
  constexpr std::size_t kChunk = 256;
  const std::size_t chunks = (count + kChunk - 1) / kChunk;
  // Forward passes on a non-recording graph only read the parameters.
  auto& shared = const_cast<nn::ParameterSet&>(params);
  auto run = [&](std::size_t first, std::size_t last) {
    for (std::size_t c = first; c < last; ++c) {
      const std::size_t begin = c * kChunk, end = std::min(count, begin + kChunk);
      Shape shape{end - begin};
      shape.insert(shape.end(), image_shape.begin(), image_shape.end());
      Tensor x(shape, std::vector<double>(images.begin() + static_cast<std::ptrdiff_t>(begin * numel),
                                          images.begin() + static_cast<std::ptrdiff_t>(end * numel)));
      Graph graph(false);
      const auto out = nn::forward(spec, graph, shared, x);
      const auto& z = out.logits.value().values;
      std::copy(z.begin(), z.end(), raw_logits.begin() + static_cast<std::ptrdiff_t>(begin * k));
      for (std::size_t i = begin; i < end; ++i) {
        const auto p = nn::softmax_temperature(Tensor({1, k}, {z.begin() + (i - begin) * k, z.begin() + (i - begin + 1) * k}), 1.0);
        scores[i] = p.values[1];
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(chunks, 1));
  if (workers <= 1) {
    run(0, chunks);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, chunks * w / workers, chunks * (w + 1) / workers);
    for (auto& t : pool) t.join();
  }
  if (logits) *logits = std::move(raw_logits);
  return scores;
}

EvalReport evaluate(const nn::ModelSpec& spec, const nn::ParameterSet& params, const quality::Dataset& data,
                    const quality::Split& split, std::span<const std::size_t> modalities, unsigned threads) {
  EvalReport report;
  if (modalities.empty()) return report;
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  const std::size_t k = spec.num_classes;
  for (std::size_t m : modalities) {
    if (m >= split.images.size()) fail(ErrorKind::invalid_input, "modality index out of range");
    std::vector<double> logits;
    const auto scores = predict_scores(spec, params, split.images[m], split.count, data.image_shape(), threads, &logits);
    ModalityMetrics metrics;
    metrics.modality = data.modalities[m].name();
    metrics.count = split.count;
    metrics.acc = metrics::accuracy(scores, split.labels);
    metrics.auc = metrics::auc(scores, split.labels);
    double loss = 0.0;
    for (std::size_t i = 0; i < split.count; ++i) {
      const double* z = logits.data() + i * k;
      const double top = *std::max_element(z, z + k);
      double denom = 0.0;
      for (std::size_t c = 0; c < k; ++c) denom += std::exp(z[c] - top);
      loss += top + std::log(denom) - z[split.labels[i]];
    }
    metrics.loss = loss / static_cast<double>(split.count);
    metrics.distortion = quality::mean_distortion(data, split, m);
    report.modalities.push_back(metrics);
    pooled_scores.insert(pooled_scores.end(), scores.begin(), scores.end());
    pooled_labels.insert(pooled_labels.end(), split.labels.begin(), split.labels.end());
  }
  report.pooled_acc = metrics::accuracy(pooled_scores, pooled_labels);
  report.pooled_auc = metrics::auc(pooled_scores, pooled_labels);
  return report;
}

// ---- training -------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 2) fail(ErrorKind::invalid_config, "batch size must be at least 2");
  if (evals_per_epoch == 0) fail(ErrorKind::invalid_config, "evals_per_epoch must be positive");
  if (awp.steps == 0) fail(ErrorKind::invalid_config, "awp steps must be at least 1");
  adam.validate();
  schedule.validate();
  awp.validate();
}

TrainResult train(const nn::ModelSpec& spec, const quality::Dataset& data, const TrainConfig& train_cfg,
                  const LossConfig& loss_cfg, const TrainObserver& observer) {
  train_cfg.validate();
  loss_cfg.validate();
  spec.validate();
  if (data.train.count % train_cfg.batch_size == 1) {
    fail(ErrorKind::invalid_config, "training split would leave a final batch of one sample");
  }
  if (train_cfg.awp.enabled() && train_cfg.awp.objective == awp::Objective::kl &&
      (!train_cfg.all_modalities || data.modalities.size() < 2)) {
    fail(ErrorKind::invalid_config, "the KL objective needs a degraded training modality");
  }

  TrainResult result;
  auto params = nn::init_parameters(spec, Rng::derive(train_cfg.seed, 0));
  result.initial = params;
  optim::Adam adam(params, train_cfg.adam);
  quality::BatchIterator batches(data, data.train, train_cfg.batch_size, Rng::derive(train_cfg.seed, 1), true);
  auto state = awp::make_state(params, train_cfg.awp);

  std::vector<std::size_t> all_modalities(data.modalities.size());
  for (std::size_t m = 0; m < all_modalities.size(); ++m) all_modalities[m] = m;
  const std::size_t trained = train_cfg.all_modalities ? data.modalities.size() : 1;
  const std::vector<std::size_t> selection(all_modalities.begin(), all_modalities.begin() + static_cast<std::ptrdiff_t>(trained));

  const std::size_t per_epoch = batches.batches_per_epoch();
  const std::size_t total_steps = train_cfg.epochs * per_epoch;
  double sum_total = 0.0, sum_cls = 0.0, sum_col = 0.0;
  std::size_t since = 0;
  double best_acc = -1.0;
  double lr = 0.0;

  auto record = [&](double epoch, std::size_t step) {
    TrainLog log;
    log.epoch = epoch;
    log.step = step;
    if (since > 0) {
      log.loss_total = sum_total / since;
      log.loss_classification = sum_cls / since;
      log.loss_collaborative = sum_col / since;
    }
    log.lr = lr;
    log.val = evaluate(spec, params, data, data.val, all_modalities, train_cfg.threads);
    log.test = evaluate(spec, params, data, data.test, all_modalities, train_cfg.threads);
    const double acc = *evaluate(spec, params, data, data.val, selection, train_cfg.threads).pooled_acc;
    if (acc > best_acc) {
      best_acc = acc;
      result.best = params;
      result.best_index = result.history.size();
    }
    sum_total = sum_cls = sum_col = 0.0;
    since = 0;
    result.history.push_back(std::move(log));
    if (observer) observer(result.history.back(), params);
  };

  record(0.0, 0);
  std::size_t step = 0;
  quality::MultiQualityBatch batch;
  for (std::size_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    batches.start_epoch(epoch);
    std::size_t index = 0;
    std::size_t next_eval = 1;
    while (batches.next(batch)) {
      const std::span<const Tensor> inputs(batch.inputs.data(), trained);

      if (train_cfg.awp.enabled()) {
        awp::reset(state);
        for (std::size_t k = 0; k < train_cfg.awp.steps; ++k) {
          if (k > 0) awp::apply(params, state);
          params.zero_grad();
          Graph graph;
          graph.backward(awp_objective(spec, graph, params, inputs, batch.labels, train_cfg.awp.objective));
          ++result.stats.awp_gradient_evaluations;
          if (k > 0) awp::revert(params, state);
          awp::awp_ascent(params, state);
          ++result.stats.ball_checks;
          result.stats.ball_violations += awp::ball_violations(state, params);
          result.stats.max_ball_ratio = std::max(result.stats.max_ball_ratio, awp::max_ball_ratio(state, params));
        }
        awp::apply(params, state);
      }

      params.zero_grad();
      Graph graph;
      const auto terms = qad_loss(spec, graph, params, inputs, batch.labels, loss_cfg, train_cfg.threads);
      const double total = terms.total.item();
      const double cls = terms.classification.item();
      const double col = terms.collaborative.item();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " batch " << index << " (classification " << cls
            << ", collaborative " << col << ", lr " << lr << ")";
        fail(ErrorKind::numeric, msg.str());
      }
      graph.backward(terms.total);
      lr = optim::one_cycle_lr(train_cfg.adam.lr, train_cfg.schedule, step, total_steps);
      adam.step(params, lr);
      if (train_cfg.awp.enabled()) awp::revert(params, state);
      for (const auto& p : params) {
        if (!std::all_of(p.tensor.values.begin(), p.tensor.values.end(), [](double v) { return std::isfinite(v); })) {
          std::ostringstream msg;
          msg << "parameter " << p.name << " became non-finite at epoch " << epoch << " batch " << index
              << " (loss " << total << ", lr " << lr << ")";
          fail(ErrorKind::numeric, msg.str());
        }
      }

      sum_total += total;
      sum_cls += cls;
      sum_col += col;
      ++since;
      ++step;
      ++index;
      ++result.stats.batches;
      // Evaluate after the batch that completes each 1/k of the epoch.
      if (index * train_cfg.evals_per_epoch >= next_eval * per_epoch) {
        while (index * train_cfg.evals_per_epoch >= next_eval * per_epoch) ++next_eval;
        record(static_cast<double>(epoch) + static_cast<double>(index) / static_cast<double>(per_epoch), step);
      }
    }
  }
  result.stats.awp_ascent_steps = state.ascent_steps;
  result.stats.awp_projections = state.projections;
  result.final_params = std::move(params);
  return result;
}

}  // namespace qad::train
