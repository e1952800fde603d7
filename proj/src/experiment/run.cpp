#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "qad/error.hpp"
#include "qad/experiment.hpp"
#include "qad/metrics.hpp"
#include "qad/nn/checkpoint.hpp"

namespace qad::exp {

using nlohmann::ordered_json;

namespace {

constexpr const char* kManifestSchema = "qad-manifest/1";

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

ordered_json metrics_json(const train::ModalityMetrics& m) {
  ordered_json j;
  j["modality"] = m.modality;
  j["count"] = m.count;
  j["acc"] = m.acc;
  j["auc"] = m.auc;
  j["loss"] = m.loss;
  j["distortion"] = m.distortion;
  return j;
}

ordered_json report_json(const train::EvalReport& r) {
  ordered_json j;
  j["modalities"] = ordered_json::array();
  for (const auto& m : r.modalities) j["modalities"].push_back(metrics_json(m));
  if (r.pooled_acc) j["pooled_acc"] = *r.pooled_acc;
  if (r.pooled_auc) j["pooled_auc"] = *r.pooled_auc;
  if (!r.modalities.empty()) j["lowest_modality_auc"] = r.min_auc();
  return j;
}

ordered_json bound_json(const bound::BoundReport& b, const std::string& degraded) {
  ordered_json j;
  j["pair"] = {"raw", degraded};
  j["temperature"] = b.temperature;
  j["n"] = b.n;
  j["lhs"] = b.lhs;
  j["term_cls"] = b.term_cls;
  j["term_col"] = b.term_col;
  j["term_const"] = b.term_const;
  j["computable_sum"] = b.computable_sum();
  j["holds"] = b.holds();
  j["partial"] = b.partial;
  j["omitted"] = {"rademacher_complexity", "confidence_term"};
  j["pointwise_checked"] = b.pointwise_checked;
  return j;
}

std::vector<bound::BoundReport> bounds_for(const ExperimentConfig& cfg, const nn::ParameterSet& params,
                                           const quality::Dataset& data) {
  std::vector<bound::BoundReport> out;
  for (std::size_t m = 1; m < data.modalities.size(); ++m) {
    out.push_back(bound::bound_terms(cfg.model, params, data, data.test, 0, m, cfg.bound_temperature,
                                     cfg.train.threads));
  }
  return out;
}

train::ModalityMetrics random_quality_metrics(const ExperimentConfig& cfg, const nn::ParameterSet& params,
                                              const quality::Dataset& data) {
  const auto& split = data.test;
  const auto images = quality::random_quality_images(data, split, cfg.random_quality.lo, cfg.random_quality.hi,
                                                     cfg.random_quality.seed);
  std::vector<double> logits;
  const auto scores =
      train::predict_scores(cfg.model, params, images, split.count, data.image_shape(), cfg.train.threads, &logits);
  train::ModalityMetrics m;
  m.modality = "random";
  m.count = split.count;
  m.acc = metrics::accuracy(scores, split.labels);
  m.auc = metrics::auc(scores, split.labels);
  const std::size_t k = cfg.model.num_classes;
  double loss = 0.0;
  for (std::size_t i = 0; i < split.count; ++i) {
    const double* row = logits.data() + i * k;
    double top = row[0];
    for (std::size_t c = 1; c < k; ++c) top = std::max(top, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - top);
    loss += top + std::log(z) - row[split.labels[i]];
  }
  m.loss = loss / static_cast<double>(split.count);
  double distortion = 0.0;
  const auto& raw = split.images[0];
  for (std::size_t i = 0; i < raw.size(); ++i) distortion += (raw[i] - images[i]) * (raw[i] - images[i]);
  m.distortion = distortion / static_cast<double>(split.count);
  return m;
}

}  // namespace

quality::Dataset make_dataset(const ExperimentConfig& cfg) {
  if (cfg.data_path.empty()) return quality::generate_dataset(cfg.data, cfg.modalities, cfg.train.threads);
  auto data = quality::import_dataset(cfg.data_path);
  if (!(data.config == cfg.data) || data.modalities != cfg.modalities) {
    fail(ErrorKind::invalid_config, "data.path: dataset at " + cfg.data_path + " does not match the data config");
  }
  return data;
}

std::string metrics_csv(const train::TrainResult& result, const std::vector<std::vector<bound::BoundReport>>& bounds,
                        const std::vector<std::string>& degraded_names) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  auto row = [&](const std::string& epoch, const char* split, const std::string& modality, const char* metric,
                 double value) {
    out << epoch << ',' << split << ',' << modality << ',' << metric << ',' << format_number(value) << '\n';
  };
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    const auto& log = result.history[i];
    const std::string epoch = format_number(log.epoch);
    if (log.step > 0) {
      row(epoch, "train", "all", "loss_total", log.loss_total);
      row(epoch, "train", "all", "loss_classification", log.loss_classification);
      row(epoch, "train", "all", "loss_collaborative", log.loss_collaborative);
      row(epoch, "train", "all", "lr", log.lr);
    }
    for (const auto* split : {"val", "test"}) {
      const auto& report = std::string(split) == "val" ? log.val : log.test;
      for (const auto& m : report.modalities) {
        row(epoch, split, m.modality, "acc", m.acc);
        row(epoch, split, m.modality, "auc", m.auc);
        row(epoch, split, m.modality, "loss", m.loss);
      }
      if (report.pooled_acc) row(epoch, split, "pooled", "acc", *report.pooled_acc);
      if (report.pooled_auc) row(epoch, split, "pooled", "auc", *report.pooled_auc);
    }
    if (i < bounds.size()) {
      for (std::size_t b = 0; b < bounds[i].size(); ++b) {
        const auto& r = bounds[i][b];
        const auto& name = degraded_names.at(b);
        row(epoch, "test", name, "bound_lhs", r.lhs);
        row(epoch, "test", name, "bound_term_cls", r.term_cls);
        row(epoch, "test", name, "bound_term_col", r.term_col);
        row(epoch, "test", name, "bound_term_const", r.term_const);
        row(epoch, "test", name, "bound_computable_sum", r.computable_sum());
      }
    }
  }
  return out.str();
}

RunOutcome run_in_memory(const ExperimentConfig& cfg, const quality::Dataset& data, const RunOptions& options) {
  cfg.validate();
  RunOutcome outcome;
  std::vector<std::vector<bound::BoundReport>> per_eval;
  std::vector<std::string> degraded;
  for (std::size_t m = 1; m < data.modalities.size(); ++m) degraded.push_back(data.modalities[m].name());

  auto observer = [&](const train::TrainLog& log, const nn::ParameterSet& params) {
    per_eval.push_back(bounds_for(cfg, params, data));
    if (options.log) {
      std::ostringstream line;
      line << "epoch " << format_number(log.epoch) << " step " << log.step;
      if (log.step > 0) line << " loss " << log.loss_total;
      line << " val_acc " << *log.val.pooled_acc << " test_auc";
      for (const auto& m : log.test.modalities) line << ' ' << m.modality << '=' << m.auc;
      options.log(line.str());
    }
  };
  outcome.result = train::train(cfg.model, data, cfg.train, cfg.loss, observer);
  const auto& result = outcome.result;

  std::vector<std::size_t> all(data.modalities.size());
  for (std::size_t m = 0; m < all.size(); ++m) all[m] = m;
  outcome.best_test = train::evaluate(cfg.model, result.best, data, data.test, all, cfg.train.threads);
  outcome.bounds = bounds_for(cfg, result.best, data);
  if (cfg.random_quality.enabled) outcome.random_quality = random_quality_metrics(cfg, result.best, data);

  auto& s = outcome.summary;
  s["name"] = cfg.name;
  s["config_hash"] = config_hash(cfg);
  s["metrics_schema"] = kMetricsSchema;
  const auto& best_log = result.history.at(result.best_index);
  s["best"]["index"] = result.best_index;
  s["best"]["epoch"] = best_log.epoch;
  s["best"]["step"] = best_log.step;
  s["best"]["selection"] = cfg.train.all_modalities ? "pooled validation accuracy over all modalities"
                                                     : "validation accuracy on raw";
  s["best"]["val"] = report_json(best_log.val);
  s["test"] = report_json(outcome.best_test);
  s["final_test"] = report_json(result.history.back().test);
  if (outcome.random_quality) {
    auto rq = metrics_json(*outcome.random_quality);
    rq["lo"] = cfg.random_quality.lo;
    rq["hi"] = cfg.random_quality.hi;
    s["random_quality"] = rq;
  }
  s["bounds"] = ordered_json::array();
  for (std::size_t b = 0; b < outcome.bounds.size(); ++b) s["bounds"].push_back(bound_json(outcome.bounds[b], degraded[b]));

  // Trend diagnostic: rank correlation of term_col with the evaluation epoch.
  ordered_json trend = ordered_json::object();
  if (per_eval.size() >= 3) {
    std::vector<double> epochs;
    for (const auto& log : result.history) epochs.push_back(log.epoch);
    for (std::size_t b = 0; b < degraded.size(); ++b) {
      std::vector<double> cols;
      for (const auto& reports : per_eval) cols.push_back(reports[b].term_col);
      const double rho = bound::spearman(epochs, cols);
      if (std::isfinite(rho)) trend[degraded[b]] = rho;
      else trend[degraded[b]] = nullptr;
    }
  }
  s["term_col_spearman_vs_epoch"] = trend;

  const auto& st = result.stats;
  auto& a = s["awp"];
  a["enabled"] = cfg.train.awp.enabled();
  a["batches"] = st.batches;
  a["gradient_evaluations"] = st.awp_gradient_evaluations;
  a["ascent_steps"] = st.awp_ascent_steps;
  a["projections"] = st.awp_projections;
  a["ball_checks"] = st.ball_checks;
  a["ball_violations"] = st.ball_violations;
  a["max_ball_ratio"] = st.max_ball_ratio;
  const auto csv = metrics_csv(result, per_eval, degraded);
  std::size_t rows = 0;
  for (char c : csv) rows += c == '\n';
  outcome.summary["metrics_csv_rows"] = rows - 1;
  outcome.metrics_csv = csv;
  return outcome;
}

RunOutcome run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir, const RunOptions& options) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create run directory " + dir.string() + ": " + ec.message());

  const auto started = std::chrono::steady_clock::now();
  ordered_json manifest;
  manifest["schema"] = kManifestSchema;
  manifest["toolkit_version"] = kToolkitVersion;
  manifest["config_hash"] = config_hash(cfg);
  manifest["config"] = to_json(cfg);
  manifest["seeds"]["data"] = cfg.data.seed;
  manifest["seeds"]["train"] = cfg.train.seed;
  manifest["seeds"]["random_quality"] = cfg.random_quality.seed;
  manifest["metrics_schema"] = kMetricsSchema;
  manifest["outputs"]["manifest"] = "manifest.json";
  manifest["outputs"]["metrics"] = "metrics.csv";
  manifest["outputs"]["summary"] = "summary.json";
  if (options.write_checkpoints) {
    manifest["outputs"]["best_checkpoint"] = "best.ckpt";
    manifest["outputs"]["final_checkpoint"] = "final.ckpt";
  }
  manifest["status"] = "running";
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  RunOutcome outcome;
  try {
    const auto data = make_dataset(cfg);
    outcome = run_in_memory(cfg, data, options);
    write_text(dir / "metrics.csv", outcome.metrics_csv);
    write_text(dir / "summary.json", outcome.summary.dump(2) + "\n");
    if (options.write_checkpoints) {
      nn::save_checkpoint(outcome.result.best, dir / "best.ckpt");
      nn::save_checkpoint(outcome.result.final_params, dir / "final.ckpt");
    }
  } catch (const Error& e) {
    manifest["status"] = "failed";
    manifest["error"] = {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    throw;
  }
  manifest["status"] = "complete";
  manifest["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  outcome.dir = dir;
  return outcome;
}

std::vector<RunOutcome> run_ablation(const ExperimentConfig& base, const std::vector<GridAxis>& grid,
                                     const std::filesystem::path& dir, const RunOptions& options) {
  const auto cells = expand_grid(base, grid);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create ablation directory " + dir.string() + ": " + ec.message());

  ordered_json manifest;
  manifest["schema"] = "qad-ablation/1";
  manifest["toolkit_version"] = kToolkitVersion;
  manifest["base_config_hash"] = config_hash(base);
  manifest["base_config"] = to_json(base);
  manifest["grid"] = ordered_json::array();
  for (const auto& axis : grid) manifest["grid"].push_back({{"key", axis.key}, {"values", axis.values}});
  manifest["cells"] = ordered_json::array();
  for (const auto& cell : cells) {
    manifest["cells"].push_back({{"id", cell.id}, {"label", cell.label}, {"assignments", cell.assignments},
                                 {"config_hash", config_hash(cell.config)}, {"dir", cell.id}});
  }
  manifest["outputs"]["manifest"] = "manifest.json";
  manifest["outputs"]["comparison"] = "ablation.csv";
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ostringstream csv;
  csv << "cell,label,assignments,modality,acc,auc\n";
  std::vector<RunOutcome> outcomes;
  for (const auto& cell : cells) {
    if (options.log) options.log(cell.id + " (" + cell.label + ")");
    outcomes.push_back(run_experiment(cell.config, dir / cell.id, options));
    const auto& report = outcomes.back().best_test;
    std::string assignments;
    for (const auto& a : cell.assignments) assignments += (assignments.empty() ? "" : " ") + a;
    for (const auto& m : report.modalities) {
      csv << cell.id << ',' << cell.label << ',' << assignments << ',' << m.modality << ',' << format_number(m.acc)
          << ',' << format_number(m.auc) << '\n';
    }
    csv << cell.id << ',' << cell.label << ',' << assignments << ",pooled," << format_number(*report.pooled_acc)
        << ',' << format_number(*report.pooled_auc) << '\n';
  }
  write_text(dir / "ablation.csv", csv.str());
  return outcomes;
}

}  // namespace qad::exp
