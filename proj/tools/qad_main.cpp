// qad: experiment runner for quality-agnostic training on the synthetic
// multi-quality task.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qad/error.hpp"
#include "qad/experiment.hpp"
#include "qad/nn/checkpoint.hpp"
#include "qad/verify.hpp"

namespace fs = std::filesystem;
using namespace qad;

namespace {

enum Exit : int {
  kOk = 0,
  kVerifyFailed = 1,
  kConfigError = 2,
  kNumericError = 3,
  kIoError = 4,
  kFormatError = 5,
  kUsage = 64,
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_config:
    case ErrorKind::invalid_input:
    case ErrorKind::unsupported_kernel: return kConfigError;
    case ErrorKind::numeric:
    case ErrorKind::undefined_metric: return kNumericError;
    case ErrorKind::io: return kIoError;
    case ErrorKind::format:
    case ErrorKind::shape: return kFormatError;
    case ErrorKind::usage: return kUsage;
  }
  return kConfigError;
}

fs::path run_root() {
  const char* env = std::getenv("QAD_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

exp::ExperimentConfig resolve(const std::string& config_path, const std::vector<std::string>& overrides) {
  const auto base = config_path.empty() ? exp::ExperimentConfig{} : exp::load_config(config_path);
  return overrides.empty() ? base : exp::with_overrides(base, overrides);
}

void print_report(const train::EvalReport& report) {
  std::cout << std::left << std::setw(10) << "modality" << std::right << std::setw(8) << "n" << std::setw(10) << "acc"
            << std::setw(10) << "auc" << std::setw(10) << "loss" << std::setw(12) << "distortion" << '\n';
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& m : report.modalities) {
    std::cout << std::left << std::setw(10) << m.modality << std::right << std::setw(8) << m.count << std::setw(10)
              << m.acc << std::setw(10) << m.auc << std::setw(10) << m.loss << std::setw(12) << m.distortion << '\n';
  }
  if (report.pooled_acc) {
    std::cout << std::left << std::setw(10) << "pooled" << std::right << std::setw(8) << "" << std::setw(10)
              << *report.pooled_acc << std::setw(10) << *report.pooled_auc << '\n';
  }
  std::cout.unsetf(std::ios::fixed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quality-agnostic training experiments on synthetic multi-quality data"};
  app.set_version_flag("--version", std::string(exp::kToolkitVersion));
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress lines");

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;

  auto* run = app.add_subcommand("run", "Train and evaluate one configuration");
  run->add_option("config", config_path, "Config JSON or a run manifest (defaults when omitted)");
  run->add_option("--set", overrides, "Override a config key, e.g. --set train.epochs=4")->take_all();
  run->add_option("-o,--out", out_dir, "Run directory (default $QAD_RUN_ROOT/<name>-<hash>)");

  std::vector<std::string> grid;
  auto* ablate = app.add_subcommand("ablate", "Run every cell of a parameter grid");
  ablate->add_option("config", config_path, "Base config JSON (defaults when omitted)");
  ablate->add_option("--grid", grid, "Axis key=v1,v2 (aliases: alpha, gamma, variant, sigma)")->take_all();
  ablate->add_option("--set", overrides, "Override a base config key")->take_all();
  ablate->add_option("-o,--out", out_dir, "Ablation directory");

  std::string suite;
  auto* verify = app.add_subcommand("verify", "Run oracle suites and print a pass/fail table");
  verify->add_option("suite", suite, "kernels | autodiff | awp | bound | auc | all")->required();

  std::string run_dir, checkpoint, split_name = "test";
  bool as_json = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on every modality of a split");
  eval->add_option("--run", run_dir, "Run directory (uses its manifest and best.ckpt)");
  eval->add_option("--config", config_path, "Config or manifest when --run is not given");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (default <run>/best.ckpt)");
  eval->add_option("--set", overrides, "Override a config key")->take_all();
  eval->add_option("--split", split_name, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_flag("--json", as_json, "Print the report as JSON");

  auto* gen = app.add_subcommand("gen-data", "Generate and export the configured dataset");
  gen->add_option("config", config_path, "Config JSON (defaults when omitted)");
  gen->add_option("--set", overrides, "Override a config key")->take_all();
  gen->add_option("-o,--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  exp::RunOptions options;
  if (!quiet) options.log = [](const std::string& line) { std::cerr << line << '\n'; };

  try {
    if (*run) {
      const auto cfg = resolve(config_path, overrides);
      const fs::path dir = out_dir.empty() ? run_root() / (cfg.name + "-" + exp::config_hash(cfg).substr(0, 12))
                                           : fs::path(out_dir);
      const auto outcome = exp::run_experiment(cfg, dir, options);
      std::cout << "run directory: " << dir.string() << "\n";
      std::cout << "best record: epoch " << outcome.summary["best"]["epoch"].get<double>() << "\n";
      print_report(outcome.best_test);
      return kOk;
    }
    if (*ablate) {
      const auto cfg = resolve(config_path, overrides);
      std::vector<exp::GridAxis> axes;
      for (const auto& g : grid) axes.push_back(exp::parse_grid_axis(g));
      const fs::path dir = out_dir.empty() ? run_root() / (cfg.name + "-ablation-" + exp::config_hash(cfg).substr(0, 12))
                                           : fs::path(out_dir);
      const auto cells = exp::expand_grid(cfg, axes);  // validates before anything is written
      const auto outcomes = exp::run_ablation(cfg, axes, dir, options);
      std::cout << "ablation directory: " << dir.string() << "\n";
      for (std::size_t i = 0; i < cells.size(); ++i) {
        std::cout << cells[i].id << "  " << cells[i].label << "  lowest-modality AUC " << std::fixed
                  << std::setprecision(4) << outcomes[i].best_test.min_auc() << "  pooled AUC "
                  << *outcomes[i].best_test.pooled_auc << "\n";
        std::cout.unsetf(std::ios::fixed);
      }
      return kOk;
    }
    if (*verify) {
      const auto checks = verify::run_suite(suite);
      verify::print_table(std::cout, checks);
      for (const auto& c : checks)
        if (!c.passed) return kVerifyFailed;
      return kOk;
    }
    if (*eval) {
      if (run_dir.empty() && config_path.empty()) fail(ErrorKind::usage, "eval needs --run or --config");
      if (!run_dir.empty() && !config_path.empty()) fail(ErrorKind::usage, "give either --run or --config, not both");
      if (!run_dir.empty()) config_path = (fs::path(run_dir) / "manifest.json").string();
      if (checkpoint.empty()) {
        if (run_dir.empty()) fail(ErrorKind::usage, "--checkpoint is required with --config");
        checkpoint = (fs::path(run_dir) / "best.ckpt").string();
      }
      const auto cfg = resolve(config_path, overrides);
      const auto data = exp::make_dataset(cfg);
      const auto params = nn::load_checkpoint(checkpoint, cfg.model);
      std::vector<std::size_t> all(data.modalities.size());
      for (std::size_t m = 0; m < all.size(); ++m) all[m] = m;
      const auto report = train::evaluate(cfg.model, params, data, data.split(split_name), all, cfg.train.threads);
      if (as_json) {
        nlohmann::ordered_json j;
        j["split"] = split_name;
        j["checkpoint"] = checkpoint;
        for (const auto& m : report.modalities) {
          j["modalities"].push_back({{"modality", m.modality}, {"count", m.count}, {"acc", m.acc}, {"auc", m.auc},
                                     {"loss", m.loss}, {"distortion", m.distortion}});
        }
        j["pooled_acc"] = *report.pooled_acc;
        j["pooled_auc"] = *report.pooled_auc;
        std::cout << j.dump(2) << "\n";
      } else {
        print_report(report);
      }
      return kOk;
    }
    if (*gen) {
      const auto cfg = resolve(config_path, overrides);
      const auto data = quality::generate_dataset(cfg.data, cfg.modalities, cfg.train.threads);
      quality::export_dataset(data, out_dir);
      std::cout << "dataset written to " << out_dir << " (" << data.train.count << "/" << data.val.count << "/"
                << data.test.count << " samples, " << data.modalities.size() << " modalities)\n";
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "qad: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "qad: io: " << e.what() << "\n";
    return kIoError;
  }
  return kUsage;
}
