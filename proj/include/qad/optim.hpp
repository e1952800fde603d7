#pragma once

#include <cstddef>
#include <vector>

#include "qad/nn/model.hpp"

namespace qad::optim {

struct AdamConfig {
  double lr = 2e-3;  // peak rate of the one-cycle schedule
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

/// One-cycle: cosine warm-up from lr/div to lr over the first pct of the
/// steps, then cosine annealing to lr/(div*final_div).
struct OneCycleConfig {
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  void validate() const;
  bool operator==(const OneCycleConfig&) const = default;
};

/// Learning rate at step t in [0, total_steps).
double one_cycle_lr(double peak, const OneCycleConfig& cfg, std::size_t step, std::size_t total_steps);

class Adam {
 public:
  Adam(const nn::ParameterSet& params, const AdamConfig& cfg);

  /// Applies one update from the gradients stored on params; parameters
  /// without a gradient are skipped. Values are rounded to storage precision.
  void step(nn::ParameterSet& params, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace qad::optim
