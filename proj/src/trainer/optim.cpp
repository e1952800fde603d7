#include "qad/optim.hpp"

#include <cmath>
#include <numbers>

#include "qad/error.hpp"

namespace qad::optim {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorKind::invalid_config, "learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::invalid_config, "Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) fail(ErrorKind::invalid_config, "Adam epsilon must be positive");
}

void OneCycleConfig::validate() const {
  if (!(pct_start > 0.0 && pct_start < 1.0)) fail(ErrorKind::invalid_config, "one-cycle pct_start must lie in (0, 1)");
  if (!(div_factor >= 1.0) || !(final_div_factor >= 1.0)) {
    fail(ErrorKind::invalid_config, "one-cycle division factors must be >= 1");
  }
}

namespace {
double cosine(double from, double to, double fraction) {
  return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * fraction));
}
}  // namespace

double one_cycle_lr(double peak, const OneCycleConfig& cfg, std::size_t step, std::size_t total_steps) {
  const double initial = peak / cfg.div_factor;
  const double final_lr = initial / cfg.final_div_factor;
  if (total_steps <= 1) return peak;
  const double last = static_cast<double>(total_steps - 1);
  const double warm_end = std::max(1.0, std::floor(cfg.pct_start * last));
  const double t = static_cast<double>(step);
  if (t <= warm_end) return cosine(initial, peak, t / warm_end);
  return cosine(peak, final_lr, std::min(1.0, (t - warm_end) / std::max(1.0, last - warm_end)));
}

Adam::Adam(const nn::ParameterSet& params, const AdamConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step(nn::ParameterSet& params, double lr) {
  if (params.size() != m_.size()) fail(ErrorKind::shape, "optimizer state does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    if (!tensor.grad) continue;
    const auto& g = *tensor.grad;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      tensor.values[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
  params.round_to_storage();
}

}  // namespace qad::optim
