#include "qad/awp.hpp"

#include <cmath>
#include <limits>

#include "qad/error.hpp"

namespace qad::awp {
namespace {

double squared(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

void check_shapes(const PerturbationState& state, const nn::ParameterSet& params) {
  if (state.phi.size() != params.size()) fail(ErrorKind::shape, "perturbation does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.phi[i].size() != params[i].tensor.numel()) {
      fail(ErrorKind::shape, "perturbation does not match parameter " + params[i].name);
    }
  }
}

// Norm groups: one per tensor, or a single group spanning everything.
std::vector<std::vector<std::size_t>> groups(const PerturbationState& state) {
  std::vector<std::vector<std::size_t>> out;
  if (state.global_norm) {
    out.emplace_back();
    for (std::size_t i = 0; i < state.phi.size(); ++i) out.back().push_back(i);
  } else {
    for (std::size_t i = 0; i < state.phi.size(); ++i) out.push_back({i});
  }
  return out;
}

double group_norm(const std::vector<std::size_t>& group, auto&& values_of) {
  double s = 0.0;
  for (std::size_t i : group) s += squared(values_of(i));
  return std::sqrt(s);
}

double phi_norm(const PerturbationState& state, const std::vector<std::size_t>& group) {
  return group_norm(group, [&](std::size_t i) -> const std::vector<double>& { return state.phi[i]; });
}

double theta_norm(const nn::ParameterSet& params, const std::vector<std::size_t>& group) {
  return group_norm(group, [&](std::size_t i) -> const std::vector<double>& { return params[i].tensor.values; });
}

double round_storage(double v, nn::Precision p) {
  return p == nn::Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

}  // namespace

std::string_view to_string(Objective objective) noexcept {
  return objective == Objective::kl ? "kl" : "cross-entropy";
}

Objective parse_objective(std::string_view text) {
  if (text == "cross-entropy" || text == "xe") return Objective::cross_entropy;
  if (text == "kl") return Objective::kl;
  fail(ErrorKind::invalid_config, "unknown AWP objective '" + std::string(text) + "'");
}

void AwpConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail(ErrorKind::invalid_config, "awp gamma must be >= 0");
  if (!(eta >= 0.0) || !std::isfinite(eta)) fail(ErrorKind::invalid_config, "awp eta must be >= 0");
}

PerturbationState make_state(const nn::ParameterSet& params, const AwpConfig& cfg) {
  cfg.validate();
  PerturbationState state;
  for (const auto& p : params) state.phi.emplace_back(p.tensor.numel(), 0.0);
  state.gamma = cfg.gamma;
  state.eta = cfg.eta;
  state.global_norm = cfg.global_norm;
  return state;
}

void reset(PerturbationState& state) {
  if (state.applied) fail(ErrorKind::usage, "cannot reset an applied perturbation");
  for (auto& v : state.phi) std::fill(v.begin(), v.end(), 0.0);
}

void project(PerturbationState& state, const nn::ParameterSet& params) {
  check_shapes(state, params);
  ++state.projections;
  for (const auto& group : groups(state)) {
    const double radius = state.gamma * theta_norm(params, group);
    double norm = phi_norm(state, group);
    if (norm <= radius) continue;
    if (radius == 0.0) {
      for (std::size_t i : group) std::fill(state.phi[i].begin(), state.phi[i].end(), 0.0);
      continue;
    }
    double factor = radius / norm;
    // Rounding may leave the scaled norm a few ulps outside; shrink until inside.
    for (;;) {
      double s = 0.0;
      for (std::size_t i : group)
        for (double x : state.phi[i]) s += (x * factor) * (x * factor);
      if (std::sqrt(s) <= radius) break;
      factor = std::nextafter(factor, 0.0);
    }
    for (std::size_t i : group)
      for (double& x : state.phi[i]) x *= factor;
  }
}

void awp_ascent(const nn::ParameterSet& params, PerturbationState& state) {
  check_shapes(state, params);
  if (state.applied) fail(ErrorKind::usage, "awp ascent must run on unperturbed parameters");
  ++state.ascent_steps;
  for (const auto& group : groups(state)) {
    double g2 = 0.0;
    for (std::size_t i : group) {
      if (params[i].tensor.grad) g2 += squared(*params[i].tensor.grad);
    }
    const double gnorm = std::sqrt(g2);
    if (gnorm == 0.0 || !std::isfinite(gnorm)) continue;
    const double step = state.eta * theta_norm(params, group) / gnorm;
    for (std::size_t i : group) {
      if (!params[i].tensor.grad) continue;
      const auto& g = *params[i].tensor.grad;
      for (std::size_t k = 0; k < g.size(); ++k) state.phi[i][k] += step * g[k];
    }
  }
  project(state, params);
  if (ball_violations(state, params) != 0) fail(ErrorKind::numeric, "perturbation left the feasible ball");
}

void apply(nn::ParameterSet& params, PerturbationState& state) {
  check_shapes(state, params);
  if (state.applied) fail(ErrorKind::usage, "perturbation already applied");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& values = params[i].tensor.values;
    for (std::size_t k = 0; k < values.size(); ++k) {
      values[k] = round_storage(values[k] + state.phi[i][k], params.precision());
    }
  }
  state.applied = true;
}

void revert(nn::ParameterSet& params, PerturbationState& state) {
  check_shapes(state, params);
  if (!state.applied) fail(ErrorKind::usage, "revert called without a matching apply");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& values = params[i].tensor.values;
    for (std::size_t k = 0; k < values.size(); ++k) {
      values[k] = round_storage(values[k] - state.phi[i][k], params.precision());
    }
  }
  state.applied = false;
}

double max_ball_ratio(const PerturbationState& state, const nn::ParameterSet& params) {
  check_shapes(state, params);
  double worst = 0.0;
  for (const auto& group : groups(state)) {
    const double norm = phi_norm(state, group);
    const double radius = state.gamma * theta_norm(params, group);
    if (norm == 0.0) continue;
    worst = std::max(worst, radius == 0.0 ? std::numeric_limits<double>::infinity() : norm / radius);
  }
  return worst;
}

std::size_t ball_violations(const PerturbationState& state, const nn::ParameterSet& params) {
  check_shapes(state, params);
  std::size_t count = 0;
  for (const auto& group : groups(state)) {
    if (phi_norm(state, group) > state.gamma * theta_norm(params, group)) ++count;
  }
  return count;
}

}  // namespace qad::awp
