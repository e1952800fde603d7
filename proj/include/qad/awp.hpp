#pragma once

// One-step adversarial weight perturbation. The perturbation phi lives next
// to the parameters, is pushed along the normalized loss gradient scaled by
// the parameter norm, and is kept inside the relative ball
// ||phi_l|| <= gamma * ||theta_l||.

#include <cstddef>
#include <string_view>
#include <vector>

#include "qad/nn/model.hpp"

namespace qad::awp {

/// Loss maximized by the inner step: cross-entropy on every modality, or the
/// KL divergence between raw and degraded predictions.
enum class Objective { cross_entropy, kl };

std::string_view to_string(Objective objective) noexcept;
Objective parse_objective(std::string_view text);

struct AwpConfig {
  double gamma = 0.002;
  double eta = 0.01;
  std::size_t steps = 1;
  bool global_norm = false;  // one norm group over all parameters
  Objective objective = Objective::cross_entropy;

  void validate() const;
  /// gamma = 0 or eta = 0 disables the perturbation entirely.
  bool enabled() const noexcept { return gamma > 0.0 && eta > 0.0 && steps > 0; }
  bool operator==(const AwpConfig&) const = default;
};

struct PerturbationState {
  std::vector<std::vector<double>> phi;  // one entry per parameter tensor
  double gamma = 0.0;
  double eta = 0.0;
  bool global_norm = false;
  bool applied = false;
  std::size_t ascent_steps = 0;  // cumulative counters for the one-step audit
  std::size_t projections = 0;
};

PerturbationState make_state(const nn::ParameterSet& params, const AwpConfig& cfg);

/// Zeroes phi; called at the start of every batch.
void reset(PerturbationState& state);

/// Scales each norm group of phi back onto the ball when it lies outside.
/// The result satisfies ||phi_l|| <= gamma * ||theta_l|| exactly in floating
/// point.
void project(PerturbationState& state, const nn::ParameterSet& params);

/// One ascent step phi <- project(phi + eta * g / ||g|| * ||theta||) using the
/// gradients stored on params. Groups with a zero gradient are left alone.
void awp_ascent(const nn::ParameterSet& params, PerturbationState& state);

/// theta <- theta + phi and theta <- theta - phi, rounded to the parameter
/// storage precision. revert without a preceding apply is a usage error.
void apply(nn::ParameterSet& params, PerturbationState& state);
void revert(nn::ParameterSet& params, PerturbationState& state);

/// max over groups of ||phi_l|| / (gamma ||theta_l||); groups with a zero
/// radius report 0 when phi_l is zero and infinity otherwise.
double max_ball_ratio(const PerturbationState& state, const nn::ParameterSet& params);

/// Number of groups with ||phi_l|| > gamma * ||theta_l||.
std::size_t ball_violations(const PerturbationState& state, const nn::ParameterSet& params);

}  // namespace qad::awp
