#pragma once

// Oracle suites behind `qad verify` and the acceptance binary. Each check
// compares a production code path against an independent reference
// computation or a stated invariant and reports what it measured.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace qad::verify {

struct Check {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;  // measured value against its threshold
  double seconds = 0.0;
};

/// kernels, autodiff, awp, bound, auc.
const std::vector<std::string>& suite_names();

/// Runs one suite or "all"; an unknown name is a usage error.
std::vector<Check> run_suite(const std::string& name);

void print_table(std::ostream& out, const std::vector<Check>& checks);

// ---- individual checks with explicit sizes ---------------------------------

/// hsic_biased * (n-1)^2 / n^2 against the pairwise V-statistic expansion for
/// random cases (n <= 32, d <= 20) cycling over the three kernel families.
Check hsic_expansion(std::size_t cases, double tolerance, std::uint64_t seed);

/// Permutation test at level `alpha`: V = U + noise must be rejected and an
/// independent V accepted, each in at least `required` of `trials`.
Check permutation_power(std::size_t trials, std::size_t n, std::size_t permutations, double alpha,
                        std::size_t required, std::uint64_t seed);

/// Median relative error of hsic_rff against hsic_biased over `datasets`
/// fixed datasets must fall strictly at every doubling of D from d_min to d_max.
Check rff_convergence(std::size_t datasets, std::size_t n, std::size_t d_min, std::size_t d_max, std::uint64_t seed);

/// Finite-difference gradient check of every layer type and of qad_loss
/// end to end (HSIC term active), over `seeds` seeds.
Check layer_gradients(std::size_t seeds, double tolerance);
Check qad_loss_gradients(std::size_t seeds, double tolerance);

/// ||phi_l|| <= gamma ||theta_l|| after ascent on random layers and gradients.
Check awp_ball(std::size_t trials, std::uint64_t seed);

/// Fresh desk model and batch per draw, paper defaults (gamma 0.002, one
/// step): loss(theta + phi) >= loss(theta) on at least `required` draws.
Check awp_ascent(std::size_t draws, std::size_t required);

/// 2 * sigma-loss >= error indicator on random logits (with exact ties) at
/// each temperature.
Check pointwise_bound(std::size_t samples, const std::vector<double>& temperatures, std::uint64_t seed);

/// Softmax Lipschitz ratio <= 1/T + 1e-9 over random pairs.
Check softmax_lipschitz(std::size_t pairs, const std::vector<double>& temperatures, std::uint64_t seed);

/// metrics::auc against O(n^2) pair counting on random score sets with heavy
/// ties, within `tolerance`.
Check auc_pair_counting(std::size_t sets, double tolerance, std::uint64_t seed);

}  // namespace qad::verify
