#pragma once

// Observable terms of the generalization bound for a raw/degraded modality
// pair. The Rademacher complexity and confidence terms are not estimated, so
// the sum of the reported terms is a partial bound only.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qad/nn/model.hpp"
#include "qad/quality.hpp"

namespace qad::bound {

struct BoundReport {
  double temperature = 1.0;
  std::size_t n = 0;
  double lhs = 0.0;         // error rate on the degraded modality
  double term_cls = 0.0;    // 2 * mean sigma-loss on the degraded modality
  double term_col = 0.0;    // (8 / T) * mean ||f(x_r) - f(x_c)||
  double term_const = 0.0;  // 16 / n
  bool partial = true;      // Rademacher and confidence terms omitted
  std::size_t pointwise_checked = 0;

  double computable_sum() const noexcept { return term_cls + term_col + term_const; }
  bool holds() const noexcept { return lhs <= computable_sum(); }
};

/// Logits are [n, K] row-major for the same n samples in both modalities.
/// Asserts 2 * sigma_loss >= 1{argmax != y} for every sample (numeric error
/// otherwise); mismatched sizes are invalid input.
BoundReport bound_terms(std::span<const double> raw_logits, std::span<const double> degraded_logits,
                        std::span<const int> labels, std::size_t num_classes, double temperature);

/// Runs the model on modalities `raw` and `degraded` of a split.
BoundReport bound_terms(const nn::ModelSpec& spec, const nn::ParameterSet& params,
                        const quality::Dataset& data, const quality::Split& split, std::size_t raw,
                        std::size_t degraded, double temperature, unsigned threads = 1);

/// Largest ||softmax(a/T) - softmax(b/T)|| / ||a - b|| over random two-class
/// logit pairs (the ratio of an identical pair counts as 0).
double lipschitz_check(double temperature, std::size_t trials, std::uint64_t seed);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace qad::bound
