#pragma once

#include <span>

namespace qad::metrics {

/// Probability that a random positive outscores a random negative, ties
/// counted one half, computed from average ranks in O(n log n). Throws
/// undefined-metric when either class is missing.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of samples with (score > 0.5) == label.
double accuracy(std::span<const double> scores, std::span<const int> labels);

}  // namespace qad::metrics
