#include "qad/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "qad/error.hpp"

namespace qad::metrics {
namespace {
void check(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::invalid_input, "scores and labels differ in length");
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorKind::invalid_input, "labels must be 0 or 1");
  }
}
}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check(scores, labels);
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    fail(ErrorKind::undefined_metric, "AUC needs both classes present");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are 1-based; a tie group spanning ranks [i+1, j] gets (i+1+j)/2.
  // Twice the rank sum stays integral, so accumulate it exactly.
  unsigned long long twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const unsigned long long twice_rank = (i + 1) + j;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) twice_rank_sum += twice_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = (static_cast<double>(twice_rank_sum) - p * (p + 1.0)) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double accuracy(std::span<const double> scores, std::span<const int> labels) {
  check(scores, labels);
  if (scores.empty()) fail(ErrorKind::undefined_metric, "accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += (scores[i] > 0.5) == (labels[i] == 1);
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

}  // namespace qad::metrics
