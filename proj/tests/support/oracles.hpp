#pragma once

// Independent reference computations used by the unit and acceptance suites.
// Nothing here calls into the code path it is meant to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "qad/rng.hpp"

namespace qad::testing {

using Matrix = std::vector<std::vector<double>>;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, std::vector<double>(cols));
  for (auto& row : m)
    for (auto& v : row) v = scale * rng.normal();
  return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Matrix centering_matrix(std::size_t n) {
  Matrix h(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n);
  return h;
}

/// Gaussian RBF Gram matrix straight from the definition.
inline Matrix rbf_gram_loop(const Matrix& x, double sigma, bool dim_normalize) {
  const std::size_t n = x.size();
  const double d = dim_normalize ? static_cast<double>(x[0].size()) : 1.0;
  Matrix k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < x[i].size(); ++c) dist += (x[i][c] - x[j][c]) * (x[i][c] - x[j][c]);
      k[i][j] = std::exp(-dist / (2.0 * sigma * sigma * d));
    }
  }
  return k;
}

/// Mann-Whitney AUC by counting every (positive, negative) pair.
inline double auc_pair_count(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  double pos = 0.0;
  double neg = 0.0;
  for (int l : labels) (l == 1 ? pos : neg) += 1.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (pos * neg);
}

/// Relative error with a floor on the denominator so exact zeros compare
/// cleanly.
inline double relative_error(double actual, double expected, double floor = 1e-6) {
  return std::abs(actual - expected) / std::max({std::abs(actual), std::abs(expected), floor});
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace qad::testing
