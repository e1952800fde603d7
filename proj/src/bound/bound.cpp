#include "qad/bound.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "qad/error.hpp"
#include "qad/nn/graph.hpp"
#include "qad/rng.hpp"
#include "qad/trainer.hpp"

namespace qad::bound {

BoundReport bound_terms(std::span<const double> raw_logits, std::span<const double> degraded_logits,
                        std::span<const int> labels, std::size_t num_classes, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_config, "temperature must be positive");
  const std::size_t n = labels.size();
  if (n == 0 || num_classes < 2 || raw_logits.size() != n * num_classes ||
      degraded_logits.size() != n * num_classes) {
    fail(ErrorKind::invalid_input, "raw and degraded logits must be paired with the labels");
  }
  BoundReport report;
  report.temperature = temperature;
  report.n = n;
  double errors = 0.0, sigma = 0.0, distance = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = degraded_logits.subspan(i * num_classes, num_classes);
    const auto r = raw_logits.subspan(i * num_classes, num_classes);
    const auto predicted = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    const double wrong = predicted != labels[i] ? 1.0 : 0.0;
    const double loss = nn::sigma_loss(z, labels[i], temperature);
    if (!(2.0 * loss >= wrong)) {
      std::ostringstream msg;
      msg << "pointwise bound violated at sample " << i << ": 2 * loss = " << 2.0 * loss;
      fail(ErrorKind::numeric, msg.str());
    }
    ++report.pointwise_checked;
    errors += wrong;
    sigma += loss;
    double d2 = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) d2 += (r[k] - z[k]) * (r[k] - z[k]);
    distance += std::sqrt(d2);
  }
  const double dn = static_cast<double>(n);
  report.lhs = errors / dn;
  report.term_cls = 2.0 * sigma / dn;
  report.term_col = 8.0 / temperature * distance / dn;
  report.term_const = 16.0 / dn;
  return report;
}

BoundReport bound_terms(const nn::ModelSpec& spec, const nn::ParameterSet& params, const quality::Dataset& data,
                        const quality::Split& split, std::size_t raw, std::size_t degraded, double temperature,
                        unsigned threads) {
  if (raw >= split.images.size() || degraded >= split.images.size()) {
    fail(ErrorKind::invalid_input, "modality index out of range");
  }
  std::vector<double> raw_logits, degraded_logits;
  train::predict_scores(spec, params, split.images[raw], split.count, data.image_shape(), threads, &raw_logits);
  train::predict_scores(spec, params, split.images[degraded], split.count, data.image_shape(), threads,
                        &degraded_logits);
  return bound_terms(raw_logits, degraded_logits, split.labels, spec.num_classes, temperature);
}

double lipschitz_check(double temperature, std::size_t trials, std::uint64_t seed) {
  if (!(temperature > 0.0)) fail(ErrorKind::invalid_config, "temperature must be positive");
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    // Mix of wide and nearly coincident pairs; the ratio peaks for close
    // pairs around equal logits.
    const double spread = std::pow(10.0, rng.uniform(-3.0, 1.5));
    nn::Tensor a({1, 2}, {spread * rng.normal(), spread * rng.normal()});
    nn::Tensor b = a;
    const double gap = std::pow(10.0, rng.uniform(-6.0, 1.0));
    b.values[0] += gap * rng.normal();
    b.values[1] += gap * rng.normal();
    const double dz = std::hypot(a.values[0] - b.values[0], a.values[1] - b.values[1]);
    if (dz == 0.0) continue;
    const auto pa = nn::softmax_temperature(a, temperature);
    const auto pb = nn::softmax_temperature(b, temperature);
    const double dp = std::hypot(pa.values[0] - pb.values[0], pa.values[1] - pb.values[1]);
    worst = std::max(worst, dp / dz);
  }
  return worst;
}

namespace {
std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}
}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorKind::invalid_input, "spearman needs two paired samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::undefined_metric, "spearman of a constant sequence");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace qad::bound
