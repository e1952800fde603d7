#pragma once

// Central finite-difference oracle for tape gradients. A stencil point whose
// discrete branch decisions (ReLU masks, pooling argmax) differ from the
// centre has crossed a kink, so its difference quotient is not a derivative
// estimate; such entries are counted separately instead of compared.

#include <algorithm>
#include <cmath>
#include <string>

#include "qad/nn/graph.hpp"
#include "qad/nn/model.hpp"

namespace qad::nn {

struct GradCheckResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t kinked = 0;
  std::string worst;
};

/// loss_fn(Graph&, ParameterSet&) -> Var (scalar). params must be f64.
template <typename LossFn>
GradCheckResult gradcheck(ParameterSet& params, LossFn&& loss_fn, double h = 1e-4,
                          double floor = 1e-6) {
  params.zero_grad();
  for (auto& p : params) p.tensor.grad.emplace(p.tensor.numel(), 0.0);
  std::uint64_t centre_decisions = 0;
  {
    Graph graph(true);
    Var loss = loss_fn(graph, params);
    centre_decisions = graph.decision_hash();
    graph.backward(loss);
  }
  auto evaluate = [&](std::uint64_t& decisions) {
    Graph graph(false);
    const double v = loss_fn(graph, params).item();
    decisions = graph.decision_hash();
    return v;
  };
  GradCheckResult result;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.tensor.numel(); ++i) {
      const double orig = p.tensor.values[i];
      std::uint64_t up_dec = 0, down_dec = 0;
      p.tensor.values[i] = orig + h;
      const double up = evaluate(up_dec);
      p.tensor.values[i] = orig - h;
      const double down = evaluate(down_dec);
      p.tensor.values[i] = orig;
      if (up_dec != centre_decisions || down_dec != centre_decisions) {
        ++result.kinked;
        continue;
      }
      const double fd = (up - down) / (2.0 * h);
      const double analytic = (*p.tensor.grad)[i];
      const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), floor});
      ++result.checked;
      if (rel > result.max_rel) {
        result.max_rel = rel;
        result.worst = p.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                       " fd=" + std::to_string(fd);
      }
    }
  }
  return result;
}

}  // namespace qad::nn
