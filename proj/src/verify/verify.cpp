#include "qad/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <tuple>

#include "qad/awp.hpp"
#include "qad/bound.hpp"
#include "qad/error.hpp"
#include "qad/kernels.hpp"
#include "qad/metrics.hpp"
#include "qad/nn/gradcheck.hpp"
#include "qad/rng.hpp"
#include "qad/trainer.hpp"

namespace qad::verify {

namespace {

using kernels::BandwidthMode;
using kernels::KernelConfig;
using kernels::KernelFamily;
using kernels::SampleMatrix;
using nn::Graph;
using nn::ParameterSet;
using nn::Tensor;
using nn::Var;

Check timed(const char* suite, const char* name, const std::function<void(Check&)>& body) {
  Check c;
  c.suite = suite;
  c.name = name;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const Error& e) {
    c.passed = false;
    c.detail = std::string("raised ") + std::string(to_string(e.kind())) + ": " + e.what();
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return c;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

SampleMatrix random_samples(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  SampleMatrix m(n, d);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

Tensor random_tensor(nn::Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values) v = scale * rng.normal();
  return t;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Mann-Whitney statistic by visiting every (positive, negative) pair.
double auc_by_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0, pos = 0.0, neg = 0.0;
  for (int l : labels) (l == 1 ? pos : neg) += 1.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  return wins / (pos * neg);
}

struct GradTally {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t kinked = 0;
  std::string where;

  void add(const std::string& label, const nn::GradCheckResult& r) {
    checked += r.checked;
    kinked += r.kinked;
    if (r.max_rel > worst) {
      worst = r.max_rel;
      where = label + " " + r.worst;
    }
  }
};

nn::ModelSpec small_spec() {
  nn::ModelSpec spec;
  spec.input = {1, 8, 8};
  spec.layers = {nn::LayerSpec::conv(3, 3), nn::LayerSpec::relu(), nn::LayerSpec::max_pool(2),
                 nn::LayerSpec::conv(4, 3, 2), nn::LayerSpec::relu(), nn::LayerSpec::flatten(),
                 nn::LayerSpec::dense(6), nn::LayerSpec::relu(), nn::LayerSpec::dense(2)};
  spec.tap_layers = {2, 4, 7};
  return spec;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"kernels", "autodiff", "awp", "bound", "auc"};
  return names;
}

Check hsic_expansion(std::size_t cases, double tolerance, std::uint64_t seed) {
  return timed("kernels", "hsic-expansion", [&](Check& c) {
    Rng rng(seed);
    const KernelFamily families[] = {KernelFamily::gaussian_rbf, KernelFamily::laplace, KernelFamily::linear};
    double worst = 0.0;
    for (std::size_t i = 0; i < cases; ++i) {
      const std::size_t n = 2 + rng.below(31);
      const std::size_t du = 1 + rng.below(20);
      const std::size_t dv = 1 + rng.below(20);
      const auto U = random_samples(n, du, rng);
      auto V = random_samples(n, dv, rng, 0.5);
      for (std::size_t r = 0; r < n; ++r) V(r, 0) += U(r, 0);  // some dependence so the value is not ~0
      const KernelConfig ck{families[i % 3], rng.uniform(0.3, 3.0), BandwidthMode::fixed, rng.below(2) == 0};
      const KernelConfig cl{families[(i / 3) % 3], rng.uniform(0.3, 3.0), BandwidthMode::fixed, true};
      const double nn = static_cast<double>(n);
      const double fast = kernels::hsic_biased(kernels::gram(U, ck), kernels::gram(V, cl)) * (nn - 1) * (nn - 1) / (nn * nn);
      const double slow = kernels::hsic_oracle(U, V, ck, cl);
      const double rel = std::abs(fast - slow) / std::max({std::abs(fast), std::abs(slow), 1e-300});
      worst = std::max(worst, rel);
    }
    c.passed = worst <= tolerance;
    c.detail = "max rel err " + fmt(worst) + " over " + std::to_string(cases) + " cases (<= " + fmt(tolerance) + ")";
  });
}

Check permutation_power(std::size_t trials, std::size_t n, std::size_t permutations, double alpha,
                        std::size_t required, std::uint64_t seed) {
  return timed("kernels", "permutation-test", [&](Check& c) {
    Rng rng(seed);
    const KernelConfig cfg{KernelFamily::gaussian_rbf, 1.0, BandwidthMode::fixed, true};
    std::size_t rejected_dependent = 0, accepted_independent = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto U = random_samples(n, 2, rng);
      auto noisy = U;
      for (double& v : noisy.data()) v += 0.3 * rng.normal();
      const auto W = random_samples(n, 2, rng);
      if (kernels::permutation_test(U, noisy, cfg, cfg, permutations, Rng::derive(seed, 2 * t)).p_value <= alpha)
        ++rejected_dependent;
      if (kernels::permutation_test(U, W, cfg, cfg, permutations, Rng::derive(seed, 2 * t + 1)).p_value > alpha)
        ++accepted_independent;
    }
    c.passed = rejected_dependent >= required && accepted_independent >= required;
    c.detail = "dependent rejected " + std::to_string(rejected_dependent) + "/" + std::to_string(trials) +
               ", independent accepted " + std::to_string(accepted_independent) + "/" + std::to_string(trials) +
               " at level " + fmt(alpha) + " (>= " + std::to_string(required) + ")";
  });
}

Check rff_convergence(std::size_t datasets, std::size_t n, std::size_t d_min, std::size_t d_max, std::uint64_t seed) {
  return timed("kernels", "rff-convergence", [&](Check& c) {
    const KernelConfig cfg{KernelFamily::gaussian_rbf, 1.0, BandwidthMode::fixed, true};
    std::vector<SampleMatrix> us, vs;
    std::vector<double> exact;
    for (std::size_t s = 0; s < datasets; ++s) {
      Rng rng(Rng::derive(seed, s));
      us.push_back(random_samples(n, 3, rng));
      auto V = us.back();
      for (double& v : V.data()) v += 0.5 * rng.normal();
      vs.push_back(V);
      exact.push_back(kernels::hsic_biased(kernels::gram(us.back(), cfg), kernels::gram(V, cfg)));
    }
    std::vector<double> medians;
    std::ostringstream detail;
    detail << "median rel err";
    // One map of d_max features per dataset and side; D features means its
    // first D rows, so each dataset follows a single approximation sequence.
    auto prefix = [](const kernels::RffMap& full, std::size_t D) {
      kernels::RffMap m = full;
      m.num_features = D;
      m.frequencies.resize(D * full.input_dim);
      m.phases.resize(D);
      return m;
    };
    std::vector<kernels::RffMap> full_u, full_v;
    for (std::size_t s = 0; s < datasets; ++s) {
      full_u.push_back(kernels::rff_map(3, d_max, cfg, Rng::derive(seed + 1, 2 * s)));
      full_v.push_back(kernels::rff_map(3, d_max, cfg, Rng::derive(seed + 1, 2 * s + 1)));
    }
    for (std::size_t D = d_min; D <= d_max; D *= 2) {
      std::vector<double> rel;
      for (std::size_t s = 0; s < datasets; ++s) {
        const double approx = kernels::hsic_rff(kernels::rff_features(us[s], prefix(full_u[s], D)),
                                                kernels::rff_features(vs[s], prefix(full_v[s], D)));
        rel.push_back(std::abs(approx - exact[s]) / exact[s]);
      }
      medians.push_back(median(rel));
      detail << ' ' << D << ':' << fmt(medians.back());
    }
    c.passed = medians.size() >= 2;
    for (std::size_t i = 1; i < medians.size(); ++i) c.passed = c.passed && medians[i] < medians[i - 1];
    c.detail = detail.str() + " (strictly decreasing)";
  });
}

Check layer_gradients(std::size_t seeds, double tolerance) {
  return timed("autodiff", "layer-gradients", [&](Check& c) {
    using Build = std::function<void(ParameterSet&, Rng&)>;
    using Loss = std::function<Var(Graph&, ParameterSet&)>;
    const std::vector<int> labels{0, 1, 1, 0, 1};
    const Tensor targets({5, 2}, {0.9, 0.1, 0.3, 0.7, 0.5, 0.5, 1.0, 0.0, 0.2, 0.8});
    const KernelConfig rbf{KernelFamily::gaussian_rbf, 0.7, BandwidthMode::fixed, true};
    const KernelConfig lap{KernelFamily::laplace, 0.7, BandwidthMode::fixed, true};
    const KernelConfig lin{KernelFamily::linear, 1.0, BandwidthMode::fixed, true};
    auto leaf = [](Graph& g, ParameterSet& p, std::size_t i) { return g.leaf(p[i].tensor); };
    auto two = [](nn::Shape a, nn::Shape b, double sb = 1.0) {
      return [a, b, sb](ParameterSet& p, Rng& rng) {
        p.add("a", random_tensor(a, rng));
        p.add("b", random_tensor(b, rng, sb));
      };
    };
    const std::vector<std::tuple<std::string, Build, Loss>> cases{
        {"conv2d",
         [](ParameterSet& p, Rng& rng) {
           p.add("x", random_tensor({2, 2, 6, 6}, rng));
           p.add("w", random_tensor({3, 2, 3, 3}, rng, 0.5));
           p.add("b", random_tensor({3}, rng));
         },
         [&](Graph& g, ParameterSet& p) { return nn::squared_norm(nn::conv2d(leaf(g, p, 0), leaf(g, p, 1), leaf(g, p, 2), 1)); }},
        {"conv2d-stride2",
         [](ParameterSet& p, Rng& rng) {
           p.add("x", random_tensor({2, 2, 7, 7}, rng));
           p.add("w", random_tensor({3, 2, 3, 3}, rng, 0.5));
           p.add("b", random_tensor({3}, rng));
         },
         [&](Graph& g, ParameterSet& p) { return nn::squared_norm(nn::conv2d(leaf(g, p, 0), leaf(g, p, 1), leaf(g, p, 2), 2)); }},
        {"dense",
         [](ParameterSet& p, Rng& rng) {
           p.add("x", random_tensor({3, 5}, rng));
           p.add("w", random_tensor({4, 5}, rng));
           p.add("b", random_tensor({4}, rng));
         },
         [&](Graph& g, ParameterSet& p) { return nn::squared_norm(nn::linear(leaf(g, p, 0), leaf(g, p, 1), leaf(g, p, 2))); }},
        {"relu",
         [](ParameterSet& p, Rng& rng) {
           p.add("x", random_tensor({4, 6}, rng));
           p.add("w", random_tensor({3, 6}, rng));
           p.add("b", random_tensor({3}, rng));
         },
         [&](Graph& g, ParameterSet& p) {
           return nn::squared_norm(nn::linear(nn::relu(leaf(g, p, 0)), leaf(g, p, 1), leaf(g, p, 2)));
         }},
        {"max-pool",
         [](ParameterSet& p, Rng& rng) { p.add("x", random_tensor({2, 3, 4, 6}, rng)); },
         [&](Graph& g, ParameterSet& p) {
           Var pooled = nn::max_pool2d(leaf(g, p, 0), 2);
           return nn::squared_norm(nn::add(pooled, nn::scale(pooled, 0.5)));
         }},
        {"flatten+spatial-mean",
         [](ParameterSet& p, Rng& rng) { p.add("x", random_tensor({2, 3, 2, 2}, rng)); },
         [&](Graph& g, ParameterSet& p) {
           Var x = leaf(g, p, 0);
           return nn::add(nn::squared_norm(nn::reshape(x, {2, 12})), nn::squared_norm(nn::spatial_mean(x)));
         }},
        {"cross-entropy", [](ParameterSet& p, Rng& rng) { p.add("z", random_tensor({5, 2}, rng, 2.0)); },
         [&](Graph& g, ParameterSet& p) { return nn::cross_entropy(leaf(g, p, 0), labels); }},
        {"soft-cross-entropy", [](ParameterSet& p, Rng& rng) { p.add("z", random_tensor({5, 2}, rng, 2.0)); },
         [&](Graph& g, ParameterSet& p) { return nn::soft_cross_entropy(leaf(g, p, 0), targets, 2.0); }},
        {"kl-divergence", two({5, 2}, {5, 2}, 2.0),
         [&](Graph& g, ParameterSet& p) { return nn::kl_divergence(leaf(g, p, 0), leaf(g, p, 1)); }},
        {"row-distance", two({5, 2}, {5, 2}),
         [&](Graph& g, ParameterSet& p) { return nn::mean_row_distance(leaf(g, p, 0), leaf(g, p, 1)); }},
        {"class-center", [](ParameterSet& p, Rng& rng) { p.add("z", random_tensor({5, 3}, rng)); },
         [&](Graph& g, ParameterSet& p) { return nn::class_center_loss(leaf(g, p, 0), labels); }},
        {"hsic-rbf", two({6, 4}, {6, 3}),
         [&](Graph& g, ParameterSet& p) {
           return nn::hsic(nn::gram_matrix(leaf(g, p, 0), rbf), nn::gram_matrix(leaf(g, p, 1), rbf));
         }},
        {"hsic-laplace", two({6, 4}, {6, 3}),
         [&](Graph& g, ParameterSet& p) {
           return nn::hsic(nn::gram_matrix(leaf(g, p, 0), lap), nn::gram_matrix(leaf(g, p, 1), lap));
         }},
        {"hsic-linear", two({6, 4}, {6, 3}),
         [&](Graph& g, ParameterSet& p) {
           return nn::hsic(nn::gram_matrix(leaf(g, p, 0), lin), nn::gram_matrix(leaf(g, p, 1), lin));
         }},
    };
    GradTally tally;
    for (const auto& [label, build, loss] : cases) {
      for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng(Rng::derive(1000, s));
        ParameterSet params(nn::Precision::f64);
        build(params, rng);
        tally.add(label, nn::gradcheck(params, loss));
      }
    }
    c.passed = tally.worst <= tolerance && tally.checked > 0;
    c.detail = std::to_string(cases.size()) + " layer types x " + std::to_string(seeds) + " seeds, max rel err " +
               fmt(tally.worst) + " (<= " + fmt(tolerance) + "), " + std::to_string(tally.checked) + " entries, " +
               std::to_string(tally.kinked) + " kink-crossing stencils skipped";
    if (!c.passed) c.detail += "; worst " + tally.where;
  });
}

Check qad_loss_gradients(std::size_t seeds, double tolerance) {
  return timed("autodiff", "qad-loss-gradients", [&](Check& c) {
    const auto spec = small_spec();
    GradTally tally;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(Rng::derive(77, s));
      std::vector<Tensor> inputs;
      for (int m = 0; m < 3; ++m) inputs.push_back(random_tensor({4, 1, 8, 8}, rng));
      std::vector<int> labels{0, 1, 1, 0};
      for (const double sigma : {6.0, 0.5}) {
        train::LossConfig cfg;
        cfg.kernel.sigma = sigma;
        auto params = nn::init_parameters(spec, Rng::derive(78, s), nn::Precision::f64);
        for (auto& p : params)
          if (p.tensor.shape.size() == 1)
            for (double& v : p.tensor.values) v = 0.05 * rng.normal();
        tally.add("qad_loss sigma " + fmt(sigma), nn::gradcheck(params, [&](Graph& g, ParameterSet& p) {
                    return train::qad_loss(spec, g, p, inputs, labels, cfg).total;
                  }));
      }
    }
    const double total = static_cast<double>(tally.checked + tally.kinked);
    c.passed = tally.worst <= tolerance && tally.checked > 0;
    c.detail = std::to_string(seeds) + " seeds x sigma {6, 0.5}, max rel err " + fmt(tally.worst) + " (<= " +
               fmt(tolerance) + "), kink-crossing stencils skipped " +
               fmt(100.0 * static_cast<double>(tally.kinked) / std::max(total, 1.0)) + "%";
    if (!c.passed) c.detail += "; worst " + tally.where;
  });
}

Check awp_ball(std::size_t trials, std::uint64_t seed) {
  return timed("awp", "ball-containment", [&](Check& c) {
    Rng rng(seed);
    std::size_t violations = 0;
    double worst = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      ParameterSet params(nn::Precision::f32);
      params.add("a", Tensor({3, 4}));
      params.add("b", Tensor({5}));
      params.add("c", Tensor({2, 2, 3}));
      for (auto& p : params) {
        const double scale = rng.uniform(0.1, 3.0);
        for (double& v : p.tensor.values) v = scale * rng.normal();
        p.tensor.grad = std::vector<double>(p.tensor.numel());
        for (double& g : *p.tensor.grad) g = rng.normal();
      }
      params.round_to_storage();
      awp::AwpConfig cfg;
      cfg.gamma = rng.uniform(1e-4, 0.1);
      cfg.eta = rng.uniform(1e-4, 1.0);
      cfg.steps = 1 + rng.below(3);
      auto state = awp::make_state(params, cfg);
      for (std::size_t k = 0; k < cfg.steps; ++k) awp::awp_ascent(params, state);
      violations += awp::ball_violations(state, params);
      worst = std::max(worst, awp::max_ball_ratio(state, params));
    }
    c.passed = violations == 0 && worst <= 1.0;
    c.detail = std::to_string(violations) + " violations in " + std::to_string(trials) + " trials, max ||phi||/(gamma||theta||) " +
               fmt(worst);
  });
}

Check awp_ascent(std::size_t draws, std::size_t required) {
  return timed("awp", "one-step-ascent", [&](Check& c) {
    quality::SynthTaskConfig cfg;
    cfg.train_size = 256;
    cfg.val_size = 8;
    cfg.test_size = 8;
    const auto data = quality::generate_dataset(cfg, quality::default_modalities());
    const auto spec = nn::ModelSpec::desk_default();
    std::size_t increased = 0;
    for (std::size_t draw = 0; draw < draws; ++draw) {
      auto params = nn::init_parameters(spec, 100 + draw);
      quality::BatchIterator it(data, data.train, 64, draw, true);
      quality::MultiQualityBatch batch;
      it.next(batch);
      auto loss_at = [&](ParameterSet& p) {
        Graph g(false);
        return train::awp_objective(spec, g, p, batch.inputs, batch.labels, awp::Objective::cross_entropy).item();
      };
      const double before = loss_at(params);
      params.zero_grad();
      {
        Graph g;
        g.backward(train::awp_objective(spec, g, params, batch.inputs, batch.labels, awp::Objective::cross_entropy));
      }
      auto state = awp::make_state(params, awp::AwpConfig{});
      awp::awp_ascent(params, state);
      awp::apply(params, state);
      if (loss_at(params) >= before) ++increased;
      awp::revert(params, state);
    }
    c.passed = increased >= required;
    c.detail = "loss increased on " + std::to_string(increased) + "/" + std::to_string(draws) + " draws (>= " +
               std::to_string(required) + ")";
  });
}

Check pointwise_bound(std::size_t samples, const std::vector<double>& temperatures, std::uint64_t seed) {
  return timed("bound", "pointwise-2loss-ge-error", [&](Check& c) {
    Rng rng(seed);
    std::vector<double> raw(2 * samples), deg(2 * samples);
    std::vector<int> labels(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      for (int k = 0; k < 2; ++k) {
        raw[2 * i + k] = 5.0 * rng.normal();
        deg[2 * i + k] = rng.below(10) == 0 ? 0.0 : 5.0 * rng.normal();
      }
    }
    std::size_t checked = 0;
    bool ok = true;
    for (double T : temperatures) {
      // bound_terms raises a numeric error on the first violating sample.
      const auto r = bound::bound_terms(raw, deg, labels, 2, T);
      checked += r.pointwise_checked;
      ok = ok && r.pointwise_checked == samples && r.term_cls >= r.lhs;
    }
    c.passed = ok;
    c.detail = std::to_string(checked) + " sample checks over " + std::to_string(temperatures.size()) +
               " temperatures, 0 violations";
  });
}

Check softmax_lipschitz(std::size_t pairs, const std::vector<double>& temperatures, std::uint64_t seed) {
  return timed("bound", "softmax-lipschitz", [&](Check& c) {
    std::ostringstream detail;
    bool ok = true;
    for (std::size_t i = 0; i < temperatures.size(); ++i) {
      const double T = temperatures[i];
      const double ratio = bound::lipschitz_check(T, pairs, Rng::derive(seed, i));
      ok = ok && ratio <= 1.0 / T + 1e-9;
      detail << (i ? ", " : "") << "T=" << T << " max " << fmt(ratio) << " <= " << fmt(1.0 / T);
    }
    c.passed = ok;
    c.detail = detail.str() + " (" + std::to_string(pairs) + " pairs each)";
  });
}

Check auc_pair_counting(std::size_t sets, double tolerance, std::uint64_t seed) {
  return timed("auc", "pair-counting", [&](Check& c) {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t s = 0; s < sets; ++s) {
      const std::size_t n = 20 + rng.below(400);
      const std::size_t distinct = 1 + rng.below(s % 2 ? 5 : 1000);  // odd sets carry heavy ties
      std::vector<double> scores(n);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = static_cast<double>(rng.below(distinct)) / static_cast<double>(distinct);
        labels[i] = static_cast<int>(rng.below(2));
      }
      labels[0] = 0;
      labels[1] = 1;
      const double fast = metrics::auc(scores, labels);
      worst = std::max(worst, std::abs(fast - auc_by_pairs(scores, labels)));
      // strictly monotone transform must not change the value at all
      std::vector<double> transformed(n);
      for (std::size_t i = 0; i < n; ++i) transformed[i] = std::exp(3.0 * scores[i]) - 7.0;
      if (metrics::auc(transformed, labels) != fast) worst = std::max(worst, 1.0);
    }
    c.passed = worst <= tolerance;
    c.detail = "max |auc - pair count| " + fmt(worst) + " over " + std::to_string(sets) + " sets (<= " + fmt(tolerance) +
               "), monotone-transform invariant";
  });
}

std::vector<Check> run_suite(const std::string& name) {
  std::vector<Check> out;
  const bool all = name == "all";
  if (!all && std::find(suite_names().begin(), suite_names().end(), name) == suite_names().end()) {
    std::string known;
    for (const auto& s : suite_names()) known += s + ", ";
    fail(ErrorKind::usage, "unknown verify suite '" + name + "' (known: " + known + "all)");
  }
  if (all || name == "kernels") {
    out.push_back(hsic_expansion(60, 1e-10, 1));
    out.push_back(permutation_power(20, 96, 100, 0.01, 18, 2));
    out.push_back(rff_convergence(10, 64, 128, 2048, 3));
  }
  if (all || name == "autodiff") {
    out.push_back(layer_gradients(3, 1e-4));
    out.push_back(qad_loss_gradients(2, 1e-4));
  }
  if (all || name == "awp") {
    out.push_back(awp_ball(500, 4));
    out.push_back(awp_ascent(30, 27));
  }
  if (all || name == "bound") {
    out.push_back(pointwise_bound(10000, {0.5, 1.0, 2.0}, 5));
    out.push_back(softmax_lipschitz(20000, {0.5, 1.0, 2.0}, 6));
  }
  if (all || name == "auc") out.push_back(auc_pair_counting(100, 1e-12, 7));
  return out;
}

void print_table(std::ostream& out, const std::vector<Check>& checks) {
  std::size_t w_suite = 5, w_name = 5;
  for (const auto& c : checks) {
    w_suite = std::max(w_suite, c.suite.size());
    w_name = std::max(w_name, c.name.size());
  }
  out << std::left << std::setw(static_cast<int>(w_suite)) << "suite" << "  " << std::setw(static_cast<int>(w_name))
      << "check" << "  result  time     detail\n";
  std::size_t failed = 0;
  for (const auto& c : checks) {
    std::ostringstream t;
    t << std::fixed << std::setprecision(2) << c.seconds << "s";
    out << std::left << std::setw(static_cast<int>(w_suite)) << c.suite << "  " << std::setw(static_cast<int>(w_name))
        << c.name << "  " << (c.passed ? "PASS  " : "FAIL  ") << "  " << std::setw(7) << t.str() << "  " << c.detail
        << '\n';
    failed += !c.passed;
  }
  out << checks.size() - failed << "/" << checks.size() << " checks passed\n";
}

}  // namespace qad::verify
