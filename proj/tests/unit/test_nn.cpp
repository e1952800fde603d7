#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "qad/error.hpp"
#include "qad/nn/checkpoint.hpp"
#include "qad/nn/graph.hpp"
#include "qad/nn/model.hpp"
#include "qad/rng.hpp"
#include "support/gradcheck.hpp"

using namespace qad;
using namespace qad::nn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values) v = scale * rng.normal();
  return t;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected qad::Error");
  return ErrorKind::io;
}

ModelSpec small_spec() {
  ModelSpec spec;
  spec.input = {1, 8, 8};
  spec.layers = {LayerSpec::conv(3, 3), LayerSpec::relu(), LayerSpec::max_pool(2),
                 LayerSpec::conv(4, 3, 2), LayerSpec::relu(), LayerSpec::flatten(),
                 LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(2)};
  spec.tap_layers = {2, 4, 7};
  return spec;
}

constexpr double kTolerance = 1e-4;

// Runs the finite-difference oracle over 20 seeds for a loss assembled from
// inputs stored in a ParameterSet.
template <typename Build, typename Loss>
void check_layer(const std::string& label, Build&& build, Loss&& loss) {
  std::size_t checked = 0, kinked = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    ParameterSet params(Precision::f64);
    build(params, rng);
    const auto r = qad::testing::gradcheck(params, loss);
    INFO(label << " seed " << seed << " worst " << r.worst);
    CHECK(r.max_rel <= kTolerance);
    checked += r.checked;
    kinked += r.kinked;
    worst = std::max(worst, r.max_rel);
  }
  INFO(label << " kinked " << kinked << " of " << checked + kinked);
  CHECK(checked > 0);
  CHECK(kinked * 100 <= checked + kinked);
}

}  // namespace

TEST_CASE("desk default spec is valid with three taps") {
  const auto spec = ModelSpec::desk_default();
  CHECK_NOTHROW(spec.validate());
  const auto shapes = spec.layer_shapes();
  CHECK(shapes[2] == Shape{8, 8, 8});
  CHECK(shapes[5] == Shape{16, 4, 4});
  CHECK(shapes[8] == Shape{64});
  CHECK(shapes.back() == Shape{2});
}

TEST_CASE("invalid model specs are rejected") {
  auto spec = ModelSpec::desk_default();
  spec.tap_layers = {42};
  CHECK(kind_of([&] { spec.validate(); }) == ErrorKind::invalid_config);
  spec = ModelSpec::desk_default();
  spec.layers.back() = LayerSpec::dense(3);
  CHECK(kind_of([&] { spec.validate(); }) == ErrorKind::invalid_config);
  spec = ModelSpec::desk_default();
  spec.layers.insert(spec.layers.begin(), LayerSpec::dense(4));
  CHECK(kind_of([&] { spec.validate(); }) == ErrorKind::invalid_config);
}

TEST_CASE("zero-weight network outputs zero logits") {
  const auto spec = ModelSpec::desk_default();
  auto params = init_parameters(spec, 1);
  for (auto& p : params) std::fill(p.tensor.values.begin(), p.tensor.values.end(), 0.0);
  Rng rng(2);
  Graph graph(false);
  const auto out = forward(spec, graph, params, random_tensor({3, 1, 16, 16}, rng));
  for (double v : out.logits.value().values) CHECK(v == 0.0);
}

TEST_CASE("single dense layer by hand") {
  ModelSpec spec;
  spec.input = {1, 1, 2};
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(2)};
  ParameterSet params;
  params.add("dense1.weight", Tensor({2, 2}, {1.0, 0.0, 0.5, 1.0}));
  params.add("dense1.bias", Tensor({2}, {0.0, 1.0}));
  Graph graph(false);
  const auto out = forward(spec, graph, params, Tensor({2, 1, 1, 2}, {3.0, 4.0, -1.0, 2.0}));
  // [3,4] -> [3, 1.5+4+1]; [-1,2] -> [-1, -0.5+2+1]
  CHECK(out.logits.value().values == std::vector<double>{3.0, 6.5, -1.0, 2.5});
}

TEST_CASE("recorded and unrecorded forwards agree bit for bit") {
  const auto spec = ModelSpec::desk_default();
  auto params = init_parameters(spec, 7);
  Rng rng(3);
  const auto x = random_tensor({4, 1, 16, 16}, rng);
  Graph recorded(true);
  Graph replay(false);
  const auto a = forward(spec, recorded, params, x);
  const auto b = forward(spec, replay, params, x);
  CHECK(a.logits.value().values == b.logits.value().values);
  for (const auto& [layer, tap] : a.taps) CHECK(tap.flat.value().values == b.taps.at(layer).flat.value().values);
}

TEST_CASE("taps are keyed by the tap layers and flatten is a bijection") {
  const auto spec = ModelSpec::desk_default();
  auto params = init_parameters(spec, 7);
  Rng rng(4);
  Graph graph(false);
  const auto out = forward(spec, graph, params, random_tensor({5, 1, 16, 16}, rng));
  REQUIRE(out.taps.size() == 3);
  CHECK(out.taps.at(2).flat.shape() == Shape{5, 512});
  CHECK(out.taps.at(5).flat.shape() == Shape{5, 256});
  CHECK(out.taps.at(8).flat.shape() == Shape{5, 64});
  CHECK(out.taps.at(5).feature_shape == Shape{16, 4, 4});

  const auto z = random_tensor({3, 4, 2, 5}, rng);
  const auto flat = flatten_tap(z);
  CHECK(flat.shape == Shape{3, 40});
  // channel-major: sample 1, channel 2, y 1, x 3
  CHECK(flat.values[1 * 40 + 2 * 10 + 1 * 5 + 3] == z.values[((1 * 4 + 2) * 2 + 1) * 5 + 3]);
  const auto back = unflatten_tap(flat, {4, 2, 5});
  CHECK(back.shape == z.shape);
  CHECK(back.values == z.values);
}

TEST_CASE("forward rejects mismatched input") {
  const auto spec = ModelSpec::desk_default();
  auto params = init_parameters(spec, 1);
  Graph graph(false);
  CHECK(kind_of([&] { forward(spec, graph, params, Tensor({2, 1, 8, 8})); }) == ErrorKind::invalid_input);
}

TEST_CASE("backward analytic cases") {
  ParameterSet params(Precision::f64);
  Rng rng(5);
  params.add("a", random_tensor({3, 2}, rng));
  params.add("b", random_tensor({4}, rng));
  {
    Graph graph;
    Var loss = add(sum(graph.leaf(params[0].tensor)), sum(graph.leaf(params[1].tensor)));
    graph.backward(loss);
    for (const auto& p : params)
      for (double g : *p.tensor.grad) CHECK(g == 1.0);
  }
  params.zero_grad();
  {
    Graph graph;
    Var loss = scale(add(squared_norm(graph.leaf(params[0].tensor)), squared_norm(graph.leaf(params[1].tensor))), 0.5);
    graph.backward(loss);
    for (const auto& p : params)
      for (std::size_t i = 0; i < p.tensor.numel(); ++i) CHECK((*p.tensor.grad)[i] == doctest::Approx(p.tensor.values[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward usage errors") {
  Tensor t({2}, {1.0, 2.0});
  t.requires_grad = true;
  Graph unrecorded(false);
  Var loss = sum(unrecorded.leaf(t));
  CHECK(kind_of([&] { unrecorded.backward(loss); }) == ErrorKind::usage);

  Graph constants;
  Var c = sum(constants.input(Tensor({2}, {1.0, 2.0})));
  CHECK(kind_of([&] { constants.backward(c); }) == ErrorKind::usage);

  Graph graph;
  Var x = graph.leaf(t);
  Var s = sum(x);
  graph.backward(s);
  CHECK(kind_of([&] { (void)x.value(); }) == ErrorKind::usage);  // tape freed
  CHECK(kind_of([&] { graph.backward(s); }) == ErrorKind::usage);
}

TEST_CASE("gradient check: conv2d") {
  for (std::size_t stride : {1u, 2u}) {
    check_layer("conv2d",
                [&](ParameterSet& p, Rng& rng) {
                  p.add("x", random_tensor({2, 2, 6, 6}, rng));
                  p.add("w", random_tensor({3, 2, 3, 3}, rng, 0.5));
                  p.add("b", random_tensor({3}, rng));
                },
                [&](Graph& g, ParameterSet& p) {
                  return squared_norm(conv2d(g.leaf(p[0].tensor), g.leaf(p[1].tensor), g.leaf(p[2].tensor), stride));
                });
  }
}

TEST_CASE("gradient check: dense, relu, max pool, reshape, spatial mean") {
  check_layer("linear",
              [](ParameterSet& p, Rng& rng) {
                p.add("x", random_tensor({3, 5}, rng));
                p.add("w", random_tensor({4, 5}, rng));
                p.add("b", random_tensor({4}, rng));
              },
              [](Graph& g, ParameterSet& p) {
                return squared_norm(linear(g.leaf(p[0].tensor), g.leaf(p[1].tensor), g.leaf(p[2].tensor)));
              });
  check_layer("relu",
              [](ParameterSet& p, Rng& rng) {
                p.add("x", random_tensor({4, 6}, rng));
                p.add("w", random_tensor({3, 6}, rng));
                p.add("b", random_tensor({3}, rng));
              },
              [](Graph& g, ParameterSet& p) {
                return squared_norm(linear(relu(g.leaf(p[0].tensor)), g.leaf(p[1].tensor), g.leaf(p[2].tensor)));
              });
  check_layer("max_pool2d",
              [](ParameterSet& p, Rng& rng) { p.add("x", random_tensor({2, 3, 4, 6}, rng)); },
              [](Graph& g, ParameterSet& p) {
                Var pooled = max_pool2d(g.leaf(p[0].tensor), 2);
                return squared_norm(add(pooled, scale(pooled, 0.5)));
              });
  check_layer("reshape+spatial_mean",
              [](ParameterSet& p, Rng& rng) { p.add("x", random_tensor({2, 3, 2, 2}, rng)); },
              [](Graph& g, ParameterSet& p) {
                Var x = g.leaf(p[0].tensor);
                return add(squared_norm(reshape(x, {2, 12})), squared_norm(spatial_mean(x)));
              });
  check_layer("slice+concat",
              [](ParameterSet& p, Rng& rng) { p.add("x", random_tensor({4, 3}, rng)); },
              [](Graph& g, ParameterSet& p) {
                Var x = g.leaf(p[0].tensor);
                std::vector<Var> parts{slice_rows(x, 2, 4), scale(slice_rows(x, 0, 2), 3.0)};
                return squared_norm(sub(concat_rows(parts), x));
              });
}

TEST_CASE("gradient check: losses") {
  const std::vector<int> labels{0, 1, 1, 0, 1};
  check_layer("cross_entropy",
              [](ParameterSet& p, Rng& rng) { p.add("z", random_tensor({5, 2}, rng, 2.0)); },
              [&](Graph& g, ParameterSet& p) { return cross_entropy(g.leaf(p[0].tensor), labels); });
  Tensor targets({5, 2}, {0.9, 0.1, 0.3, 0.7, 0.5, 0.5, 1.0, 0.0, 0.2, 0.8});
  check_layer("soft_cross_entropy",
              [](ParameterSet& p, Rng& rng) { p.add("z", random_tensor({5, 2}, rng, 2.0)); },
              [&](Graph& g, ParameterSet& p) { return soft_cross_entropy(g.leaf(p[0].tensor), targets, 2.0); });
  check_layer("kl_divergence",
              [](ParameterSet& p, Rng& rng) {
                p.add("p", random_tensor({5, 2}, rng, 2.0));
                p.add("q", random_tensor({5, 2}, rng, 2.0));
              },
              [](Graph& g, ParameterSet& p) { return kl_divergence(g.leaf(p[0].tensor), g.leaf(p[1].tensor)); });
  check_layer("mean_row_distance",
              [](ParameterSet& p, Rng& rng) {
                p.add("a", random_tensor({5, 2}, rng));
                p.add("b", random_tensor({5, 2}, rng));
              },
              [](Graph& g, ParameterSet& p) { return mean_row_distance(g.leaf(p[0].tensor), g.leaf(p[1].tensor)); });
  check_layer("class_center_loss",
              [](ParameterSet& p, Rng& rng) { p.add("z", random_tensor({5, 3}, rng)); },
              [&](Graph& g, ParameterSet& p) { return class_center_loss(g.leaf(p[0].tensor), labels); });
}

TEST_CASE("gradient check: gram matrices and hsic") {
  using qad::kernels::BandwidthMode;
  using qad::kernels::KernelFamily;
  for (auto family : {KernelFamily::gaussian_rbf, KernelFamily::laplace, KernelFamily::linear}) {
    const qad::kernels::KernelConfig cfg{family, 0.7, BandwidthMode::fixed, true};
    check_layer("hsic " + std::string(to_string(family)),
                [](ParameterSet& p, Rng& rng) {
                  p.add("u", random_tensor({6, 4}, rng));
                  p.add("v", random_tensor({6, 3}, rng));
                },
                [&](Graph& g, ParameterSet& p) {
                  return hsic(gram_matrix(g.leaf(p[0].tensor), cfg), gram_matrix(g.leaf(p[1].tensor), cfg));
                });
  }
}

// The median bandwidth is a stop-gradient: the analytic gradient must equal
// the one obtained with the bandwidth frozen at the resolved median.
TEST_CASE("median bandwidth is treated as a constant") {
  using qad::kernels::BandwidthMode;
  using qad::kernels::KernelFamily;
  for (auto family : {KernelFamily::gaussian_rbf, KernelFamily::laplace}) {
    Rng rng(31);
    Tensor u = random_tensor({7, 5}, rng);
    u.requires_grad = true;
    const qad::kernels::KernelConfig median{family, 1.0, BandwidthMode::median_heuristic, true};
    const qad::kernels::SampleMatrix samples(7, 5, u.values);
    auto frozen = median;
    frozen.bandwidth_mode = BandwidthMode::fixed;
    frozen.sigma = qad::kernels::resolve_bandwidth(samples, median);
    const Tensor v = random_tensor({7, 2}, rng);

    std::vector<std::vector<double>> grads;
    for (const auto& cfg : {median, frozen}) {
      u.zero_grad();
      Graph g;
      g.backward(hsic(gram_matrix(g.leaf(u), cfg), gram_matrix(g.input(v), frozen)));
      grads.push_back(*u.grad);
    }
    CHECK(grads[0] == grads[1]);
  }
}

TEST_CASE("gradient check: full network with cross-entropy") {
  const auto spec = small_spec();
  const std::vector<int> labels{0, 1, 1};
  std::size_t kinked = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto params = init_parameters(spec, seed, Precision::f64);
    for (auto& p : params)
      if (p.tensor.shape.size() == 1)
        for (double& v : p.tensor.values) v = 0.1;  // nonzero biases
    Rng rng(77 + seed);
    const auto x = random_tensor({3, 1, 8, 8}, rng);
    const auto r = qad::testing::gradcheck(params, [&](Graph& g, ParameterSet& p) {
      return cross_entropy(forward(spec, g, p, x).logits, labels);
    });
    INFO("seed " << seed << " worst " << r.worst);
    CHECK(r.max_rel <= kTolerance);
    kinked += r.kinked;
    total += r.kinked + r.checked;
  }
  INFO("kinked " << kinked << " of " << total);
  CHECK(kinked * 20 <= total);
}

TEST_CASE("softmax with temperature") {
  const auto half = softmax_temperature(Tensor({1, 2}, {0.0, 0.0}), 3.0);
  CHECK(half.values == std::vector<double>{0.5, 0.5});
  const auto p = softmax_temperature(Tensor({1, 2}, {1.0, 0.0}), 1.0);
  CHECK(p.values[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-15));
  CHECK(p.values[0] == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(p.values[1] == doctest::Approx(0.268941).epsilon(1e-6));
  const auto flat = softmax_temperature(Tensor({1, 2}, {40.0, -25.0}), 1e6);
  CHECK(std::abs(flat.values[0] - 0.5) <= 1e-3);
  CHECK(kind_of([] { softmax_temperature(Tensor({1, 2}), 0.0); }) == ErrorKind::invalid_config);
  CHECK(kind_of([] { softmax_temperature(Tensor({1, 2}), -1.0); }) == ErrorKind::invalid_config);

  Rng rng(8);
  for (int t = 0; t < 1000; ++t) {
    const double T = rng.uniform(0.1, 5.0);
    Tensor a({1, 2}, {rng.normal() * 10, rng.normal() * 10});
    Tensor b({1, 2}, {rng.normal() * 10, rng.normal() * 10});
    const auto pa = softmax_temperature(a, T);
    const auto pb = softmax_temperature(b, T);
    CHECK(std::abs(pa.values[0] + pa.values[1] - 1.0) <= 1e-12);
    const double num = std::hypot(pa.values[0] - pb.values[0], pa.values[1] - pb.values[1]);
    const double den = std::hypot(a.values[0] - b.values[0], a.values[1] - b.values[1]);
    CHECK(num <= den / T + 1e-12);
  }
}

TEST_CASE("sigma loss") {
  const std::vector<double> zero{0.0, 0.0};
  CHECK(sigma_loss(zero, 0, 1.0) == 0.5);
  CHECK(sigma_loss(zero, 1, 2.0) == 0.5);
  const std::vector<double> confident{800.0, 0.0};
  CHECK(sigma_loss(confident, 0, 1.0) == 0.0);
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::vector<double> z{rng.normal() * 3, rng.normal() * 3};
    const int y = static_cast<int>(rng.below(2));
    const double T = rng.uniform(0.2, 4.0);
    const auto p = softmax_temperature(Tensor({1, 2}, z), T);
    CHECK(std::abs(sigma_loss(z, y, T) - (1.0 - p.values[static_cast<std::size_t>(y)])) <= 1e-12);
  }
  CHECK(kind_of([&] { sigma_loss(zero, 2, 1.0); }) == ErrorKind::invalid_input);
}

TEST_CASE("cross entropy values") {
  Graph g(false);
  const std::vector<int> y0{0};
  CHECK(cross_entropy(g.input(Tensor({1, 2}, {0.0, 0.0})), y0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy(g.input(Tensor({1, 2}, {20.0, -20.0})), y0).item() <= 1e-8);
  const std::vector<int> bad{3};
  CHECK(kind_of([&] { cross_entropy(g.input(Tensor({1, 2})), bad); }) == ErrorKind::invalid_input);
}

TEST_CASE("initialization is seeded and f32-representable") {
  const auto spec = ModelSpec::desk_default();
  const auto a = init_parameters(spec, 9);
  const auto b = init_parameters(spec, 9);
  const auto c = init_parameters(spec, 10);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& p : a) {
    CHECK(p.tensor.requires_grad);
    for (double v : p.tensor.values) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto spec = ModelSpec::desk_default();
  auto params = init_parameters(spec, 21);
  const auto dir = std::filesystem::temp_directory_path() / "qad_nn_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.ckpt";
  save_checkpoint(params, path);
  auto loaded = load_checkpoint(path, spec);
  CHECK(checkpoint_bytes(loaded) == checkpoint_bytes(params));
  CHECK(loaded == params);

  Rng rng(6);
  const auto x = random_tensor({3, 1, 16, 16}, rng);
  Graph g1(false), g2(false);
  CHECK(forward(spec, g1, params, x).logits.value().values ==
        forward(spec, g2, loaded, x).logits.value().values);

  auto other = spec;
  other.layers[7] = LayerSpec::dense(32);
  CHECK(kind_of([&] { load_checkpoint(path, other); }) == ErrorKind::shape);

  std::string bytes = checkpoint_bytes(params);
  std::string corrupt = bytes;
  corrupt[0] = 'X';
  std::istringstream bad_magic(corrupt);
  CHECK(kind_of([&] { read_checkpoint(bad_magic); }) == ErrorKind::format);
  corrupt = bytes;
  corrupt[8] = 9;  // version
  std::istringstream bad_version(corrupt);
  CHECK(kind_of([&] { read_checkpoint(bad_version); }) == ErrorKind::format);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK(kind_of([&] { read_checkpoint(truncated); }) == ErrorKind::format);
  CHECK(kind_of([&] { load_checkpoint(dir / "missing.ckpt"); }) == ErrorKind::io);
  std::filesystem::remove_all(dir);
}
