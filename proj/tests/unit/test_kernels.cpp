#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "qad/error.hpp"
#include "qad/kernels.hpp"
#include "support/oracles.hpp"

using namespace qad;
using namespace qad::kernels;
using qad::testing::Matrix;

namespace {

SampleMatrix to_samples(const Matrix& m) {
  SampleMatrix out(m.size(), m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) out(i, j) = m[i][j];
  return out;
}

SampleMatrix random_samples(std::size_t n, std::size_t d, Rng& rng, double scale = 1.0) {
  return to_samples(qad::testing::random_matrix(n, d, rng, scale));
}

KernelConfig rbf(double sigma, bool normalize = true) {
  return {KernelFamily::gaussian_rbf, sigma, BandwidthMode::fixed, normalize};
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

}  // namespace

TEST_CASE("gram of identical rows is all ones") {
  SampleMatrix X(2, 3, {0.5, -1.0, 2.0, 0.5, -1.0, 2.0});
  for (auto family : {KernelFamily::gaussian_rbf, KernelFamily::laplace}) {
    const auto K = gram(X, {family, 1.5, BandwidthMode::fixed, true});
    for (double v : K.values) CHECK(v == 1.0);
    CHECK_FALSE(K.centered);
  }
}

TEST_CASE("gram analytic off-diagonal") {
  // s = 2, sigma = sqrt(2): s^2 / (2 sigma^2) = 1
  SampleMatrix X(2, 1, {0.0, 2.0});
  const auto K = gram(X, rbf(std::sqrt(2.0), false));
  CHECK(K(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(K(0, 1) == doctest::Approx(0.367879).epsilon(1e-6));
}

TEST_CASE("gram matches pairwise-distance loop") {
  Rng rng(11);
  const Matrix x = qad::testing::random_matrix(5, 3, rng);
  for (bool normalize : {true, false}) {
    const auto K = gram(to_samples(x), rbf(0.8, normalize));
    const Matrix ref = qad::testing::rbf_gram_loop(x, 0.8, normalize);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(K(i, j) - ref[i][j]) <= 1e-12);
  }
}

TEST_CASE("gram rejects bad input and config") {
  SampleMatrix X(2, 1, {0.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK(kind_of([&] { gram(X, rbf(1.0)); }) == ErrorKind::invalid_input);
  SampleMatrix Y(2, 1, {0.0, 1.0});
  CHECK(kind_of([&] { gram(Y, rbf(0.0)); }) == ErrorKind::invalid_config);
  CHECK(kind_of([&] { gram(Y, rbf(-1.0)); }) == ErrorKind::invalid_config);
  // linear ignores sigma
  CHECK_NOTHROW(gram(Y, {KernelFamily::linear, -1.0, BandwidthMode::fixed, true}));
}

TEST_CASE("gram is symmetric PSD and thread-count independent") {
  Rng rng(3);
  const auto X = random_samples(37, 6, rng);
  for (auto family : {KernelFamily::gaussian_rbf, KernelFamily::laplace, KernelFamily::linear}) {
    const KernelConfig cfg{family, 1.3, BandwidthMode::fixed, true};
    const auto K1 = gram(X, cfg, 1u);
    for (unsigned threads : {2u, 3u, 8u}) {
      const auto Kt = gram(X, cfg, threads);
      CHECK(Kt.values == K1.values);
    }
    for (std::size_t i = 0; i < K1.n; ++i)
      for (std::size_t j = 0; j < K1.n; ++j) CHECK(K1(i, j) == K1(j, i));
    // PSD spot check: v^T K v >= -eps for random v
    for (int t = 0; t < 20; ++t) {
      std::vector<double> v(K1.n);
      for (auto& e : v) e = rng.normal();
      double q = 0.0;
      for (std::size_t i = 0; i < K1.n; ++i)
        for (std::size_t j = 0; j < K1.n; ++j) q += v[i] * K1(i, j) * v[j];
      CHECK(q >= -1e-9);
    }
  }
}

TEST_CASE("median heuristic picks the median normalized distance") {
  SampleMatrix X(3, 1, {0.0, 1.0, 3.0});  // distances 1, 3, 2
  KernelConfig cfg = rbf(6.0, false);
  cfg.bandwidth_mode = BandwidthMode::median_heuristic;
  CHECK(resolve_bandwidth(X, cfg) == 2.0);
  SampleMatrix same(3, 1, {1.0, 1.0, 1.0});
  CHECK(resolve_bandwidth(same, cfg) == 6.0);
}

TEST_CASE("center examples") {
  GramMatrix ones{4, std::vector<double>(16, 1.0), false};
  for (double v : center(ones).values) CHECK(v == 0.0);

  GramMatrix eye{2, {1.0, 0.0, 0.0, 1.0}, false};
  const auto c = center(eye);
  CHECK(c.centered);
  CHECK(c.values == std::vector<double>{0.5, -0.5, -0.5, 0.5});
}

TEST_CASE("center equals materialized H K H") {
  Rng rng(5);
  Matrix k = qad::testing::random_matrix(6, 6, rng);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < i; ++j) k[i][j] = k[j][i];
  GramMatrix K{6, {}, false};
  for (auto& row : k) K.values.insert(K.values.end(), row.begin(), row.end());
  const Matrix H = qad::testing::centering_matrix(6);
  const Matrix ref = qad::testing::matmul(qad::testing::matmul(H, k), H);
  const auto Kc = center(K);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(Kc(i, j) - ref[i][j]) <= 1e-12);
}

TEST_CASE("center is idempotent and annihilates the ones vector") {
  Rng rng(8);
  const auto K = gram(random_samples(12, 4, rng), rbf(1.0));
  const auto once = center(K);
  const auto twice = center(once);
  for (std::size_t idx = 0; idx < once.values.size(); ++idx) {
    CHECK(std::abs(once.values[idx] - twice.values[idx]) <= 1e-12);
  }
  for (std::size_t i = 0; i < once.n; ++i) {
    double row = 0.0;
    double col = 0.0;
    for (std::size_t j = 0; j < once.n; ++j) {
      row += once(i, j);
      col += once(j, i);
    }
    CHECK(std::abs(row) <= 1e-10);
    CHECK(std::abs(col) <= 1e-10);
  }
}

TEST_CASE("hsic_biased degenerate and self-dependent cases") {
  Rng rng(2);
  const auto V = random_samples(10, 3, rng);
  SampleMatrix constant(10, 3);
  for (auto& v : constant.data()) v = 0.7;
  CHECK(hsic_biased(gram(constant, rbf(1.0)), gram(V, rbf(1.0))) == 0.0);

  const auto K = gram(V, rbf(1.0));
  CHECK(hsic_biased(K, K) > 0.0);
}

TEST_CASE("hsic_biased errors") {
  GramMatrix one{1, {1.0}, false};
  CHECK(kind_of([&] { hsic_biased(one, one); }) == ErrorKind::invalid_input);
  GramMatrix two{2, {1, 0, 0, 1}, false};
  GramMatrix three{3, std::vector<double>(9, 1.0), false};
  CHECK(kind_of([&] { hsic_biased(two, three); }) == ErrorKind::invalid_input);
}

TEST_CASE("hsic_biased matches the V-statistic expansion") {
  Rng rng(21);
  for (std::size_t n : {8u, 16u}) {
    const auto U = random_samples(n, 4, rng);
    auto V = random_samples(n, 3, rng);
    for (std::size_t i = 0; i < n; ++i) V(i, 0) += U(i, 0);  // some dependence
    const auto cfg_k = rbf(1.1);
    const KernelConfig cfg_l{KernelFamily::laplace, 0.9, BandwidthMode::fixed, true};
    const double biased = hsic_biased(gram(U, cfg_k), gram(V, cfg_l));
    const double nn = static_cast<double>(n);
    const double expansion = hsic_oracle(U, V, cfg_k, cfg_l) * nn * nn / ((nn - 1) * (nn - 1));
    CHECK(qad::testing::relative_error(biased, expansion, 1e-300) <= 1e-10);
  }
}

TEST_CASE("hsic_oracle closed forms") {
  Rng rng(4);
  const auto V = random_samples(6, 2, rng);
  SampleMatrix constant(6, 2);
  CHECK(std::abs(hsic_oracle(constant, V, rbf(1.0), rbf(1.0))) <= 1e-15);

  // n = 2, K = L = [[1, a], [a, 1]]: tr(KHLH) = (1 - a)^2, so the V-statistic
  // is (1 - a)^2 / n^2 and the biased estimator (1 - a)^2 / (n - 1)^2.
  SampleMatrix U(2, 1, {0.0, 1.5});
  const auto cfg = rbf(1.0, false);
  const double a = std::exp(-1.5 * 1.5 / 2.0);
  CHECK(hsic_oracle(U, U, cfg, cfg) == doctest::Approx((1 - a) * (1 - a) / 4.0).epsilon(1e-14));
  const auto K = gram(U, cfg);
  CHECK(hsic_biased(K, K) == doctest::Approx((1 - a) * (1 - a)).epsilon(1e-14));
}

TEST_CASE("hsic_biased is symmetric and jointly permutation invariant") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 5 + rng.below(20);
    const auto U = random_samples(n, 3, rng);
    const auto V = random_samples(n, 2, rng);
    const auto K = gram(U, rbf(0.7));
    const auto L = gram(V, {KernelFamily::laplace, 1.2, BandwidthMode::fixed, false});
    const double h = hsic_biased(K, L);
    CHECK(hsic_biased(L, K) == h);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(std::span<std::size_t>(perm), rng);
    SampleMatrix Up(n, 3), Vp(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) Up(i, c) = U(perm[i], c);
      for (std::size_t c = 0; c < 2; ++c) Vp(i, c) = V(perm[i], c);
    }
    const double hp = hsic_biased(gram(Up, rbf(0.7)),
                                  gram(Vp, {KernelFamily::laplace, 1.2, BandwidthMode::fixed, false}));
    CHECK(std::abs(hp - h) <= 1e-10 * std::max(1.0, std::abs(h)));
  }
}

TEST_CASE("hsic backward matches finite differences through the Gram matrices") {
  Rng rng(14);
  const std::size_t n = 6;
  auto U = random_samples(n, 3, rng);
  const auto V = random_samples(n, 2, rng);
  for (auto family : {KernelFamily::gaussian_rbf, KernelFamily::laplace, KernelFamily::linear}) {
    const KernelConfig cfg{family, 0.8, BandwidthMode::fixed, true};
    const auto L = gram(V, cfg);
    auto loss = [&](const SampleMatrix& X) { return hsic_biased(gram(X, cfg), L); };
    const auto K = gram(U, cfg);
    std::vector<double> dK(n * n, 0.0), dL(n * n, 0.0), dU(n * 3, 0.0);
    hsic_biased_backward(K, L, 1.0, dK, dL);
    gram_backward(U, K, dK, cfg, cfg.sigma, dU);
    const double h = 1e-5;
    for (std::size_t idx = 0; idx < U.data().size(); ++idx) {
      const double orig = U.data()[idx];
      U.data()[idx] = orig + h;
      const double up = loss(U);
      U.data()[idx] = orig - h;
      const double down = loss(U);
      U.data()[idx] = orig;
      const double fd = (up - down) / (2 * h);
      CHECK(qad::testing::relative_error(dU[idx], fd, 1e-7) <= 1e-5);
    }
  }
}

TEST_CASE("permutation test separates dependence from independence") {
  Rng rng(31);
  const std::size_t n = 128;
  int dependent_rejections = 0;
  int independent_rejections = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    const auto U = random_samples(n, 2, rng);
    auto noisy = U;
    for (auto& v : noisy.data()) v += 0.3 * rng.normal();
    const auto W = random_samples(n, 2, rng);
    const auto cfg = rbf(1.0);
    if (permutation_test(U, noisy, cfg, cfg, 100, 1000 + t).p_value <= 0.05) ++dependent_rejections;
    if (permutation_test(U, W, cfg, cfg, 100, 2000 + t).p_value <= 0.05) ++independent_rejections;
  }
  CHECK(dependent_rejections == trials);
  CHECK(independent_rejections <= 4);
}

TEST_CASE("rff kernel approximation") {
  Rng rng(17);
  const std::vector<double> x{0.3, -0.5, 1.1, 0.2};
  const std::vector<double> y{0.1, 0.4, 0.7, -0.6};
  SampleMatrix X(2, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    X(0, c) = x[c];
    X(1, c) = y[c];
  }
  for (auto family : {KernelFamily::gaussian_rbf, KernelFamily::laplace}) {
    const KernelConfig cfg{family, 0.7, BandwidthMode::fixed, true};
    const double exact = kernel_value(x, y, cfg, cfg.sigma);
    double mean = 0.0;
    double self = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto Z = rff_features(X, rff_map(4, 8192, cfg, seed));
      double dot = 0.0;
      double dot_self = 0.0;
      for (std::size_t j = 0; j < Z.cols(); ++j) {
        dot += Z(0, j) * Z(1, j);
        dot_self += Z(0, j) * Z(0, j);
      }
      mean += dot / 100.0;
      self += dot_self / 100.0;
    }
    CHECK(std::abs(mean - exact) <= 0.02 * exact);
    CHECK(std::abs(self - 1.0) <= 0.02);
  }
}

TEST_CASE("rff determinism and unsupported kernels") {
  const auto cfg = rbf(1.0);
  const auto a = rff_map(3, 64, cfg, 99);
  const auto b = rff_map(3, 64, cfg, 99);
  CHECK(a.frequencies == b.frequencies);
  CHECK(a.phases == b.phases);
  Rng rng(1);
  const auto X = random_samples(5, 3, rng);
  CHECK(rff_features(X, a).data() == rff_features(X, b).data());
  for (double p : a.phases) CHECK((p >= 0.0 && p < 2 * 3.14159265358979324));
  CHECK(kind_of([&] { rff_map(3, 64, {KernelFamily::linear, 1.0, BandwidthMode::fixed, true}, 1); }) ==
        ErrorKind::unsupported_kernel);
}

TEST_CASE("hsic_rff equals hsic_biased on the feature Gram matrices") {
  Rng rng(23);
  const KernelConfig linear{KernelFamily::linear, 1.0, BandwidthMode::fixed, false};
  // small n (Gram route) and large n (cross-covariance route)
  for (std::size_t n : {6u, 40u}) {
    const auto Zu = random_samples(n, 5, rng);
    const auto Zv = random_samples(n, 4, rng);
    const double exact = hsic_biased(gram(Zu, linear), gram(Zv, linear));
    CHECK(qad::testing::relative_error(hsic_rff(Zu, Zv), exact) <= 1e-10);
  }
  SampleMatrix constant(8, 5);
  for (auto& v : constant.data()) v = 0.25;
  CHECK(hsic_rff(constant, random_samples(8, 5, rng)) == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(kind_of([&] { hsic_rff(random_samples(4, 2, rng), random_samples(5, 2, rng)); }) ==
        ErrorKind::invalid_input);
}

TEST_CASE("hsic_rff tracks the exact estimator on dependent data") {
  const auto cfg = rbf(1.0);
  std::vector<double> rel;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(500 + seed);
    const auto U = random_samples(64, 3, rng);
    auto V = U;
    for (auto& v : V.data()) v += 0.5 * rng.normal();
    const double exact = hsic_biased(gram(U, cfg), gram(V, cfg));
    const double approx = hsic_rff(rff_features(U, rff_map(3, 4096, cfg, 2 * seed)),
                                   rff_features(V, rff_map(3, 4096, cfg, 2 * seed + 1)));
    rel.push_back(std::abs(approx - exact) / exact);
  }
  CHECK(qad::testing::median(rel) <= 0.10);
}

TEST_CASE("hsic_rff under independence stays below the permutation null 95th percentile") {
  Rng rng(41);
  const std::size_t n = 256;
  const auto cfg = rbf(1.0);
  const auto Zu = rff_features(random_samples(n, 2, rng), rff_map(2, 48, cfg, 1));
  const auto Zv = rff_features(random_samples(n, 2, rng), rff_map(2, 48, cfg, 2));
  const double observed = hsic_rff(Zu, Zv);
  std::vector<double> null;
  std::vector<std::size_t> perm(n);
  for (int p = 0; p < 200; ++p) {
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(std::span<std::size_t>(perm), rng);
    SampleMatrix shuffled(n, Zv.cols());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < Zv.cols(); ++j) shuffled(i, j) = Zv(perm[i], j);
    null.push_back(hsic_rff(Zu, shuffled));
  }
  std::sort(null.begin(), null.end());
  CHECK(observed < null[189]);
}

TEST_CASE("gram fixture round trip") {
  Rng rng(6);
  const auto K = gram(random_samples(7, 2, rng), rbf(1.0));
  std::stringstream buffer;
  write_gram(buffer, K);
  CHECK(buffer.str().size() == 8 + 7 * 7 * 8);
  const auto back = read_gram(buffer);
  CHECK(back.n == 7);
  CHECK(back.values == K.values);
  std::stringstream bad("NOPE1234");
  CHECK(kind_of([&] { read_gram(bad); }) == ErrorKind::format);
}
