#include "qad/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>
#include <thread>

#include "qad/binary_io.hpp"
#include "qad/error.hpp"
#include "qad/rng.hpp"

namespace qad::kernels {

SampleMatrix::SampleMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

SampleMatrix::SampleMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorKind::shape, "sample matrix buffer holds " + std::to_string(data_.size()) +
                               " values, expected " + std::to_string(rows_ * cols_));
  }
}

std::string_view to_string(KernelFamily family) noexcept {
  switch (family) {
    case KernelFamily::gaussian_rbf: return "gaussian-rbf";
    case KernelFamily::laplace: return "laplace";
    case KernelFamily::linear: return "linear";
  }
  return "unknown";
}

std::string_view to_string(BandwidthMode mode) noexcept {
  return mode == BandwidthMode::fixed ? "fixed" : "median-heuristic";
}

KernelFamily parse_family(std::string_view text) {
  if (text == "gaussian-rbf") return KernelFamily::gaussian_rbf;
  if (text == "laplace") return KernelFamily::laplace;
  if (text == "linear") return KernelFamily::linear;
  fail(ErrorKind::invalid_config, "unknown kernel family '" + std::string(text) + "'");
}

BandwidthMode parse_bandwidth_mode(std::string_view text) {
  if (text == "fixed") return BandwidthMode::fixed;
  if (text == "median-heuristic") return BandwidthMode::median_heuristic;
  fail(ErrorKind::invalid_config, "unknown bandwidth mode '" + std::string(text) + "'");
}

void KernelConfig::validate() const {
  if (family != KernelFamily::linear && !(sigma > 0.0 && std::isfinite(sigma))) {
    fail(ErrorKind::invalid_config, "kernel bandwidth sigma must be positive, got " +
                                        std::to_string(sigma));
  }
}

namespace {

void require_finite(const SampleMatrix& X) {
  for (double v : X.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::invalid_input, "sample matrix has non-finite entries");
  }
}

double squared_distance(std::span<const double> u, std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double diff = u[k] - v[k];
    acc += diff * diff;
  }
  return acc;
}

double dot(std::span<const double> u, std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) acc += u[k] * v[k];
  return acc;
}

double effective_dim(const KernelConfig& cfg, std::size_t d) {
  return cfg.dim_normalize ? static_cast<double>(d) : 1.0;
}

// Kernel value from the squared distance (distance kernels only).
double from_squared_distance(double sq, const KernelConfig& cfg, double bandwidth, double d_eff) {
  if (cfg.family == KernelFamily::gaussian_rbf) {
    return std::exp(-sq / (2.0 * bandwidth * bandwidth * d_eff));
  }
  return std::exp(-std::sqrt(sq) / (bandwidth * std::sqrt(d_eff)));
}

// dk/d(squared distance).
double derivative_wrt_squared_distance(double sq, double k, const KernelConfig& cfg,
                                       double bandwidth, double d_eff) {
  if (cfg.family == KernelFamily::gaussian_rbf) {
    return -k / (2.0 * bandwidth * bandwidth * d_eff);
  }
  if (sq <= 0.0) return 0.0;
  return -k / (2.0 * std::sqrt(sq) * bandwidth * std::sqrt(d_eff));
}

void check_pair(const GramMatrix& K, const GramMatrix& L) {
  if (K.n < 2) fail(ErrorKind::invalid_input, "HSIC needs at least two samples");
  if (K.n != L.n || K.values.size() != K.n * K.n || L.values.size() != L.n * L.n) {
    fail(ErrorKind::invalid_input, "Gram matrices have mismatched shapes");
  }
}

template <typename Fn>
void parallel_rows(std::size_t n, unsigned threads, Fn&& fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> workers;
  const std::size_t block = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * block;
    const std::size_t end = std::min(n, begin + block);
    if (begin >= end) break;
    workers.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& w : workers) w.join();
}

}  // namespace

double resolve_bandwidth(const SampleMatrix& X, const KernelConfig& cfg) {
  if (cfg.bandwidth_mode == BandwidthMode::fixed || cfg.family == KernelFamily::linear) {
    return cfg.sigma;
  }
  const std::size_t n = X.rows();
  const double d_eff = effective_dim(cfg, X.cols());
  std::vector<double> distances;
  distances.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      distances.push_back(std::sqrt(squared_distance(X.row(i), X.row(j)) / d_eff));
    }
  }
  if (distances.empty()) return cfg.sigma;
  const auto mid = distances.begin() + static_cast<std::ptrdiff_t>(distances.size() / 2);
  std::nth_element(distances.begin(), mid, distances.end());
  return *mid > 0.0 ? *mid : cfg.sigma;
}

double kernel_value(std::span<const double> u, std::span<const double> v,
                    const KernelConfig& cfg, double bandwidth) {
  if (cfg.family == KernelFamily::linear) return dot(u, v);
  return from_squared_distance(squared_distance(u, v), cfg, bandwidth,
                               effective_dim(cfg, u.size()));
}

GramMatrix gram(const SampleMatrix& X, const KernelConfig& cfg, unsigned threads) {
  cfg.validate();
  require_finite(X);
  return gram(X, cfg, resolve_bandwidth(X, cfg), threads);
}

GramMatrix gram(const SampleMatrix& X, const KernelConfig& cfg, double bandwidth,
                unsigned threads) {
  cfg.validate();
  require_finite(X);
  if (X.rows() < 2) fail(ErrorKind::invalid_input, "Gram matrix needs at least two samples");
  if (cfg.family != KernelFamily::linear && !(bandwidth > 0.0)) {
    fail(ErrorKind::invalid_config, "kernel bandwidth must be positive");
  }
  const std::size_t n = X.rows();
  const double d_eff = effective_dim(cfg, X.cols());
  GramMatrix K{n, std::vector<double>(n * n), false};
  // Each worker fills the upper triangle of its rows and mirrors it, so every
  // entry is written by exactly one thread with the same arithmetic.
  parallel_rows(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        double k;
        if (cfg.family == KernelFamily::linear) {
          k = dot(X.row(i), X.row(j));
        } else {
          k = from_squared_distance(squared_distance(X.row(i), X.row(j)), cfg, bandwidth, d_eff);
        }
        K.values[i * n + j] = k;
        K.values[j * n + i] = k;
      }
    }
  });
  return K;
}

void gram_backward(const SampleMatrix& X, const GramMatrix& K, std::span<const double> dK,
                   const KernelConfig& cfg, double bandwidth, std::span<double> dX) {
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  if (K.n != n || dK.size() != n * n || dX.size() != n * d) {
    fail(ErrorKind::shape, "gram_backward: mismatched shapes");
  }
  if (cfg.family == KernelFamily::linear) {
    // K = X X^T  =>  dX = (dK + dK^T) X
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double s = dK[i * n + j] + dK[j * n + i];
        if (s == 0.0) continue;
        const auto xj = X.row(j);
        for (std::size_t c = 0; c < d; ++c) dX[i * d + c] += s * xj[c];
      }
    }
    return;
  }
  const double d_eff = effective_dim(cfg, d);
  // dX_i = 2 sum_j S_ij (x_i - x_j),  S_ij = (dK_ij + dK_ji) dk/ds_ij
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = X.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto xj = X.row(j);
      const double sq = squared_distance(xi, xj);
      const double slope = derivative_wrt_squared_distance(sq, K(i, j), cfg, bandwidth, d_eff);
      const double s = (dK[i * n + j] + dK[j * n + i]) * slope;
      if (s == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) dX[i * d + c] += 2.0 * s * (xi[c] - xj[c]);
    }
  }
}

GramMatrix center(const GramMatrix& K) {
  const std::size_t n = K.n;
  if (K.values.size() != n * n) fail(ErrorKind::shape, "center: matrix is not square");
  std::vector<double> row_mean(n, 0.0);
  std::vector<double> col_mean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = K.values[i * n + j];
      row_mean[i] += v;
      col_mean[j] += v;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    grand += row_mean[i];
    row_mean[i] /= static_cast<double>(n);
    col_mean[i] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n) * static_cast<double>(n);
  GramMatrix out{n, std::vector<double>(n * n), true};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.values[i * n + j] = K.values[i * n + j] - row_mean[i] - col_mean[j] + grand;
    }
  }
  return out;
}

double hsic_biased(const GramMatrix& K, const GramMatrix& L) {
  check_pair(K, L);
  const GramMatrix Kc = center(K);
  const GramMatrix Lc = center(L);
  // tr(HKH HLH) as an elementwise sum; Gram matrices are symmetric, and the
  // product Kc_ij * Lc_ij is order-free, so swapping K and L is bit-exact.
  double acc = 0.0;
  for (std::size_t idx = 0; idx < Kc.values.size(); ++idx) acc += Kc.values[idx] * Lc.values[idx];
  const double denom = static_cast<double>(K.n - 1) * static_cast<double>(K.n - 1);
  return acc / denom;
}

void hsic_biased_backward(const GramMatrix& K, const GramMatrix& L, double upstream,
                          std::span<double> dK, std::span<double> dL) {
  check_pair(K, L);
  const std::size_t n = K.n;
  const double scale = upstream / (static_cast<double>(n - 1) * static_cast<double>(n - 1));
  const GramMatrix Kc = center(K);
  const GramMatrix Lc = center(L);
  for (std::size_t idx = 0; idx < n * n; ++idx) {
    dK[idx] += scale * Lc.values[idx];
    dL[idx] += scale * Kc.values[idx];
  }
}

double hsic_oracle(const SampleMatrix& U, const SampleMatrix& V, const KernelConfig& cfg_k,
                   const KernelConfig& cfg_l) {
  cfg_k.validate();
  cfg_l.validate();
  if (U.rows() < 2) fail(ErrorKind::invalid_input, "HSIC needs at least two samples");
  if (U.rows() != V.rows()) fail(ErrorKind::invalid_input, "U and V have different sample counts");
  require_finite(U);
  require_finite(V);
  const std::size_t n = U.rows();
  const double bw_k = resolve_bandwidth(U, cfg_k);
  const double bw_l = resolve_bandwidth(V, cfg_l);
  auto k = [&](std::size_t i, std::size_t j) { return kernel_value(U.row(i), U.row(j), cfg_k, bw_k); };
  auto l = [&](std::size_t i, std::size_t j) { return kernel_value(V.row(i), V.row(j), cfg_l, bw_l); };

  const double nn = static_cast<double>(n);
  double joint = 0.0;
  double cross = 0.0;
  double sum_k = 0.0;
  double sum_l = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double kij = k(i, j);
      joint += kij * l(i, j);
      sum_k += kij;
      sum_l += l(i, j);
      for (std::size_t m = 0; m < n; ++m) cross += kij * l(i, m);
    }
  }
  return joint / (nn * nn) - 2.0 * cross / (nn * nn * nn) + sum_k * sum_l / (nn * nn * nn * nn);
}

RffMap rff_map(std::size_t input_dim, std::size_t num_features, const KernelConfig& cfg,
               std::uint64_t seed) {
  cfg.validate();
  if (cfg.family == KernelFamily::linear) {
    fail(ErrorKind::unsupported_kernel, "random Fourier features need a shift-invariant kernel");
  }
  if (cfg.bandwidth_mode != BandwidthMode::fixed) {
    fail(ErrorKind::invalid_config, "random Fourier features need a fixed bandwidth");
  }
  if (input_dim == 0 || num_features == 0) {
    fail(ErrorKind::invalid_input, "random Fourier features need positive dimensions");
  }
  RffMap map{input_dim, num_features, std::vector<double>(num_features * input_dim),
             std::vector<double>(num_features), seed};
  const double scale = cfg.sigma * std::sqrt(effective_dim(cfg, input_dim));
  Rng rng(seed);
  for (std::size_t j = 0; j < num_features; ++j) {
    double radial = 1.0;
    if (cfg.family == KernelFamily::laplace) {
      // Multivariate t with one degree of freedom: z / |g|.
      double g = rng.normal();
      while (g == 0.0) g = rng.normal();
      radial = 1.0 / std::abs(g);
    }
    for (std::size_t c = 0; c < input_dim; ++c) {
      map.frequencies[j * input_dim + c] = rng.normal() * radial / scale;
    }
  }
  for (std::size_t j = 0; j < num_features; ++j) {
    map.phases[j] = rng.uniform() * 2.0 * std::numbers::pi;
  }
  return map;
}

SampleMatrix rff_features(const SampleMatrix& X, const RffMap& map) {
  if (X.cols() != map.input_dim) {
    fail(ErrorKind::invalid_input, "feature dimension does not match the RFF map");
  }
  require_finite(X);
  const std::size_t D = map.num_features;
  const std::size_t d = map.input_dim;
  const double amplitude = std::sqrt(2.0 / static_cast<double>(D));
  SampleMatrix Z(X.rows(), D);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const auto x = X.row(i);
    for (std::size_t j = 0; j < D; ++j) {
      double proj = map.phases[j];
      const double* w = map.frequencies.data() + j * d;
      for (std::size_t c = 0; c < d; ++c) proj += w[c] * x[c];
      Z(i, j) = amplitude * std::cos(proj);
    }
  }
  return Z;
}

namespace {

SampleMatrix column_centered(const SampleMatrix& Z) {
  SampleMatrix out = Z;
  const std::size_t n = Z.rows();
  for (std::size_t j = 0; j < Z.cols(); ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += Z(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out(i, j) -= mean;
  }
  return out;
}

}  // namespace

double hsic_rff(const SampleMatrix& Zu, const SampleMatrix& Zv) {
  if (Zu.rows() != Zv.rows()) fail(ErrorKind::invalid_input, "RFF feature matrices differ in n");
  if (Zu.rows() < 2) fail(ErrorKind::invalid_input, "HSIC needs at least two samples");
  const std::size_t n = Zu.rows();
  const SampleMatrix U = column_centered(Zu);
  const SampleMatrix V = column_centered(Zv);
  double acc = 0.0;
  if (n * n <= Zu.cols() * Zv.cols()) {
    // ||U^T V||_F^2 = <U U^T, V V^T>: O(n^2 D) when the batch is small.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) acc += dot(U.row(i), U.row(j)) * dot(V.row(i), V.row(j));
    }
  } else {
    // Cross-covariance route, linear in n.
    std::vector<double> cross(U.cols() * V.cols(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = U.row(i);
      const auto v = V.row(i);
      for (std::size_t a = 0; a < u.size(); ++a) {
        double* dst = cross.data() + a * v.size();
        for (std::size_t b = 0; b < v.size(); ++b) dst[b] += u[a] * v[b];
      }
    }
    for (double c : cross) acc += c * c;
  }
  return acc / (static_cast<double>(n - 1) * static_cast<double>(n - 1));
}

PermutationTest permutation_test(const SampleMatrix& U, const SampleMatrix& V,
                                 const KernelConfig& cfg_k, const KernelConfig& cfg_l,
                                 std::size_t permutations, std::uint64_t seed) {
  if (U.rows() != V.rows()) fail(ErrorKind::invalid_input, "U and V have different sample counts");
  const GramMatrix K = gram(U, cfg_k);
  const GramMatrix L = gram(V, cfg_l);
  const std::size_t n = K.n;
  const GramMatrix Kc = center(K);
  const GramMatrix Lc = center(L);
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);

  PermutationTest result;
  result.statistic = hsic_biased(K, L);
  // Permutations commute with H, so permuting the centered L is enough.
  std::vector<std::size_t> perm(n);
  Rng rng(seed);
  std::size_t at_least = 0;
  result.null_distribution.reserve(permutations);
  for (std::size_t p = 0; p < permutations; ++p) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    shuffle(std::span<std::size_t>(perm), rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* lrow = Lc.values.data() + perm[i] * n;
      const double* krow = Kc.values.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) acc += krow[j] * lrow[perm[j]];
    }
    const double stat = acc / denom;
    result.null_distribution.push_back(stat);
    if (stat >= result.statistic) ++at_least;
  }
  result.p_value = static_cast<double>(1 + at_least) / static_cast<double>(1 + permutations);
  return result;
}

namespace {

constexpr char kGramMagic[4] = {'G', 'R', 'A', 'M'};

}  // namespace

void write_gram(std::ostream& out, const GramMatrix& K) {
  out.write(kGramMagic, 4);
  io::put_u32(out, static_cast<std::uint32_t>(K.n));
  for (double v : K.values) io::put_f64(out, v);
  if (!out) fail(ErrorKind::io, "failed to write Gram matrix");
}

GramMatrix read_gram(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kGramMagic)) {
    fail(ErrorKind::format, "not a Gram matrix fixture");
  }
  const std::size_t n = io::get_u32(in, "Gram header");
  GramMatrix K{n, std::vector<double>(n * n), false};
  for (double& v : K.values) v = io::get_f64(in, "Gram data");
  return K;
}

}  // namespace qad::kernels
