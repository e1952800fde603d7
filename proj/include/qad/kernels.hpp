#pragma once

// Kernel functions, Gram matrices and HSIC estimators. All math here runs in
// double precision; callers holding single-precision data promote at the
// boundary.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace qad::kernels {

/// n samples by d features, row-major.
class SampleMatrix {
 public:
  SampleMatrix() = default;
  SampleMatrix(std::size_t rows, std::size_t cols);
  SampleMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class KernelFamily { gaussian_rbf, laplace, linear };
enum class BandwidthMode { fixed, median_heuristic };

std::string_view to_string(KernelFamily family) noexcept;
std::string_view to_string(BandwidthMode mode) noexcept;
KernelFamily parse_family(std::string_view text);
BandwidthMode parse_bandwidth_mode(std::string_view text);

/// Distances are measured on r = ||u - u'|| / sqrt(d_eff), with d_eff = d when
/// dim_normalize is set and 1 otherwise:
///   gaussian-rbf  k = exp(-r^2 / (2 sigma^2))
///   laplace       k = exp(-r / sigma)
///   linear        k = <u, u'>            (ignores sigma and dim_normalize)
struct KernelConfig {
  KernelFamily family = KernelFamily::gaussian_rbf;
  double sigma = 6.0;
  BandwidthMode bandwidth_mode = BandwidthMode::fixed;
  bool dim_normalize = true;

  void validate() const;
  bool operator==(const KernelConfig&) const = default;
};

struct GramMatrix {
  std::size_t n = 0;
  std::vector<double> values;  // row-major n x n
  bool centered = false;

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

/// Bandwidth actually used for X: cfg.sigma in fixed mode, otherwise the
/// median pairwise normalized distance (falls back to cfg.sigma when the
/// median is zero).
double resolve_bandwidth(const SampleMatrix& X, const KernelConfig& cfg);

/// Single kernel evaluation with an explicit (already resolved) bandwidth.
double kernel_value(std::span<const double> u, std::span<const double> v,
                    const KernelConfig& cfg, double bandwidth);

/// Gram matrix over the rows of X. Rows are split into contiguous blocks
/// across `threads` workers; each entry is computed independently, so the
/// result does not depend on the thread count.
GramMatrix gram(const SampleMatrix& X, const KernelConfig& cfg, unsigned threads = 1);
GramMatrix gram(const SampleMatrix& X, const KernelConfig& cfg, double bandwidth,
                unsigned threads = 1);

/// Pulls dLoss/dK back onto the samples: dX += sum_ij dK_ij * dK_ij/dX.
/// The bandwidth is treated as a constant (no gradient through the median).
void gram_backward(const SampleMatrix& X, const GramMatrix& K, std::span<const double> dK,
                   const KernelConfig& cfg, double bandwidth, std::span<double> dX);

/// HKH with H = I - 11^T / n.
GramMatrix center(const GramMatrix& K);

/// tr(K H L H) / (n - 1)^2 on uncentered Gram matrices.
double hsic_biased(const GramMatrix& K, const GramMatrix& L);

/// Gradients of hsic_biased with respect to the entries of K and L:
/// dK = HLH / (n-1)^2 and dL = HKH / (n-1)^2.
void hsic_biased_backward(const GramMatrix& K, const GramMatrix& L, double upstream,
                          std::span<double> dK, std::span<double> dL);

/// Naive V-statistic expansion
///   (1/n^2) sum_ij K_ij L_ij - (2/n^3) sum_ijm K_ij L_im + (1/n^4) sum K sum L
/// with kernel entries evaluated pair by pair. O(n^3); a reference for tests
/// and the verify suite. Equals hsic_biased * (n-1)^2 / n^2.
double hsic_oracle(const SampleMatrix& U, const SampleMatrix& V, const KernelConfig& cfg_k,
                   const KernelConfig& cfg_l);

/// Random Fourier feature map z(x)_j = sqrt(2/D) cos(w_j . x + b_j).
struct RffMap {
  std::size_t input_dim = 0;
  std::size_t num_features = 0;
  std::vector<double> frequencies;  // D x d, row-major
  std::vector<double> phases;       // D, uniform on [0, 2pi)
  std::uint64_t seed = 0;
};

/// Frequencies are drawn from the kernel's spectral density: Gaussian with
/// scale 1/s for the RBF kernel and multivariate Cauchy with scale 1/s for the
/// Laplace kernel, s = sigma * sqrt(d_eff). Median-heuristic mode is not
/// supported since the map is fixed before data is seen.
RffMap rff_map(std::size_t input_dim, std::size_t num_features, const KernelConfig& cfg,
               std::uint64_t seed);
SampleMatrix rff_features(const SampleMatrix& X, const RffMap& map);

/// ||Zu_c^T Zv_c||_F^2 / (n-1)^2 with column-mean-centered features; equal to
/// hsic_biased on the Gram matrices Zu Zu^T and Zv Zv^T. Cost O(n D^2).
double hsic_rff(const SampleMatrix& Zu, const SampleMatrix& Zv);

struct PermutationTest {
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<double> null_distribution;
};

/// Permutation test of independence: V's rows are shuffled against U's and the
/// biased HSIC recomputed. p = (1 + #{null >= observed}) / (1 + permutations).
PermutationTest permutation_test(const SampleMatrix& U, const SampleMatrix& V,
                                 const KernelConfig& cfg_k, const KernelConfig& cfg_l,
                                 std::size_t permutations, std::uint64_t seed);

/// Flat fixture format: 4-byte magic "GRAM", uint32 n, then n*n float64,
/// all little-endian.
void write_gram(std::ostream& out, const GramMatrix& K);
GramMatrix read_gram(std::istream& in);

}  // namespace qad::kernels
