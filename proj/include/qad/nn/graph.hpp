#pragma once

// Tape-based reverse-mode autodiff over dense tensors. Nodes are appended in
// evaluation order, so the tape is already topologically sorted and backward
// is a single reverse sweep.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qad/kernels.hpp"
#include "qad/nn/tensor.hpp"

namespace qad::nn {

class Graph;

/// Handle to a node on a Graph tape. Invalidated when the graph is freed by
/// backward().
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  double item() const;
  Graph& graph() const;
  std::uint32_t id() const noexcept { return id_; }

 private:
  friend class Graph;
  Var(Graph* g, std::uint32_t id, std::uint64_t epoch) : graph_(g), id_(id), epoch_(epoch) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
  std::uint64_t epoch_ = 0;
};

class Graph {
 public:
  using Backprop = std::function<void(Graph&, std::uint32_t self)>;

  /// With recording off, ops compute identical values but keep no backward
  /// closures; calling backward() on such a graph is a usage error.
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Constant input; never receives a gradient.
  Var input(Tensor value);

  /// Leaf bound to `target`. When recording and target.requires_grad, the
  /// gradient is accumulated into target.grad by backward().
  Var leaf(Tensor& target);

  /// Seeds d(loss)/d(loss) = 1, sweeps the tape, writes leaf gradients, then
  /// frees the tape.
  void backward(Var loss);

  /// Running hash of discrete branch decisions (ReLU masks, pooling argmax).
  /// Finite-difference oracles compare it to detect stencils that cross a kink.
  std::uint64_t decision_hash() const noexcept { return decision_hash_; }
  void mix_decision(std::uint64_t token) noexcept;

  // Op-construction interface.
  Var emplace(Tensor value, std::initializer_list<Var> inputs, Backprop backprop);
  Var emplace(Tensor value, std::span<const Var> inputs, Backprop backprop);
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool tracks(std::uint32_t id) const noexcept { return nodes_[id].tracked; }
  std::vector<double>& grad(std::uint32_t id);
  void check(const Var& v) const;

 private:
  friend class Var;
  struct Node {
    Tensor value;
    bool tracked = false;
    std::vector<double> grad;
    Backprop backprop;
    Tensor* target = nullptr;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::uint64_t epoch_ = 1;
  std::uint64_t decision_hash_ = 0xcbf29ce484222325ULL;
};

// ---- ops -----------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var mean(Var a);
/// sum of squares of every entry
Var squared_norm(Var a);

/// x [B, C, H, W], w [O, C, k, k], b [O]; zero padding k / 2.
Var conv2d(Var x, Var w, Var b, std::size_t stride);
Var relu(Var x);
/// Non-overlapping max pooling with window = stride = `size`.
Var max_pool2d(Var x, std::size_t size);
Var reshape(Var x, Shape shape);
/// x [B, F], w [O, F], b [O].
Var linear(Var x, Var w, Var b);

/// Rows [begin, end) of the leading dimension.
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
/// [B, C, H, W] -> [B, C]
Var spatial_mean(Var x);

/// Mean negative log-softmax of the true class; logits [B, K].
Var cross_entropy(Var logits, std::span<const int> labels);
/// Mean over rows of -sum_k target_k log softmax(logits / T)_k; targets are
/// constants.
Var soft_cross_entropy(Var logits, const Tensor& targets, double temperature);
/// Mean over rows of KL(softmax(p) || softmax(q)); differentiable in both.
Var kl_divergence(Var p_logits, Var q_logits);
/// Mean over rows of ||a_i - b_i||_2.
Var mean_row_distance(Var a, Var b);
/// Features [N, F]. Mean over rows of ||z_i - c_{y_i}||^2 / (2F) where c_y is
/// the batch mean of class y; gradients flow through the centers.
Var class_center_loss(Var features, std::span<const int> labels);

/// Gram matrix [n, n] of the rows of x [n, F]; the bandwidth is resolved on
/// the forward values and held constant for the backward pass.
Var gram_matrix(Var x, const kernels::KernelConfig& cfg, unsigned threads = 1);
/// Biased HSIC tr(KHLH)/(n-1)^2 between two uncentered Gram matrices.
Var hsic(Var K, Var L);

// ---- evaluation helpers (no tape) ----------------------------------------

/// Row-wise softmax of logits / T with max subtraction. logits [B, K].
Tensor softmax_temperature(const Tensor& logits, double temperature);
/// 1 - sigma_T(logits)[label] for a single logit row.
double sigma_loss(std::span<const double> logits, int label, double temperature);

}  // namespace qad::nn
