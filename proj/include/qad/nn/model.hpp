#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qad/nn/graph.hpp"
#include "qad/nn/tensor.hpp"

namespace qad::nn {

enum class LayerKind { conv2d, dense, relu, max_pool, flatten };

std::string_view to_string(LayerKind kind) noexcept;
LayerKind parse_layer_kind(std::string_view text);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t units = 0;   // conv2d: output channels; dense: width
  std::size_t kernel = 0;  // conv2d: kernel size; max_pool: window
  std::size_t stride = 1;  // conv2d only

  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride = 1) {
    return {LayerKind::conv2d, channels, kernel, stride};
  }
  static LayerSpec dense(std::size_t width) { return {LayerKind::dense, width, 0, 1}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 1}; }
  static LayerSpec max_pool(std::size_t window = 2) { return {LayerKind::max_pool, 0, window, 1}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 1}; }

  bool operator==(const LayerSpec&) const = default;
};

struct InputSpec {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;

  bool operator==(const InputSpec&) const = default;
};

/// Sequential network. A tap at index i exports the output of layers[i],
/// flattened per sample in channel-major (c, y, x) order.
struct ModelSpec {
  InputSpec input;
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> tap_layers;
  std::size_t num_classes = 2;

  /// 1x16x16 input, two conv blocks (8 and 16 channels, 3x3, ReLU, 2x2 max
  /// pool), dense 64 + ReLU, dense 2; taps after each block and the hidden
  /// dense layer.
  static ModelSpec desk_default();

  void validate() const;
  /// Per-sample output shape of every layer.
  std::vector<Shape> layer_shapes() const;

  bool operator==(const ModelSpec&) const = default;
};

struct Parameter {
  std::string name;
  Tensor tensor;
};

/// f32 keeps every value representable in single precision (the checkpoint
/// format); f64 is used by gradient checks.
enum class Precision { f32, f64 };

class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(Precision precision) : precision_(precision) {}

  void add(std::string name, Tensor tensor);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Precision precision() const noexcept { return precision_; }
  void set_precision(Precision precision);
  /// Rounds every value to the storage precision.
  void round_to_storage();
  void zero_grad();
  std::size_t total_size() const;

  /// Frobenius norm of each parameter tensor (one norm group per tensor).
  std::vector<double> norms() const;
  std::vector<double> grad_norms() const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<Parameter> params_;
  Precision precision_ = Precision::f32;
};

/// Fan-in scaled uniform weights U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero
/// biases. Names are "<kind><layer index>.weight|bias".
ParameterSet init_parameters(const ModelSpec& spec, std::uint64_t seed,
                             Precision precision = Precision::f32);

/// Throws shape error when params do not fit spec.
void check_parameters(const ModelSpec& spec, const ParameterSet& params);

struct Tap {
  Var flat;             // [B, prod(feature_shape)]
  Shape feature_shape;  // per sample, e.g. {C, H, W} or {F}
};

struct ForwardResult {
  Var logits;  // [B, num_classes]
  std::map<std::size_t, Tap> taps;
};

/// x is [B, C, H, W]. Parameters enter the graph as leaves; gradients reach
/// them only when the graph is recording.
ForwardResult forward(const ModelSpec& spec, Graph& graph, ParameterSet& params, const Tensor& x);

/// [B, ...] -> [B, prod(...)] and back; channel-major order is the memory
/// order, so both are pure reshapes.
Tensor flatten_tap(const Tensor& z);
Tensor unflatten_tap(const Tensor& flat, const Shape& feature_shape);

}  // namespace qad::nn
