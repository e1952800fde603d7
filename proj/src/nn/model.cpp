#include "qad/nn/model.hpp"

#include <cmath>

#include "qad/error.hpp"
#include "qad/rng.hpp"

namespace qad::nn {

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool: return "max-pool";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view text) {
  for (auto kind : {LayerKind::conv2d, LayerKind::dense, LayerKind::relu, LayerKind::max_pool,
                    LayerKind::flatten}) {
    if (text == to_string(kind)) return kind;
  }
  fail(ErrorKind::invalid_config, "unknown layer kind '" + std::string(text) + "'");
}

ModelSpec ModelSpec::desk_default() {
  ModelSpec spec;
  spec.input = {1, 16, 16};
  spec.layers = {LayerSpec::conv(8, 3),  LayerSpec::relu(), LayerSpec::max_pool(2),
                 LayerSpec::conv(16, 3), LayerSpec::relu(), LayerSpec::max_pool(2),
                 LayerSpec::flatten(),   LayerSpec::dense(64), LayerSpec::relu(),
                 LayerSpec::dense(2)};
  spec.tap_layers = {2, 5, 8};
  spec.num_classes = 2;
  return spec;
}

std::vector<Shape> ModelSpec::layer_shapes() const {
  std::vector<Shape> shapes;
  Shape current{input.channels, input.height, input.width};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(layer.kind)) + ")";
    switch (layer.kind) {
      case LayerKind::conv2d: {
        if (current.size() != 3) fail(ErrorKind::invalid_config, where + " needs a spatial input");
        if (layer.units == 0 || layer.kernel == 0 || layer.stride == 0 || layer.kernel % 2 == 0) {
          fail(ErrorKind::invalid_config, where + " needs positive channels, odd kernel, stride");
        }
        const std::size_t pad = layer.kernel / 2;
        current = {layer.units, (current[1] + 2 * pad - layer.kernel) / layer.stride + 1,
                   (current[2] + 2 * pad - layer.kernel) / layer.stride + 1};
        break;
      }
      case LayerKind::max_pool:
        if (current.size() != 3 || layer.kernel == 0 || current[1] % layer.kernel ||
            current[2] % layer.kernel) {
          fail(ErrorKind::invalid_config, where + " window must tile the spatial input");
        }
        current = {current[0], current[1] / layer.kernel, current[2] / layer.kernel};
        break;
      case LayerKind::flatten:
        current = {numel(current)};
        break;
      case LayerKind::dense:
        if (current.size() != 1) fail(ErrorKind::invalid_config, where + " needs a flat input");
        if (layer.units == 0) fail(ErrorKind::invalid_config, where + " needs a positive width");
        current = {layer.units};
        break;
      case LayerKind::relu:
        break;
    }
    shapes.push_back(current);
  }
  return shapes;
}

void ModelSpec::validate() const {
  if (input.channels == 0 || input.height == 0 || input.width == 0) {
    fail(ErrorKind::invalid_config, "model input dimensions must be positive");
  }
  if (layers.empty()) fail(ErrorKind::invalid_config, "model has no layers");
  const auto shapes = layer_shapes();
  if (shapes.back() != Shape{num_classes}) {
    fail(ErrorKind::invalid_config, "final layer must output " + std::to_string(num_classes) +
                                        " logits, got " + to_string(shapes.back()));
  }
  for (std::size_t i = 0; i < tap_layers.size(); ++i) {
    if (tap_layers[i] >= layers.size()) {
      fail(ErrorKind::invalid_config, "tap index " + std::to_string(tap_layers[i]) + " out of range");
    }
    if (i > 0 && tap_layers[i] <= tap_layers[i - 1]) {
      fail(ErrorKind::invalid_config, "tap indices must be strictly increasing");
    }
  }
}

void ParameterSet::add(std::string name, Tensor tensor) {
  for (const auto& p : params_) {
    if (p.name == name) fail(ErrorKind::invalid_input, "duplicate parameter name '" + name + "'");
  }
  tensor.requires_grad = true;
  params_.push_back({std::move(name), std::move(tensor)});
}

Parameter& ParameterSet::at(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  fail(ErrorKind::shape, "no parameter named '" + std::string(name) + "'");
}

const Parameter& ParameterSet::at(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

void ParameterSet::set_precision(Precision precision) {
  precision_ = precision;
  round_to_storage();
}

void ParameterSet::round_to_storage() {
  if (precision_ != Precision::f32) return;
  for (auto& p : params_)
    for (double& v : p.tensor.values) v = static_cast<double>(static_cast<float>(v));
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    if (p.tensor.grad) std::fill(p.tensor.grad->begin(), p.tensor.grad->end(), 0.0);
  }
}

std::size_t ParameterSet::total_size() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

std::vector<double> ParameterSet::norms() const {
  std::vector<double> out;
  for (const auto& p : params_) {
    double sq = 0.0;
    for (double v : p.tensor.values) sq += v * v;
    out.push_back(std::sqrt(sq));
  }
  return out;
}

std::vector<double> ParameterSet::grad_norms() const {
  std::vector<double> out;
  for (const auto& p : params_) {
    double sq = 0.0;
    if (p.tensor.grad)
      for (double v : *p.tensor.grad) sq += v * v;
    out.push_back(std::sqrt(sq));
  }
  return out;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name != other.params_[i].name ||
        params_[i].tensor.shape != other.params_[i].tensor.shape ||
        params_[i].tensor.values != other.params_[i].tensor.values) {
      return false;
    }
  }
  return true;
}

namespace {

std::string param_name(const LayerSpec& layer, std::size_t index, const char* suffix) {
  return (layer.kind == LayerKind::conv2d ? "conv" : "dense") + std::to_string(index) + suffix;
}

struct ExpectedParam {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

std::vector<ExpectedParam> expected_parameters(const ModelSpec& spec) {
  spec.validate();
  const auto shapes = spec.layer_shapes();
  std::vector<ExpectedParam> out;
  Shape in{spec.input.channels, spec.input.height, spec.input.width};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (layer.kind == LayerKind::conv2d) {
      const std::size_t fan_in = in[0] * layer.kernel * layer.kernel;
      out.push_back({param_name(layer, i, ".weight"), {layer.units, in[0], layer.kernel, layer.kernel}, fan_in});
      out.push_back({param_name(layer, i, ".bias"), {layer.units}, fan_in});
    } else if (layer.kind == LayerKind::dense) {
      out.push_back({param_name(layer, i, ".weight"), {layer.units, in[0]}, in[0]});
      out.push_back({param_name(layer, i, ".bias"), {layer.units}, in[0]});
    }
    in = shapes[i];
  }
  return out;
}

}  // namespace

ParameterSet init_parameters(const ModelSpec& spec, std::uint64_t seed, Precision precision) {
  ParameterSet params(precision);
  Rng rng(seed);
  for (const auto& expected : expected_parameters(spec)) {
    Tensor t(expected.shape);
    const bool is_bias = expected.shape.size() == 1;
    if (!is_bias) {
      const double bound = std::sqrt(6.0 / static_cast<double>(expected.fan_in));
      for (double& v : t.values) v = rng.uniform(-bound, bound);
    }
    params.add(expected.name, std::move(t));
  }
  params.round_to_storage();
  return params;
}

void check_parameters(const ModelSpec& spec, const ParameterSet& params) {
  const auto expected = expected_parameters(spec);
  if (expected.size() != params.size()) {
    fail(ErrorKind::shape, "model expects " + std::to_string(expected.size()) +
                               " parameter tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params[i].name != expected[i].name || params[i].tensor.shape != expected[i].shape) {
      fail(ErrorKind::shape, "parameter " + std::to_string(i) + " is " + params[i].name + " " +
                                 to_string(params[i].tensor.shape) + ", model expects " +
                                 expected[i].name + " " + to_string(expected[i].shape));
    }
  }
}

ForwardResult forward(const ModelSpec& spec, Graph& graph, ParameterSet& params, const Tensor& x) {
  check_parameters(spec, params);
  const Shape expected_input{spec.input.channels, spec.input.height, spec.input.width};
  if (x.shape.size() != 4 || !std::equal(expected_input.begin(), expected_input.end(), x.shape.begin() + 1)) {
    fail(ErrorKind::invalid_input, "model input must be [B, " + std::to_string(spec.input.channels) +
                                       ", " + std::to_string(spec.input.height) + ", " +
                                       std::to_string(spec.input.width) + "], got " + to_string(x.shape));
  }
  const std::size_t batch = x.shape[0];
  const auto shapes = spec.layer_shapes();
  ForwardResult result;
  Var h = graph.input(x);
  std::size_t next_param = 0;
  auto take = [&]() { return graph.leaf(params[next_param++].tensor); };
  std::size_t tap_cursor = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    switch (layer.kind) {
      case LayerKind::conv2d: {
        Var w = take();
        Var b = take();
        h = conv2d(h, w, b, layer.stride);
        break;
      }
      case LayerKind::dense: {
        Var w = take();
        Var b = take();
        h = linear(h, w, b);
        break;
      }
      case LayerKind::relu: h = relu(h); break;
      case LayerKind::max_pool: h = max_pool2d(h, layer.kernel); break;
      case LayerKind::flatten: h = reshape(h, {batch, numel(shapes[i])}); break;
    }
    if (tap_cursor < spec.tap_layers.size() && spec.tap_layers[tap_cursor] == i) {
      Var flat = h.shape().size() == 2 ? h : reshape(h, {batch, numel(shapes[i])});
      result.taps.emplace(i, Tap{flat, shapes[i]});
      ++tap_cursor;
    }
  }
  result.logits = h;
  return result;
}

Tensor flatten_tap(const Tensor& z) {
  if (z.shape.empty()) fail(ErrorKind::shape, "flatten_tap needs a batch dimension");
  const std::size_t batch = z.shape[0];
  return Tensor({batch, batch ? z.numel() / batch : 0}, z.values);
}

Tensor unflatten_tap(const Tensor& flat, const Shape& feature_shape) {
  if (flat.shape.size() != 2 || flat.shape[1] != numel(feature_shape)) {
    fail(ErrorKind::shape, "unflatten_tap: " + to_string(flat.shape) + " vs " + to_string(feature_shape));
  }
  Shape shape{flat.shape[0]};
  shape.insert(shape.end(), feature_shape.begin(), feature_shape.end());
  return Tensor(std::move(shape), flat.values);
}

}  // namespace qad::nn
