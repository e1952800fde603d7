#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace qad::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

/// Dense row-major array. `grad`, when present, matches `values` in size.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), values(nn::numel(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> v);

  std::size_t numel() const noexcept { return values.size(); }
  void zero_grad();
};

}  // namespace qad::nn
