#include "qad/nn/graph.hpp"

#include <numeric>

#include "qad/error.hpp"

namespace qad::nn {

std::size_t numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != nn::numel(shape)) {
    fail(ErrorKind::shape, "tensor of shape " + to_string(shape) + " given " +
                               std::to_string(values.size()) + " values");
  }
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

const Tensor& Var::value() const {
  if (graph_ == nullptr) fail(ErrorKind::usage, "empty variable");
  graph_->check(*this);
  return graph_->nodes_[id_].value;
}

double Var::item() const {
  const Tensor& t = value();
  if (t.numel() != 1) fail(ErrorKind::shape, "item() on tensor of shape " + to_string(t.shape));
  return t.values[0];
}

Graph& Var::graph() const {
  if (graph_ == nullptr) fail(ErrorKind::usage, "empty variable");
  return *graph_;
}

void Graph::check(const Var& v) const {
  if (v.graph_ != this || v.epoch_ != epoch_ || v.id_ >= nodes_.size()) {
    fail(ErrorKind::usage, "variable belongs to a freed or different graph");
  }
}

void Graph::mix_decision(std::uint64_t token) noexcept {
  decision_hash_ = (decision_hash_ ^ token) * 0x100000001b3ULL;
}

Var Graph::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, {}, {}, nullptr});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), epoch_);
}

Var Graph::leaf(Tensor& target) {
  const bool tracked = recording_ && target.requires_grad;
  Tensor copy(target.shape, target.values);
  nodes_.push_back(Node{std::move(copy), tracked, {}, {}, tracked ? &target : nullptr});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), epoch_);
}

Var Graph::emplace(Tensor value, std::initializer_list<Var> inputs, Backprop backprop) {
  return emplace(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                 std::move(backprop));
}

Var Graph::emplace(Tensor value, std::span<const Var> inputs, Backprop backprop) {
  bool tracked = false;
  for (const Var& in : inputs) {
    check(in);
    tracked = tracked || nodes_[in.id_].tracked;
  }
  tracked = tracked && recording_;
  nodes_.push_back(Node{std::move(value), tracked, {}, tracked ? std::move(backprop) : Backprop{},
                        nullptr});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), epoch_);
}

std::vector<double>& Graph::grad(std::uint32_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.numel(), 0.0);
  return node.grad;
}

void Graph::backward(Var loss) {
  check(loss);
  if (!recording_) fail(ErrorKind::usage, "backward on a graph that was not recorded");
  if (!nodes_[loss.id_].tracked) {
    fail(ErrorKind::usage, "backward on a value that does not depend on any tracked leaf");
  }
  if (nodes_[loss.id_].value.numel() != 1) fail(ErrorKind::shape, "backward needs a scalar loss");
  grad(loss.id_)[0] = 1.0;
  for (std::uint32_t id = loss.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.tracked || node.grad.empty()) continue;
    if (node.backprop) {
      node.backprop(*this, id);
    } else if (node.target != nullptr) {
      auto& dst = node.target->grad;
      if (!dst || dst->size() != node.grad.size()) dst.emplace(node.grad.size(), 0.0);
      for (std::size_t i = 0; i < node.grad.size(); ++i) (*dst)[i] += node.grad[i];
    }
  }
  nodes_.clear();
  ++epoch_;
  decision_hash_ = 0xcbf29ce484222325ULL;
}

}  // namespace qad::nn
