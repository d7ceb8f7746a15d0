#include "histlayer/graph.hpp"

#include "histlayer/error.hpp"

namespace histlayer {

Var Graph::input(Tensor value, std::string name, bool requires_grad) {
  nodes_.push_back(Node{"input", std::move(name), std::move(value), Tensor{}, requires_grad, nullptr});
  return Var{nodes_.size() - 1};
}

Var Graph::record(std::string op, Tensor value, bool requires_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(op), {}, std::move(value), Tensor{}, requires_grad, std::move(backward)});
  return Var{nodes_.size() - 1};
}

Tensor Graph::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  if (node.grad.empty() && !node.value.empty()) return Tensor(node.value.shape());
  return node.grad;
}

Tensor& Graph::grad_slot(Var v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.shape() != node.value.shape() || (node.grad.empty() && !node.value.empty())) {
    node.grad = Tensor(node.value.shape());
  }
  return node.grad;
}

std::optional<Var> Graph::find_input(const std::string& name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].op == "input" && nodes_[i].name == name) return Var{i};
  }
  return std::nullopt;
}

void Graph::backward(Var root) {
  if (value(root).size() != 1) {
    throw ShapeError("backward without seed needs a single-element root, got " + value(root).shape().str());
  }
  backward(root, Tensor(value(root).shape(), 1.0));
}

void Graph::backward(Var root, const Tensor& seed) {
  if (seed.shape() != value(root).shape()) {
    throw ShapeError("seed shape " + seed.shape().str() + " does not match root " + value(root).shape().str());
  }
  for (Node& node : nodes_) node.grad = Tensor{};
  grad_slot(root) = seed;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    if (!corrupt_op_.empty() && node.op == corrupt_op_) {
      Tensor scaled = node.grad;
      for (double& g : scaled.values()) g *= corrupt_factor_;
      node.backward(*this, Var{i}, scaled);
    } else {
      // nodes_ never grows during backward, so the reference stays valid.
      node.backward(*this, Var{i}, node.grad);
    }
  }
}

void Graph::add_hinges(std::span<const double> distances) {
  hinges_.insert(hinges_.end(), distances.begin(), distances.end());
}

void Graph::corrupt_backward(std::string op, double factor) {
  corrupt_op_ = std::move(op);
  corrupt_factor_ = factor;
}

}  // namespace histlayer
