#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "histlayer/tensor.hpp"

namespace histlayer {

/// Handle to a node in a Graph.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape. Nodes are appended in forward order and `backward`
/// walks them in exact reverse, so gradient accumulation order is fixed.
class Graph {
 public:
  /// Receives the graph, the node itself and its accumulated output gradient,
  /// and adds contributions into input gradients and parameter grads.
  using BackwardFn = std::function<void(Graph&, Var self, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf holding a copy of `value`.
  Var input(Tensor value, std::string name = "input", bool requires_grad = true);

  /// Appends an op node. `requires_grad` decides whether backward visits it.
  Var record(std::string op, Tensor value, bool requires_grad, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward root w.r.t. `v`; zero-filled if untouched.
  Tensor grad(Var v) const;
  /// Mutable gradient slot, allocated on first use.
  Tensor& grad_slot(Var v);

  std::optional<Var> find_input(const std::string& name) const;

  /// Seeds d(root)/d(root) = 1 for a single-element root.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  /// When enabled, kinked ops record the signed distance of each of their
  /// arguments to the nearest hinge so a gradient checker can skip
  /// coordinates whose perturbation crosses a kink.
  void set_track_hinges(bool on) noexcept { track_hinges_ = on; }
  bool track_hinges() const noexcept { return track_hinges_; }
  void add_hinges(std::span<const double> distances);
  const std::vector<double>& hinges() const noexcept { return hinges_; }

  /// Training mode: ops skip gradient work for parameters whose lock mask is
  /// all zero. Leave off when the gradients of frozen entries are wanted.
  void set_skip_frozen(bool on) noexcept { skip_frozen_ = on; }
  bool skip_frozen() const noexcept { return skip_frozen_; }

  /// Test hook: scale the upstream gradient seen by every node whose op
  /// name equals `op`, to show that a checker catches broken backward code.
  void corrupt_backward(std::string op, double factor);

 private:
  struct Node {
    std::string op;
    std::string name;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<double> hinges_;
  bool track_hinges_ = false;
  bool skip_frozen_ = false;
  std::string corrupt_op_;
  double corrupt_factor_ = 1.0;
};

}  // namespace histlayer
