#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "histlayer/graph.hpp"
#include "histlayer/tensor.hpp"

namespace histlayer {

/// Builds a graph and returns its scalar loss node. Must be deterministic.
using ForwardFn = std::function<Var(Graph&)>;

/// Named graph input whose storage the checker perturbs in place. The
/// forward function must create it with `g.input(*tensor, name)`.
struct InputSlot {
  std::string name;
  Tensor* tensor = nullptr;
};

struct GradCheckOptions {
  double eps = 1e-4;
  double kink_margin = 1e-3;
  double tolerance = 1e-5;
  /// Denominator floor for the relative error. Gradients smaller than this
  /// are compared absolutely, where finite-difference rounding dominates.
  double abs_floor = 1e-6;
  /// Test hook forwarded to Graph::corrupt_backward for the analytic pass.
  std::string corrupt_op;
  double corrupt_factor = 1.0;
};

struct Coordinate {
  std::string target;
  std::size_t index = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  Coordinate worst;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::vector<Coordinate> skipped;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Central finite differences (f(t+eps) - f(t-eps)) / (2 eps) against the
/// analytic gradient for every entry of every parameter and input slot.
///
/// A coordinate is skipped, and listed in the report, when perturbing it
/// moves any recorded hinge argument that sits within `kink_margin` of its
/// hinge, or flips a hinge sign between the two probes.
GradCheckReport grad_check(const ForwardFn& forward, std::span<Parameter* const> params,
                           std::span<const InputSlot> inputs, const GradCheckOptions& options = {});

}  // namespace histlayer
