#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "histlayer/graph.hpp"
#include "histlayer/tensor.hpp"

namespace histlayer {

/// Lower bound enforced on every slope after an optimizer step.
inline constexpr double kMinSlope = 1e-3;

/// Per-class, per-bin triangle centers and slopes, row-major [class][bin].
/// The slope is the inverse half-width of the triangle.
struct HistogramParams {
  std::size_t classes = 0;
  std::size_t bins = 0;
  std::vector<double> centers;
  std::vector<double> slopes;

  double center(std::size_t k, std::size_t b) const { return centers[k * bins + b]; }
  double slope(std::size_t k, std::size_t b) const { return slopes[k * bins + b]; }
  std::size_t feature_size() const noexcept { return classes * bins; }
};

/// Centers evenly spaced on [0,1] with step 1/(B-1), every slope B-1 so that
/// adjacent triangles form a partition of unity. Rejects B < 2.
HistogramParams init_histogram_params(std::size_t classes, std::size_t bins);

/// Triangle vote max(0, 1 - slope * |x - center|).
inline double basis_eval(double x, double center, double slope) {
  const double d = x < center ? center - x : x - center;
  const double v = 1.0 - slope * d;
  return v > 0.0 ? v : 0.0;
}

/// out[n, k*B + b] = mean over (i,j) of basis_eval(likelihood[n,k,i,j], center, slope).
/// A likelihood vector is passed as H = W = 1. Output is [N, K*B, 1, 1].
Tensor hist_forward_direct(const Tensor& likelihood, const HistogramParams& params);

struct HistogramGrads {
  Tensor input;                 ///< same shape as the likelihood
  std::vector<double> centers;  ///< [K*B]
  std::vector<double> slopes;   ///< [K*B]
};

/// Backward of hist_forward_direct for upstream gradient [N, K*B, 1, 1].
/// Per active vote: d/ds = -|x-c|, d/dc = s*sign(x-c), d/dx = -s*sign(x-c),
/// each scaled by upstream / (H*W). Inactive votes and x == c contribute 0.
HistogramGrads hist_backward_direct(const Tensor& likelihood, const HistogramParams& params,
                                    const Tensor& upstream);

/// The learnable histogram as two locked 1x1 convolutions:
///
///   conv1 (weights: unit selectors, bias: -center) -> |.| ->
///   conv2 (weights: diagonal -slope, bias: 1) -> relu -> global average pool
///
/// Parameter storage is always this composed layout. `forward_direct`
/// evaluates the same function with a fused kernel and routes gradients into
/// conv1.bias and the conv2 diagonal.
class HistogramLayer {
 public:
  HistogramLayer(std::string prefix, const HistogramParams& params);
  HistogramLayer(std::string prefix, std::size_t classes, std::size_t bins);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t bins() const noexcept { return bins_; }

  Var forward_composed(Graph& g, Var likelihood);
  Var forward_direct(Graph& g, Var likelihood);

  /// Reads centers (-conv1 bias) and slopes (-conv2 diagonal).
  HistogramParams params() const;
  void set_params(const HistogramParams& params);

  /// Slope floor on the conv2 diagonal (diagonal <= -min_slope).
  void clamp_slopes(double min_slope = kMinSlope);

  /// Structural masks: only conv1 bias and the conv2 diagonal train.
  void apply_structural_locks();
  /// Every entry of both convolutions trains, fixed bias included.
  void unlock_everything();
  /// Nothing in the layer trains.
  void lock_everything();

  /// True when conv1 is still a unit-vector selector, conv2 is diagonal and
  /// its bias is 1.
  bool preserves_histogram_structure() const;

  Parameter conv1_weight;
  Parameter conv1_bias;
  Parameter conv2_weight;
  Parameter conv2_bias;

 private:
  std::size_t classes_;
  std::size_t bins_;
};

}  // namespace histlayer
