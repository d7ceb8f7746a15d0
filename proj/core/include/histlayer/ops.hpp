#pragma once

#include <cstdint>
#include <span>

#include "histlayer/graph.hpp"
#include "histlayer/tensor.hpp"

namespace histlayer {

/// Label value excluded from the cross-entropy average.
inline constexpr std::uint8_t kIgnoreLabel = 255;

/// out[n,o,i,j] = sum_c weight[o,c] * x[n,c,i,j] + bias[o].
/// weight is [Cout,Cin,1,1], bias is [Cout,1,1,1].
Var conv1x1(Graph& g, Var x, Parameter& weight, Parameter& bias);

/// Affine map on [N,D,1,1] vectors; weight [Dout,D,1,1], bias [Dout,1,1,1].
Var fully_connected(Graph& g, Var x, Parameter& weight, Parameter& bias);

/// Elementwise |x|; subgradient 0 at x = 0.
Var abs_elem(Graph& g, Var x);

/// Elementwise max(0, x); subgradient 0 at x = 0.
Var relu(Graph& g, Var x);

/// [N,C,H,W] -> [N,C,1,1] spatial mean.
Var global_avg_pool(Graph& g, Var x);

/// Tiles a [N,D,1,1] context vector over every position of a [N,C,H,W]
/// map and appends it after the C feature channels.
Var broadcast_concat(Graph& g, Var features, Var context);

struct SoftmaxXent {
  Var loss;   ///< [1,1,1,1] mean negative log-likelihood
  Var probs;  ///< [N,K,H,W] channel softmax
};

/// Channel softmax plus mean cross-entropy over non-ignored positions.
/// `labels` is [N,H,W] flattened. Both outputs are differentiable.
SoftmaxXent softmax_xent(Graph& g, Var logits, std::span<const std::uint8_t> labels);

/// Channel softmax only.
Var softmax(Graph& g, Var logits);

/// Elementwise mean of same-shaped nodes.
Var average(Graph& g, std::span<const Var> xs);

/// Scalar sum(weights * x); used as a random projection loss in tests.
Var dot(Graph& g, Var x, const Tensor& weights);

}  // namespace histlayer
