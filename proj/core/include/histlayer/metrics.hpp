#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "histlayer/network.hpp"
#include "histlayer/synthetic.hpp"

namespace histlayer {

/// counts[truth * classes + predicted]
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : classes(k), counts(k * k, 0) {}

  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1) { counts[truth * classes + predicted] += n; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::uint64_t row_total(std::size_t truth) const;
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
  double per_pixel = 0.0;
  /// Unweighted mean recall over classes present in the ground truth.
  double per_class = 0.0;
  double loss = 0.0;
  std::vector<double> recall;  ///< NaN for absent classes
  ConfusionMatrix confusion;
};

Metrics metrics_from_confusion(const ConfusionMatrix& confusion);

/// First index of the maximum.
std::size_t argmax_lowest(std::span<const double> values);

/// Adds the argmax of every position of a [N,K,H,W] probability map.
void accumulate_predictions(const Tensor& probs, std::span<const std::uint8_t> labels, ConfusionMatrix& confusion);

struct EvalOptions {
  /// 0 scores the stage-averaged probabilities; t >= 1 scores stage t alone.
  std::size_t stage = 0;
  std::size_t batch_size = 50;
  /// Worker cap; results do not depend on it.
  std::size_t threads = 1;
};

/// Read-only pass over `dataset`. Rejects an empty dataset.
Metrics evaluate(HistNet& net, const ContextDataset& dataset, const EvalOptions& options = {});

/// Worker count from HISTLAYER_THREADS, defaulting to 1.
std::size_t threads_from_env();

}  // namespace histlayer
