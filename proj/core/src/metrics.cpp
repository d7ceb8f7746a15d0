#include "histlayer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <thread>

#include "histlayer/error.hpp"

namespace histlayer {

std::uint64_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::uint64_t sum = 0;
  for (std::size_t p = 0; p < classes; ++p) sum += at(truth, p);
  return sum;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts) sum += c;
  return sum;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes != classes) throw ShapeError("confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

Metrics metrics_from_confusion(const ConfusionMatrix& confusion) {
  Metrics m;
  m.confusion = confusion;
  const std::uint64_t total = confusion.total();
  if (total == 0) throw ArgumentError("metrics: no labelled pixels");
  std::uint64_t correct = 0;
  double recall_sum = 0.0;
  std::size_t present = 0;
  m.recall.assign(confusion.classes, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < confusion.classes; ++k) {
    correct += confusion.at(k, k);
    const std::uint64_t row = confusion.row_total(k);
    if (row == 0) continue;
    m.recall[k] = static_cast<double>(confusion.at(k, k)) / static_cast<double>(row);
    recall_sum += m.recall[k];
    ++present;
  }
  m.per_pixel = static_cast<double>(correct) / static_cast<double>(total);
  m.per_class = recall_sum / static_cast<double>(present);
  return m;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void accumulate_predictions(const Tensor& probs, std::span<const std::uint8_t> labels, ConfusionMatrix& confusion) {
  const Shape s = probs.shape();
  const std::size_t hw = s.spatial();
  std::vector<double> column(s.c);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t q = 0; q < hw; ++q) {
      const std::uint8_t truth = labels[n * hw + q];
      if (truth >= confusion.classes) continue;
      for (std::size_t k = 0; k < s.c; ++k) column[k] = probs.plane(n, k)[q];
      confusion.add(truth, argmax_lowest(column));
    }
  }
}

Metrics evaluate(HistNet& net, const ContextDataset& dataset, const EvalOptions& options) {
  const std::size_t images = dataset.images();
  if (images == 0 || dataset.pixels_per_image() == 0) throw ArgumentError("evaluate: empty dataset");
  if (options.stage > net.config().stages) {
    throw ArgumentError("evaluate: stage " + std::to_string(options.stage) + " but the network has " +
                        std::to_string(net.config().stages));
  }
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  const std::size_t batches = (images + bs - 1) / bs;
  const std::size_t K = net.config().classes;

  std::vector<ConfusionMatrix> confusion(batches, ConfusionMatrix(K));
  std::vector<double> losses(batches, 0.0);
  auto run = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t b = worker; b < batches; b += workers) {
      const std::size_t first = b * bs;
      const std::size_t count = std::min(bs, images - first);
      Graph g;
      const auto labels = dataset.label_batch(first, count);
      StageOutputs out = net.forward(g, dataset.feature_batch(first, count), labels);
      const Var scored = options.stage == 0 ? out.final_probs : out.probs[options.stage - 1];
      accumulate_predictions(g.value(scored), labels, confusion[b]);
      losses[b] = g.value(*out.loss)[0] * static_cast<double>(count);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.threads, 1, batches);
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
    for (auto& t : pool) t.join();
  }
  // Merge in batch order so the result is independent of the worker count.
  ConfusionMatrix total(K);
  double loss = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    total.merge(confusion[b]);
    loss += losses[b];
  }
  Metrics m = metrics_from_confusion(total);
  m.loss = loss / static_cast<double>(images);
  return m;
}

std::size_t threads_from_env() {
  const char* env = std::getenv("HISTLAYER_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    const long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

}  // namespace histlayer
