#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "histlayer/metrics.hpp"
#include "histlayer/network.hpp"
#include "histlayer/synthetic.hpp"

namespace histlayer {

/// Momentum SGD with step decay: lr * decay^floor(epoch / step).
struct Schedule {
  std::size_t base_epochs = 30;
  std::size_t phase1_epochs = 30;
  std::size_t phase2_epochs = 30;
  std::size_t batch_size = 10;
  double base_lr = 1e-2;
  double lr = 1e-2;
  double momentum = 0.9;
  double lr_decay = 0.1;
  std::size_t lr_step = 20;

  double lr_at(double initial, std::size_t epoch) const;
  void validate() const;
};

struct LogRow {
  std::string phase;
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double per_pixel = 0.0;
  double per_class = 0.0;
};

/// CSV with header phase,epoch,split,loss,per_pixel,per_class. Doubles are
/// printed with 17 significant digits so they read back exactly.
std::string log_csv(std::span<const LogRow> rows);

struct TrainOptions {
  EvalOptions eval;
  /// Called after each row is produced.
  std::function<void(const LogRow&)> on_row;
};

/// Runs `epochs` epochs of `phase`. Each epoch yields a "train" row (running
/// averages over the epoch's minibatches) and a "val" row.
std::vector<LogRow> train_phase(HistNet& net, Phase phase, const ContextDataset& train, const ContextDataset& val,
                                std::size_t epochs, double lr, const Schedule& schedule, std::uint64_t seed,
                                const TrainOptions& options = {});

/// Loads the pretrained base from `base_checkpoint`, then runs phase 1
/// (context layers only) and phase 2 (joint). Rejects an empty checkpoint
/// or one missing any base parameter.
std::vector<LogRow> two_phase_train(HistNet& net, std::span<const Parameter> base_checkpoint,
                                    const ContextDataset& train, const ContextDataset& val, const Schedule& schedule,
                                    std::uint64_t seed, const TrainOptions& options = {});

}  // namespace histlayer
