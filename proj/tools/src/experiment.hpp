#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "histlayer/metrics.hpp"
#include "histlayer/network.hpp"
#include "histlayer/synthetic.hpp"
#include "histlayer/training.hpp"
#include "run_config.hpp"

namespace histlayer::cli {

struct Splits {
  ContextDataset train;
  ContextDataset val;
  ContextDataset test;
};

/// Distinct generator seeds for train, val and test.
std::array<std::uint64_t, 3> split_seeds(std::uint64_t master);
Splits generate_splits(const RunConfig& cfg);
/// Writes train.hctx, val.hctx and test.hctx into cfg.data_dir.
Splits cmd_gen_data(const RunConfig& cfg);
Splits load_splits(const std::filesystem::path& dir);

/// cfg.model with classes and channels taken from the scene; base_only
/// always has a single stage.
HistNetConfig model_config(const RunConfig& cfg, Mode mode);

struct TrainResult {
  std::vector<LogRow> rows;
  std::vector<std::uint8_t> base_checkpoint;
  std::vector<std::uint8_t> phase1_checkpoint;  ///< empty for base_only
  std::vector<std::uint8_t> phase2_checkpoint;  ///< empty for base_only
  Metrics val;                                  ///< final model, averaged stages
  std::optional<Metrics> stage1_before_joint;
  std::optional<Metrics> stage1_after_joint;
};

/// Base pretraining alone.
TrainResult pretrain_base(const RunConfig& cfg, const ContextDataset& train, const ContextDataset& val);
/// Phases 1 and 2 for `mode` on top of a pretrained base.
TrainResult train_context(const RunConfig& cfg, Mode mode, std::span<const std::uint8_t> base_checkpoint,
                          const ContextDataset& train, const ContextDataset& val);

/// Full `train` command: reads the splits, pretrains the base unless
/// cfg.base_checkpoint is set, runs both phases and writes checkpoints, the
/// log and the resolved config into cfg.out_dir.
TrainResult cmd_train(const RunConfig& cfg);

/// Writes metrics.csv, recall.csv and confusion.csv into `out_dir`.
Metrics cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
                 const std::filesystem::path& out_dir, const RunConfig& cfg);

/// stage,class,bin,center,slope,effective_width,outside_support
std::string inspect_histogram_csv(std::span<const Parameter> checkpoint);

struct CompareRow {
  Mode mode;
  std::uint64_t seed = 0;
  double per_pixel = 0.0;
  double per_class = 0.0;
  double stage1_before_joint = 0.0;
  double stage1_after_joint = 0.0;
};

struct CompareResult {
  std::vector<CompareRow> rows;
  double local_bayes_ceiling = 0.0;
  double scene_aware_ceiling = 0.0;

  /// Mean over seeds of `field` for `mode`.
  double mean(Mode mode, double CompareRow::*field) const;
  std::string csv() const;
};

/// Trains every configured mode for every configured seed and writes
/// compare.csv into cfg.out_dir. Each seed regenerates the splits.
CompareResult cmd_compare(const RunConfig& cfg, std::ostream* progress = nullptr);

/// Writes resolved_config.txt into `dir`.
void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir);

}  // namespace histlayer::cli
