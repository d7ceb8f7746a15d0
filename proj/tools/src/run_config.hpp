#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "histlayer/network.hpp"
#include "histlayer/synthetic.hpp"
#include "histlayer/training.hpp"

namespace histlayer::cli {

struct DataSizes {
  std::size_t train_images = 2000;
  std::size_t val_images = 500;
  std::size_t test_images = 500;
  std::size_t height = 16;
  std::size_t width = 16;
};

/// Everything a command needs. Parsed from `key = value` lines; values that
/// are lists use JSON syntax.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "runs";
  /// Empty means "pretrain the base first".
  std::filesystem::path base_checkpoint;
  SceneSpec scene = SceneSpec::desk_default();
  DataSizes data;
  /// classes and in_channels always follow `scene`.
  HistNetConfig model;
  Schedule schedule;
  std::size_t eval_batch_size = 50;
  /// 0 defers to HISTLAYER_THREADS.
  std::size_t eval_threads = 0;
  std::vector<Mode> compare_modes{all_modes().begin(), all_modes().end()};
  std::vector<std::uint64_t> compare_seeds{1, 2, 3};
  std::size_t ceiling_samples = 200000;

  /// Throws ConfigError on any inconsistency.
  void validate() const;
  EvalOptions eval_options(std::size_t stage = 0) const;

  /// Applies one `key = value` assignment; unknown keys throw ConfigError.
  void set(std::string_view key, std::string_view value);
  /// Renders every key, so the output parses back to an identical config.
  std::string render() const;
};

RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
std::vector<std::string> config_keys();

}  // namespace histlayer::cli
