#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "histlayer/tensor.hpp"

namespace histlayer {

/// Generative model of the context-disambiguation task. Each image picks a
/// scene uniformly; each pixel draws a class from that scene's prior and a
/// feature from an isotropic Gaussian around the class mean. Classes in an
/// ambiguous pair share a mean and never co-occur in a scene, so only the
/// image-level context can tell them apart.
struct SceneSpec {
  std::size_t scenes = 0;
  std::size_t classes = 0;
  std::size_t channels = 0;
  std::vector<std::vector<double>> class_priors;  ///< [scene][class]
  std::vector<std::vector<double>> class_means;   ///< [class][channel]
  double noise_sigma = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> ambiguous_pairs;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  /// Class frequencies averaged over uniformly drawn scenes.
  std::vector<double> marginal_priors() const;

  /// Fraction of pixels belonging to any ambiguous-pair class.
  double ambiguous_occupancy() const;

  std::string to_json() const;
  static SceneSpec from_json(const std::string& text);

  /// Two scenes, six classes, eight channels; classes 4 and 5 are the
  /// ambiguous pair, each confined to one scene at prior 0.3.
  static SceneSpec desk_default();

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct ContextDataset {
  Tensor features;                      ///< [N,D,H,W]
  std::vector<std::uint8_t> labels;     ///< [N,H,W]
  std::vector<std::uint8_t> scene_ids;  ///< [N]
  SceneSpec spec;
  std::uint64_t seed = 0;

  std::size_t images() const noexcept { return features.shape().n; }
  std::size_t height() const noexcept { return features.shape().h; }
  std::size_t width() const noexcept { return features.shape().w; }
  std::size_t pixels_per_image() const noexcept { return features.shape().spatial(); }

  /// Images [first, first + count) as a new batch.
  Tensor feature_batch(std::size_t first, std::size_t count) const;
  std::span<const std::uint8_t> label_batch(std::size_t first, std::size_t count) const;
  /// Gather an arbitrary set of images.
  Tensor feature_batch(std::span<const std::size_t> images) const;
  std::vector<std::uint8_t> label_batch(std::span<const std::size_t> images) const;

  friend bool operator==(const ContextDataset&, const ContextDataset&) = default;
};

/// Pure function of its arguments. Image i is generated from its own stream
/// seeded with seed ^ i.
ContextDataset generate(const SceneSpec& spec, std::size_t images, std::size_t height, std::size_t width,
                        std::uint64_t seed);

/// Monte-Carlo estimate of the best per-pixel accuracy reachable from one
/// pixel's feature alone (scene marginalized out). Each sample contributes
/// the Bayes posterior of the chosen class, which is the expected accuracy
/// of the Bayes rule at that feature.
double local_bayes_ceiling(const SceneSpec& spec, std::size_t samples, std::uint64_t seed);

/// Same estimate when the scene is known to the classifier.
double scene_aware_ceiling(const SceneSpec& spec, std::size_t samples, std::uint64_t seed);

inline constexpr std::uint32_t kDatasetVersion = 1;

/// HCTX layout, little-endian:
///   "HCTX" | version u32 | N, D, H, W, K, S u32 |
///   float64 features | u8 labels | u8 scene ids | u32 length + JSON metadata
std::vector<std::uint8_t> encode_dataset(const ContextDataset& dataset);
ContextDataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const ContextDataset& dataset, const std::filesystem::path& path);
ContextDataset read_dataset(const std::filesystem::path& path);

}  // namespace histlayer
