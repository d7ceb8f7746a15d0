#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histlayer/graph.hpp"
#include "histlayer/histogram.hpp"
#include "histlayer/tensor.hpp"

namespace histlayer {

/// Which model to build. kHistNet is the full model; the rest are ablations.
enum class Mode {
  kHistNet,      ///< learnable histogram with structural locks
  kFixHist,      ///< histogram centers and slopes never train
  kFreeAll,      ///< every histogram convolution entry trains
  kScoreGlobal,  ///< pooled stage-1 probabilities instead of a histogram
  kFeatGlobal,   ///< pooled topmost features instead of a histogram
  kBaseOnly,     ///< stage 1 only
};

std::string_view mode_name(Mode mode);
/// Accepts the names produced by mode_name; throws ConfigError otherwise.
Mode parse_mode(std::string_view name);
std::span<const Mode> all_modes();

enum class HistogramRealization { kDirect, kComposed };

struct HistNetConfig {
  std::size_t classes = 6;
  std::size_t bins = 6;
  std::size_t in_channels = 8;
  std::size_t feat_channels = 16;
  std::size_t stages = 2;
  Mode mode = Mode::kHistNet;
  /// Stages 3+ reuse the stage-2 histogram layer.
  bool share_histogram = true;
  /// kFreeAll always runs composed since its convolutions lose their structure.
  HistogramRealization realization = HistogramRealization::kDirect;

  void validate() const;
  std::size_t context_size() const noexcept { return classes * bins; }
};

enum class Phase {
  kBase,     ///< base network only
  kContext,  ///< new context layers only; base and histogram frozen
  kJoint,    ///< everything, histogram under its structural locks
};

std::string_view phase_name(Phase phase);

struct StageOutputs {
  std::vector<Var> logits;
  std::vector<Var> probs;
  std::vector<Var> losses;  ///< empty without labels
  std::optional<Var> loss;  ///< mean of per-stage losses
  Var final_probs;          ///< mean of per-stage probabilities
};

/// Trainable entry counts under the structural masks.
struct ParameterCensus {
  std::size_t base = 0;
  std::size_t histogram = 0;
  std::size_t context_fc = 0;
  std::size_t heads = 0;

  std::size_t extra() const noexcept { return histogram + context_fc + heads; }
};

/// Desk-scale HistNet: a three-layer 1x1-conv base classifier followed by
/// context-refined stages. Parameter addresses are stable for the object's
/// lifetime, so graphs built by `forward` may keep pointers into it.
class HistNet {
 public:
  HistNet(HistNetConfig config, std::uint64_t seed);

  /// Rebuilds the architecture from parameter names and shapes and loads
  /// values, momentum and lock masks. The mode comes from the empty
  /// "config.mode.<name>" entry written by save() when present.
  static HistNet from_checkpoint(std::span<const Parameter> params);

  const HistNetConfig& config() const noexcept { return config_; }

  /// `labels` may be empty, in which case no losses are built.
  StageOutputs forward(Graph& g, const Tensor& features, std::span<const std::uint8_t> labels);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> base_parameters();
  std::vector<Parameter*> context_parameters();
  std::vector<Parameter*> histogram_parameters();
  const Parameter* find(std::string_view name) const;

  /// Histogram layer feeding stage `stage` (>= 2), or nullptr.
  HistogramLayer* histogram(std::size_t stage = 2);
  const HistogramLayer* histogram(std::size_t stage = 2) const;

  void set_phase(Phase phase);
  /// Post-update projection (slope floor) for every histogram layer.
  void after_step();

  ParameterCensus census() const;

  /// Copy values of every parameter whose name appears in `params`.
  /// Throws ArgumentError naming the first required parameter that is
  /// missing or has a different shape.
  void load(std::span<const Parameter> params, bool require_all_base = true);

  /// HPRM bytes: every parameter plus the mode marker entry.
  std::vector<std::uint8_t> save() const;

 private:
  struct Affine {
    Parameter weight;
    Parameter bias;
  };

  Affine& add_affine(const std::string& name, std::size_t out, std::size_t in, double std_dev, std::uint64_t seed);
  Var context_input(Graph& g, std::size_t stage, Var prev_probs, Var top);

  HistNetConfig config_;
  std::vector<std::unique_ptr<Affine>> base_;          // conv1, conv2, cls
  std::vector<std::unique_ptr<Affine>> context_fc_;    // per stage >= 2
  std::vector<std::unique_ptr<Affine>> heads_;         // per stage >= 2
  std::vector<std::unique_ptr<HistogramLayer>> hist_;  // one, or one per stage
};

}  // namespace histlayer
