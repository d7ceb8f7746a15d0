#include "histlayer/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "histlayer/checkpoint.hpp"
#include "histlayer/error.hpp"
#include "histlayer/ops.hpp"
#include "histlayer/rng.hpp"

namespace histlayer {
namespace {

constexpr std::array<Mode, 6> kModes = {Mode::kHistNet,     Mode::kFixHist,    Mode::kFreeAll,
                                        Mode::kScoreGlobal, Mode::kFeatGlobal, Mode::kBaseOnly};

constexpr std::string_view kModeMarker = "config.mode.";

bool uses_histogram(Mode m) { return m == Mode::kHistNet || m == Mode::kFixHist || m == Mode::kFreeAll; }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<std::uint8_t>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string stage_prefix(std::size_t stage) { return "stage" + std::to_string(stage); }

std::string_view context_kind(Mode m) {
  switch (m) {
    case Mode::kScoreGlobal:
      return "score_fc";
    case Mode::kFeatGlobal:
      return "feat_fc";
    default:
      return "hist_fc";
  }
}

}  // namespace

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kHistNet:
      return "histnet";
    case Mode::kFixHist:
      return "fix_hist";
    case Mode::kFreeAll:
      return "free_all";
    case Mode::kScoreGlobal:
      return "score_global";
    case Mode::kFeatGlobal:
      return "feat_global";
    case Mode::kBaseOnly:
      return "base_only";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : kModes) {
    if (mode_name(m) == name) return m;
  }
  throw ConfigError("unknown mode \"" + std::string(name) +
                    "\" (expected histnet, fix_hist, free_all, score_global, feat_global or base_only)");
}

std::span<const Mode> all_modes() { return kModes; }

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::kBase:
      return "base";
    case Phase::kContext:
      return "phase1";
    case Phase::kJoint:
      return "phase2";
  }
  return "?";
}

void HistNetConfig::validate() const {
  if (classes == 0 || in_channels == 0 || feat_channels == 0) throw ConfigError("network sizes must be positive");
  if (bins < 2) throw ConfigError("histogram needs at least 2 bins");
  if (stages < 1) throw ConfigError("stages must be >= 1");
  if (mode == Mode::kBaseOnly && stages != 1) throw ConfigError("base_only has exactly one stage");
  if (mode != Mode::kBaseOnly && stages < 2) {
    throw ConfigError(std::string(mode_name(mode)) + " needs stages >= 2, got " + std::to_string(stages));
  }
}

HistNet::Affine& HistNet::add_affine(const std::string& name, std::size_t out, std::size_t in, double std_dev,
                                     std::uint64_t seed) {
  Rng rng(seed ^ fnv1a(name));
  Tensor w(Shape{out, in, 1, 1});
  for (double& v : w.values()) v = std_dev * rng.normal();
  auto affine = std::make_unique<Affine>(
      Affine{Parameter(name + ".weight", std::move(w)), Parameter(name + ".bias", Tensor(Shape{out, 1, 1, 1}))});
  Affine& ref = *affine;
  if (name.rfind("base.", 0) == 0) {
    base_.push_back(std::move(affine));
  } else if (name.find(".head") != std::string::npos) {
    heads_.push_back(std::move(affine));
  } else {
    context_fc_.push_back(std::move(affine));
  }
  return ref;
}

HistNet::HistNet(HistNetConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  if (config_.mode == Mode::kFreeAll) config_.realization = HistogramRealization::kComposed;
  const std::size_t K = config_.classes;
  const std::size_t F = config_.feat_channels;
  const std::size_t KB = config_.context_size();
  // Base stands in for a pretrained backbone: He init. New layers: N(0, 0.01), zero bias.
  add_affine("base.conv1", F, config_.in_channels, std::sqrt(2.0 / static_cast<double>(config_.in_channels)), seed);
  add_affine("base.conv2", F, F, std::sqrt(2.0 / static_cast<double>(F)), seed);
  add_affine("base.cls", K, F, std::sqrt(1.0 / static_cast<double>(F)), seed);
  for (std::size_t t = 2; t <= config_.stages; ++t) {
    const std::string prefix = stage_prefix(t);
    std::size_t fc_in = KB;
    if (config_.mode == Mode::kScoreGlobal) fc_in = K;
    if (config_.mode == Mode::kFeatGlobal) fc_in = F;
    add_affine(prefix + "." + std::string(context_kind(config_.mode)), KB, fc_in, 0.01, seed);
    add_affine(prefix + ".head", K, F + KB, 0.01, seed);
    if (uses_histogram(config_.mode) && (t == 2 || !config_.share_histogram)) {
      const std::string hp = config_.share_histogram ? std::string("hist") : prefix + ".hist";
      auto layer = std::make_unique<HistogramLayer>(hp, K, config_.bins);
      if (config_.mode == Mode::kFixHist) layer->lock_everything();
      if (config_.mode == Mode::kFreeAll) layer->unlock_everything();
      hist_.push_back(std::move(layer));
    }
  }
}

HistogramLayer* HistNet::histogram(std::size_t stage) {
  if (hist_.empty() || stage < 2 || stage > config_.stages) return nullptr;
  return config_.share_histogram ? hist_.front().get() : hist_[stage - 2].get();
}

const HistogramLayer* HistNet::histogram(std::size_t stage) const {
  return const_cast<HistNet*>(this)->histogram(stage);
}

Var HistNet::context_input(Graph& g, std::size_t stage, Var prev_probs, Var top) {
  switch (config_.mode) {
    case Mode::kScoreGlobal:
      return global_avg_pool(g, prev_probs);
    case Mode::kFeatGlobal:
      return global_avg_pool(g, top);
    default: {
      HistogramLayer* layer = histogram(stage);
      return config_.realization == HistogramRealization::kDirect ? layer->forward_direct(g, prev_probs)
                                                                   : layer->forward_composed(g, prev_probs);
    }
  }
}

StageOutputs HistNet::forward(Graph& g, const Tensor& features, std::span<const std::uint8_t> labels) {
  if (features.shape().c != config_.in_channels) {
    throw ShapeError("network expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     features.shape().str());
  }
  StageOutputs out;
  auto classify = [&](Var logits) {
    out.logits.push_back(logits);
    if (labels.empty()) {
      out.probs.push_back(softmax(g, logits));
    } else {
      SoftmaxXent sx = softmax_xent(g, logits, labels);
      out.probs.push_back(sx.probs);
      out.losses.push_back(sx.loss);
    }
  };

  Var x = g.input(features, "features", false);
  Var h1 = relu(g, conv1x1(g, x, base_[0]->weight, base_[0]->bias));
  Var top = relu(g, conv1x1(g, h1, base_[1]->weight, base_[1]->bias));
  classify(conv1x1(g, top, base_[2]->weight, base_[2]->bias));

  for (std::size_t t = 2; t <= config_.stages; ++t) {
    Var ctx_in = context_input(g, t, out.probs.back(), top);
    Affine& fc = *context_fc_[t - 2];
    Var ctx = fully_connected(g, ctx_in, fc.weight, fc.bias);
    Var joined = broadcast_concat(g, top, ctx);
    Affine& head = *heads_[t - 2];
    classify(conv1x1(g, joined, head.weight, head.bias));
  }

  if (!out.losses.empty()) out.loss = average(g, out.losses);
  out.final_probs = out.probs.size() == 1 ? out.probs.front() : average(g, out.probs);
  return out;
}

std::vector<Parameter*> HistNet::base_parameters() {
  std::vector<Parameter*> out;
  for (auto& a : base_) out.insert(out.end(), {&a->weight, &a->bias});
  return out;
}

std::vector<Parameter*> HistNet::context_parameters() {
  std::vector<Parameter*> out;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    out.insert(out.end(), {&context_fc_[i]->weight, &context_fc_[i]->bias, &heads_[i]->weight, &heads_[i]->bias});
  }
  return out;
}

std::vector<Parameter*> HistNet::histogram_parameters() {
  std::vector<Parameter*> out;
  for (auto& h : hist_) out.insert(out.end(), {&h->conv1_weight, &h->conv1_bias, &h->conv2_weight, &h->conv2_bias});
  return out;
}

std::vector<Parameter*> HistNet::parameters() {
  std::vector<Parameter*> out = base_parameters();
  for (Parameter* p : context_parameters()) out.push_back(p);
  for (Parameter* p : histogram_parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> HistNet::parameters() const {
  auto mut = const_cast<HistNet*>(this)->parameters();
  return std::vector<const Parameter*>(mut.begin(), mut.end());
}

const Parameter* HistNet::find(std::string_view name) const {
  for (const Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

void HistNet::set_phase(Phase phase) {
  for (Parameter* p : parameters()) p->momentum.fill(0.0);
  switch (phase) {
    case Phase::kBase:
      for (Parameter* p : base_parameters()) p->thaw();
      for (Parameter* p : context_parameters()) p->freeze();
      for (Parameter* p : histogram_parameters()) p->freeze();
      break;
    case Phase::kContext:
      for (Parameter* p : base_parameters()) p->freeze();
      for (Parameter* p : context_parameters()) p->thaw();
      for (Parameter* p : histogram_parameters()) p->freeze();
      break;
    case Phase::kJoint:
      for (Parameter* p : parameters()) p->thaw();
      break;
  }
}

void HistNet::after_step() {
  if (config_.mode == Mode::kFreeAll) return;
  for (auto& h : hist_) h->clamp_slopes();
}

ParameterCensus HistNet::census() const {
  ParameterCensus c;
  auto count = [](const Parameter& p) { return p.structural_count(); };
  for (const auto& a : base_) c.base += count(a->weight) + count(a->bias);
  for (const auto& a : context_fc_) c.context_fc += count(a->weight) + count(a->bias);
  for (const auto& a : heads_) c.heads += count(a->weight) + count(a->bias);
  for (const auto& h : hist_) {
    c.histogram += count(h->conv1_weight) + count(h->conv1_bias) + count(h->conv2_weight) + count(h->conv2_bias);
  }
  return c;
}

void HistNet::load(std::span<const Parameter> params, bool require_all_base) {
  std::map<std::string_view, const Parameter*> by_name;
  for (const Parameter& p : params) by_name[p.name] = &p;
  for (Parameter* p : parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      if (require_all_base && p->name.rfind("base.", 0) == 0) {
        throw ArgumentError("checkpoint lacks base parameter " + p->name);
      }
      continue;
    }
    const Parameter& src = *it->second;
    if (src.shape() != p->shape()) {
      throw ShapeError("parameter " + p->name + " has shape " + src.shape().str() + " in checkpoint but " +
                       p->shape().str() + " in the network");
    }
    p->value = src.value;
    p->momentum = src.momentum;
  }
}

std::vector<std::uint8_t> HistNet::save() const {
  auto params = parameters();
  // Names alone cannot separate histnet, fix_hist and free_all, so the mode
  // travels as an empty marker entry.
  const Parameter marker(std::string(kModeMarker) + std::string(mode_name(config_.mode)), Tensor(Shape{0, 0, 0, 0}));
  params.push_back(&marker);
  return encode_checkpoint(params);
}

HistNet HistNet::from_checkpoint(std::span<const Parameter> params) {
  std::map<std::string, const Parameter*> by_name;
  for (const Parameter& p : params) by_name[p.name] = &p;
  auto need = [&](const std::string& name) -> const Parameter& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ArgumentError("checkpoint lacks parameter " + name);
    return *it->second;
  };
  HistNetConfig cfg;
  cfg.in_channels = need("base.conv1.weight").shape().c;
  cfg.feat_channels = need("base.conv1.weight").shape().n;
  cfg.classes = need("base.cls.weight").shape().n;
  cfg.stages = 1;
  while (by_name.count(stage_prefix(cfg.stages + 1) + ".head.weight")) ++cfg.stages;
  if (cfg.stages == 1) {
    cfg.mode = Mode::kBaseOnly;
  } else {
    const std::string s2 = stage_prefix(2);
    const std::size_t kb = need(s2 + ".head.weight").shape().c - cfg.feat_channels;
    if (kb % cfg.classes != 0) throw ArgumentError("checkpoint: context width is not a multiple of the class count");
    cfg.bins = kb / cfg.classes;
    if (by_name.count(s2 + ".score_fc.weight")) {
      cfg.mode = Mode::kScoreGlobal;
    } else if (by_name.count(s2 + ".feat_fc.weight")) {
      cfg.mode = Mode::kFeatGlobal;
    } else {
      need(s2 + ".hist_fc.weight");
      cfg.mode = Mode::kHistNet;
      cfg.share_histogram = by_name.count("hist.conv1.bias") > 0;
    }
  }
  for (const auto& [name, p] : by_name) {
    if (name.rfind(kModeMarker, 0) != 0) continue;
    const Mode marked = parse_mode(std::string_view(name).substr(kModeMarker.size()));
    const bool consistent = marked == cfg.mode || (uses_histogram(marked) && uses_histogram(cfg.mode));
    if (!consistent) throw ArgumentError("checkpoint mode marker " + name + " contradicts its parameters");
    cfg.mode = marked;
  }
  HistNet net(cfg, 0);
  net.load(params, true);
  for (auto& h : net.hist_) {
    if (!h->preserves_histogram_structure()) {
      net.config_.realization = HistogramRealization::kComposed;
      h->unlock_everything();
    }
  }
  for (Parameter* p : net.parameters()) p->lock_mask = need(p->name).lock_mask;
  return net;
}

}  // namespace histlayer
