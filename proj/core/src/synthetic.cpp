#include "histlayer/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>

#include "histlayer/binary_io.hpp"
#include "histlayer/error.hpp"
#include "histlayer/rng.hpp"

namespace histlayer {

void SceneSpec::validate() const {
  if (scenes == 0 || classes == 0 || channels == 0) throw ConfigError("scene spec: counts must be positive");
  if (classes > 254) throw ConfigError("scene spec: at most 254 classes fit the u8 label format");
  if (scenes > 255) throw ConfigError("scene spec: at most 255 scenes fit the u8 scene-id format");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("scene spec: noise_sigma must be >= 0");
  if (class_priors.size() != scenes) throw ConfigError("scene spec: need one prior row per scene");
  for (std::size_t s = 0; s < scenes; ++s) {
    const auto& row = class_priors[s];
    if (row.size() != classes) throw ConfigError("scene spec: prior row " + std::to_string(s) + " has wrong length");
    double sum = 0.0;
    for (double v : row) {
      if (!(v >= 0.0)) throw ConfigError("scene spec: negative prior in scene " + std::to_string(s));
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("scene spec: priors of scene " + std::to_string(s) + " sum to " + std::to_string(sum));
    }
  }
  if (class_means.size() != classes) throw ConfigError("scene spec: need one mean per class");
  for (const auto& m : class_means) {
    if (m.size() != channels) throw ConfigError("scene spec: class mean has wrong channel count");
  }
  for (auto [a, b] : ambiguous_pairs) {
    if (a >= classes || b >= classes || a == b) throw ConfigError("scene spec: bad ambiguous pair");
    if (class_means[a] != class_means[b]) {
      throw ConfigError("scene spec: ambiguous pair (" + std::to_string(a) + "," + std::to_string(b) +
                        ") must share an identical mean");
    }
    for (std::size_t s = 0; s < scenes; ++s) {
      if (class_priors[s][a] > 0.0 && class_priors[s][b] > 0.0) {
        throw ConfigError("scene spec: ambiguous pair (" + std::to_string(a) + "," + std::to_string(b) +
                          ") co-occurs in scene " + std::to_string(s));
      }
    }
  }
}

std::vector<double> SceneSpec::marginal_priors() const {
  std::vector<double> out(classes, 0.0);
  for (const auto& row : class_priors) {
    for (std::size_t k = 0; k < classes; ++k) out[k] += row[k] / static_cast<double>(scenes);
  }
  return out;
}

double SceneSpec::ambiguous_occupancy() const {
  const auto marg = marginal_priors();
  std::vector<bool> ambiguous(classes, false);
  for (auto [a, b] : ambiguous_pairs) ambiguous[a] = ambiguous[b] = true;
  double p = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    if (ambiguous[k]) p += marg[k];
  }
  return p;
}

std::string SceneSpec::to_json() const {
  nlohmann::json j;
  j["scenes"] = scenes;
  j["classes"] = classes;
  j["channels"] = channels;
  j["class_priors"] = class_priors;
  j["class_means"] = class_means;
  j["noise_sigma"] = noise_sigma;
  j["ambiguous_pairs"] = ambiguous_pairs;
  return j.dump();
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SceneSpec s;
    s.scenes = j.at("scenes").get<std::size_t>();
    s.classes = j.at("classes").get<std::size_t>();
    s.channels = j.at("channels").get<std::size_t>();
    s.class_priors = j.at("class_priors").get<std::vector<std::vector<double>>>();
    s.class_means = j.at("class_means").get<std::vector<std::vector<double>>>();
    s.noise_sigma = j.at("noise_sigma").get<double>();
    s.ambiguous_pairs = j.at("ambiguous_pairs").get<std::vector<std::pair<std::size_t, std::size_t>>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene spec json: ") + e.what());
  }
}

SceneSpec SceneSpec::desk_default() {
  SceneSpec s;
  s.scenes = 2;
  s.classes = 6;
  s.channels = 8;
  // 0 ground and 3 tree appear everywhere; 1 sky and 4 bird only in scene 0;
  // 2 sea and 5 boat only in scene 1. Bird and boat look identical.
  s.class_priors = {{0.25, 0.25, 0.0, 0.2, 0.3, 0.0}, {0.25, 0.0, 0.25, 0.2, 0.0, 0.3}};
  s.class_means.assign(6, std::vector<double>(8, 0.0));
  for (std::size_t k = 0; k < 5; ++k) s.class_means[k][k] = 1.5;
  s.class_means[5] = s.class_means[4];
  s.noise_sigma = 0.3;
  s.ambiguous_pairs = {{4, 5}};
  return s;
}

Tensor ContextDataset::feature_batch(std::size_t first, std::size_t count) const {
  const Shape s = features.shape();
  if (first + count > s.n) throw ArgumentError("feature_batch: range past end of dataset");
  const std::size_t per = s.c * s.spatial();
  const auto src = features.values().subspan(first * per, count * per);
  return Tensor(Shape{count, s.c, s.h, s.w}, std::vector<double>(src.begin(), src.end()));
}

std::span<const std::uint8_t> ContextDataset::label_batch(std::size_t first, std::size_t count) const {
  const std::size_t per = pixels_per_image();
  return std::span<const std::uint8_t>(labels).subspan(first * per, count * per);
}

Tensor ContextDataset::feature_batch(std::span<const std::size_t> images) const {
  const Shape s = features.shape();
  const std::size_t per = s.c * s.spatial();
  std::vector<double> out;
  out.reserve(images.size() * per);
  for (std::size_t i : images) {
    const auto src = features.values().subspan(i * per, per);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor(Shape{images.size(), s.c, s.h, s.w}, std::move(out));
}

std::vector<std::uint8_t> ContextDataset::label_batch(std::span<const std::size_t> images) const {
  const std::size_t per = pixels_per_image();
  std::vector<std::uint8_t> out;
  out.reserve(images.size() * per);
  for (std::size_t i : images) {
    out.insert(out.end(), labels.begin() + static_cast<std::ptrdiff_t>(i * per),
               labels.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  return out;
}

ContextDataset generate(const SceneSpec& spec, std::size_t images, std::size_t height, std::size_t width,
                        std::uint64_t seed) {
  spec.validate();
  if (height == 0 || width == 0) throw ArgumentError("generate: image size must be positive");
  const std::size_t hw = height * width;
  ContextDataset ds;
  ds.features = Tensor(Shape{images, spec.channels, height, width});
  ds.labels.resize(images * hw);
  ds.scene_ids.resize(images);
  ds.spec = spec;
  ds.seed = seed;
  for (std::size_t i = 0; i < images; ++i) {
    Rng rng(seed ^ static_cast<std::uint64_t>(i));
    const std::size_t scene = rng.index(spec.scenes);
    ds.scene_ids[i] = static_cast<std::uint8_t>(scene);
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t label = rng.categorical(spec.class_priors[scene]);
      ds.labels[i * hw + p] = static_cast<std::uint8_t>(label);
      for (std::size_t d = 0; d < spec.channels; ++d) {
        double v = spec.class_means[label][d];
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        ds.features.plane(i, d)[p] = v;
      }
    }
  }
  return ds;
}

namespace {

// Expected accuracy of the Bayes rule under class weights `prior` at feature x.
double bayes_hit(const SceneSpec& spec, std::span<const double> prior, std::span<const double> x) {
  const double inv_two_var = 1.0 / (2.0 * spec.noise_sigma * spec.noise_sigma);
  std::vector<double> logp(spec.classes, -std::numeric_limits<double>::infinity());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < spec.classes; ++k) {
    if (prior[k] <= 0.0) continue;
    double d2 = 0.0;
    for (std::size_t d = 0; d < spec.channels; ++d) {
      const double diff = x[d] - spec.class_means[k][d];
      d2 += diff * diff;
    }
    logp[k] = std::log(prior[k]) - d2 * inv_two_var;
    mx = std::max(mx, logp[k]);
  }
  double sum = 0.0;
  for (double lp : logp) sum += std::exp(lp - mx);
  return 1.0 / sum;  // max posterior = exp(mx - mx) / sum
}

// Noise-free case: classes sharing a mean are indistinguishable, the rest are exact.
double noiseless_accuracy(const SceneSpec& spec, std::span<const double> prior) {
  std::map<std::vector<double>, double> best;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    double& b = best[spec.class_means[k]];
    b = std::max(b, prior[k]);
  }
  double acc = 0.0;
  for (const auto& [mean, p] : best) acc += p;
  return acc;
}

double ceiling(const SceneSpec& spec, std::size_t samples, std::uint64_t seed, bool scene_known) {
  spec.validate();
  if (samples == 0) throw ArgumentError("ceiling: need at least one Monte-Carlo sample");
  const std::vector<double> marginal = spec.marginal_priors();
  if (spec.noise_sigma == 0.0) {
    if (!scene_known) return noiseless_accuracy(spec, marginal);
    double acc = 0.0;
    for (const auto& row : spec.class_priors) acc += noiseless_accuracy(spec, row) / static_cast<double>(spec.scenes);
    return acc;
  }
  Rng rng(seed);
  std::vector<double> x(spec.channels);
  double total = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t scene = rng.index(spec.scenes);
    const std::size_t label = rng.categorical(spec.class_priors[scene]);
    for (std::size_t d = 0; d < spec.channels; ++d) x[d] = spec.class_means[label][d] + spec.noise_sigma * rng.normal();
    total += bayes_hit(spec, scene_known ? std::span<const double>(spec.class_priors[scene]) : marginal, x);
  }
  return total / static_cast<double>(samples);
}

}  // namespace

double local_bayes_ceiling(const SceneSpec& spec, std::size_t samples, std::uint64_t seed) {
  return ceiling(spec, samples, seed, false);
}

double scene_aware_ceiling(const SceneSpec& spec, std::size_t samples, std::uint64_t seed) {
  return ceiling(spec, samples, seed, true);
}

std::vector<std::uint8_t> encode_dataset(const ContextDataset& ds) {
  const Shape s = ds.features.shape();
  ByteWriter w;
  w.magic("HCTX");
  w.u32(kDatasetVersion);
  for (std::size_t v : {s.n, s.c, s.h, s.w, ds.spec.classes, ds.spec.scenes}) w.u32(static_cast<std::uint32_t>(v));
  for (double v : ds.features.values()) w.f64(v);
  w.bytes(ds.labels);
  w.bytes(ds.scene_ids);
  nlohmann::json meta;
  meta["spec"] = nlohmann::json::parse(ds.spec.to_json());
  meta["seed"] = ds.seed;
  w.string(meta.dump());
  return w.take();
}

ContextDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset");
  r.expect_magic("HCTX");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "dataset: version " + std::to_string(version) + ", expected " + std::to_string(kDatasetVersion));
  }
  const std::size_t n = r.u32(), d = r.u32(), h = r.u32(), w = r.u32(), k = r.u32(), s = r.u32();
  ContextDataset ds;
  ds.features = Tensor(Shape{n, d, h, w});
  // Check the fixed-size payload up front so a bogus header cannot trigger a huge loop.
  if (r.remaining() / 8 < ds.features.size()) {
    throw FormatError(FormatError::Kind::kTruncated, "dataset: truncated feature block");
  }
  for (double& v : ds.features.values()) v = r.f64();
  auto labels = r.bytes(n * h * w);
  ds.labels.assign(labels.begin(), labels.end());
  auto scenes = r.bytes(n);
  ds.scene_ids.assign(scenes.begin(), scenes.end());
  const std::string meta_text = r.string();
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    ds.spec = SceneSpec::from_json(meta.at("spec").dump());
    ds.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kCorrupt, std::string("dataset: metadata: ") + e.what());
  }
  if (ds.spec.classes != k || ds.spec.scenes != s || ds.spec.channels != d) {
    throw FormatError(FormatError::Kind::kCorrupt, "dataset: header counts disagree with embedded spec");
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::kCorrupt, "dataset: trailing bytes");
  return ds;
}

void write_dataset(const ContextDataset& dataset, const std::filesystem::path& path) {
  write_file(path, encode_dataset(dataset));
}

ContextDataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

}  // namespace histlayer
