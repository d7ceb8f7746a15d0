#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "histlayer/binary_io.hpp"
#include "histlayer/error.hpp"

namespace histlayer::cli {
namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
  }
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  std::string s(v);
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + s + "'");
  }
  return d;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true or false, got '" + std::string(v) + "'");
}

json parse_json(std::string_view key, std::string_view v) {
  try {
    return json::parse(v);
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + std::string(key) + "': " + e.what());
  }
}

template <typename T>
T json_as(std::string_view key, const json& j) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + std::string(key) + "': " + e.what());
  }
}

std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

void refresh_scene_shape(SceneSpec& s) {
  s.scenes = s.class_priors.size();
  s.classes = s.class_priors.empty() ? 0 : s.class_priors.front().size();
  s.channels = s.class_means.empty() ? 0 : s.class_means.front().size();
}

const char* realization_name(HistogramRealization r) {
  return r == HistogramRealization::kDirect ? "direct" : "composed";
}

}  // namespace

std::vector<std::string> config_keys() {
  return {"seed",
          "data_dir",
          "out_dir",
          "base_checkpoint",
          "scene.class_priors",
          "scene.class_means",
          "scene.noise_sigma",
          "scene.ambiguous_pairs",
          "data.train_images",
          "data.val_images",
          "data.test_images",
          "data.height",
          "data.width",
          "model.mode",
          "model.bins",
          "model.feat_channels",
          "model.stages",
          "model.share_histogram",
          "model.realization",
          "train.base_epochs",
          "train.phase1_epochs",
          "train.phase2_epochs",
          "train.batch_size",
          "train.base_lr",
          "train.lr",
          "train.momentum",
          "train.lr_decay",
          "train.lr_step",
          "eval.batch_size",
          "eval.threads",
          "compare.modes",
          "compare.seeds",
          "ceiling.samples"};
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  auto size = [&] { return parse_number<std::size_t>(key, v); };
  if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "data_dir") {
    data_dir = std::string(v);
  } else if (key == "out_dir") {
    out_dir = std::string(v);
  } else if (key == "base_checkpoint") {
    base_checkpoint = std::string(v);
  } else if (key == "scene.class_priors") {
    scene.class_priors = json_as<std::vector<std::vector<double>>>(key, parse_json(key, v));
    refresh_scene_shape(scene);
  } else if (key == "scene.class_means") {
    scene.class_means = json_as<std::vector<std::vector<double>>>(key, parse_json(key, v));
    refresh_scene_shape(scene);
  } else if (key == "scene.noise_sigma") {
    scene.noise_sigma = parse_double(key, v);
  } else if (key == "scene.ambiguous_pairs") {
    scene.ambiguous_pairs = json_as<std::vector<std::pair<std::size_t, std::size_t>>>(key, parse_json(key, v));
  } else if (key == "data.train_images") {
    data.train_images = size();
  } else if (key == "data.val_images") {
    data.val_images = size();
  } else if (key == "data.test_images") {
    data.test_images = size();
  } else if (key == "data.height") {
    data.height = size();
  } else if (key == "data.width") {
    data.width = size();
  } else if (key == "model.mode") {
    model.mode = parse_mode(v);
  } else if (key == "model.bins") {
    model.bins = size();
  } else if (key == "model.feat_channels") {
    model.feat_channels = size();
  } else if (key == "model.stages") {
    model.stages = size();
  } else if (key == "model.share_histogram") {
    model.share_histogram = parse_bool(key, v);
  } else if (key == "model.realization") {
    if (v == "direct") {
      model.realization = HistogramRealization::kDirect;
    } else if (v == "composed") {
      model.realization = HistogramRealization::kComposed;
    } else {
      throw ConfigError("config key 'model.realization': expected direct or composed, got '" + std::string(v) + "'");
    }
  } else if (key == "train.base_epochs") {
    schedule.base_epochs = size();
  } else if (key == "train.phase1_epochs") {
    schedule.phase1_epochs = size();
  } else if (key == "train.phase2_epochs") {
    schedule.phase2_epochs = size();
  } else if (key == "train.batch_size") {
    schedule.batch_size = size();
  } else if (key == "train.base_lr") {
    schedule.base_lr = parse_double(key, v);
  } else if (key == "train.lr") {
    schedule.lr = parse_double(key, v);
  } else if (key == "train.momentum") {
    schedule.momentum = parse_double(key, v);
  } else if (key == "train.lr_decay") {
    schedule.lr_decay = parse_double(key, v);
  } else if (key == "train.lr_step") {
    schedule.lr_step = size();
  } else if (key == "eval.batch_size") {
    eval_batch_size = size();
  } else if (key == "eval.threads") {
    eval_threads = size();
  } else if (key == "compare.modes") {
    compare_modes.clear();
    std::string_view rest = v;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = trim(rest.substr(0, comma));
      if (!item.empty()) compare_modes.push_back(parse_mode(item));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  } else if (key == "compare.seeds") {
    compare_seeds.clear();
    std::string_view rest = v;
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const std::string_view item = trim(rest.substr(0, comma));
      if (!item.empty()) compare_seeds.push_back(parse_number<std::uint64_t>(key, item));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
  } else if (key == "ceiling.samples") {
    ceiling_samples = size();
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

void RunConfig::validate() const {
  scene.validate();
  HistNetConfig m = model;
  m.classes = scene.classes;
  m.in_channels = scene.channels;
  if (m.mode == Mode::kBaseOnly) m.stages = 1;
  m.validate();
  schedule.validate();
  if (data.height == 0 || data.width == 0) throw ConfigError("data.height and data.width must be positive");
  if (data.train_images == 0 || data.val_images == 0 || data.test_images == 0) {
    throw ConfigError("every split needs at least one image");
  }
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
  if (compare_modes.empty()) throw ConfigError("compare.modes is empty");
  if (compare_seeds.empty()) throw ConfigError("compare.seeds is empty");
  if (ceiling_samples == 0) throw ConfigError("ceiling.samples must be positive");
}

EvalOptions RunConfig::eval_options(std::size_t stage) const {
  EvalOptions o;
  o.stage = stage;
  o.batch_size = eval_batch_size;
  o.threads = eval_threads == 0 ? threads_from_env() : eval_threads;
  return o;
}

std::string RunConfig::render() const {
  std::ostringstream os;
  std::string modes;
  for (Mode m : compare_modes) modes += (modes.empty() ? "" : ",") + std::string(mode_name(m));
  std::string seeds;
  for (std::uint64_t s : compare_seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  auto doubles = [](const std::vector<std::vector<double>>& rows) {
    std::string out = "[";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out += i ? ",[" : "[";
      for (std::size_t j = 0; j < rows[i].size(); ++j) out += (j ? "," : "") + fmt_double(rows[i][j]);
      out += "]";
    }
    return out + "]";
  };
  os << "seed = " << seed << '\n'
     << "data_dir = " << data_dir.string() << '\n'
     << "out_dir = " << out_dir.string() << '\n'
     << "base_checkpoint = " << base_checkpoint.string() << '\n'
     << "scene.class_priors = " << doubles(scene.class_priors) << '\n'
     << "scene.class_means = " << doubles(scene.class_means) << '\n'
     << "scene.noise_sigma = " << fmt_double(scene.noise_sigma) << '\n'
     << "scene.ambiguous_pairs = " << json(scene.ambiguous_pairs).dump() << '\n'
     << "data.train_images = " << data.train_images << '\n'
     << "data.val_images = " << data.val_images << '\n'
     << "data.test_images = " << data.test_images << '\n'
     << "data.height = " << data.height << '\n'
     << "data.width = " << data.width << '\n'
     << "model.mode = " << mode_name(model.mode) << '\n'
     << "model.bins = " << model.bins << '\n'
     << "model.feat_channels = " << model.feat_channels << '\n'
     << "model.stages = " << model.stages << '\n'
     << "model.share_histogram = " << (model.share_histogram ? "true" : "false") << '\n'
     << "model.realization = " << realization_name(model.realization) << '\n'
     << "train.base_epochs = " << schedule.base_epochs << '\n'
     << "train.phase1_epochs = " << schedule.phase1_epochs << '\n'
     << "train.phase2_epochs = " << schedule.phase2_epochs << '\n'
     << "train.batch_size = " << schedule.batch_size << '\n'
     << "train.base_lr = " << fmt_double(schedule.base_lr) << '\n'
     << "train.lr = " << fmt_double(schedule.lr) << '\n'
     << "train.momentum = " << fmt_double(schedule.momentum) << '\n'
     << "train.lr_decay = " << fmt_double(schedule.lr_decay) << '\n'
     << "train.lr_step = " << schedule.lr_step << '\n'
     << "eval.batch_size = " << eval_batch_size << '\n'
     << "eval.threads = " << eval_threads << '\n'
     << "compare.modes = " << modes << '\n'
     << "compare.seeds = " << seeds << '\n'
     << "ceiling.samples = " << ceiling_samples << '\n';
  return os.str();
}

RunConfig parse_config(std::string_view text, RunConfig cfg) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace histlayer::cli
