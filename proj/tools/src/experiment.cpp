#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "histlayer/binary_io.hpp"
#include "histlayer/checkpoint.hpp"
#include "histlayer/error.hpp"
#include "histlayer/rng.hpp"

namespace histlayer::cli {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;
constexpr std::uint64_t kShuffleStream = 0x73687566ULL;

std::uint64_t derive(std::uint64_t master, std::uint64_t stream) { return splitmix64(master ^ splitmix64(stream)); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string fmt(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

}  // namespace

std::array<std::uint64_t, 3> split_seeds(std::uint64_t master) {
  return {derive(master, 1), derive(master, 2), derive(master, 3)};
}

Splits generate_splits(const RunConfig& cfg) {
  cfg.validate();
  const auto seeds = split_seeds(cfg.seed);
  const DataSizes& d = cfg.data;
  return Splits{generate(cfg.scene, d.train_images, d.height, d.width, seeds[0]),
                generate(cfg.scene, d.val_images, d.height, d.width, seeds[1]),
                generate(cfg.scene, d.test_images, d.height, d.width, seeds[2])};
}

Splits cmd_gen_data(const RunConfig& cfg) {
  Splits s = generate_splits(cfg);
  ensure_dir(cfg.data_dir);
  write_dataset(s.train, cfg.data_dir / "train.hctx");
  write_dataset(s.val, cfg.data_dir / "val.hctx");
  write_dataset(s.test, cfg.data_dir / "test.hctx");
  write_resolved_config(cfg, cfg.data_dir);
  return s;
}

Splits load_splits(const fs::path& dir) {
  return Splits{read_dataset(dir / "train.hctx"), read_dataset(dir / "val.hctx"), read_dataset(dir / "test.hctx")};
}

HistNetConfig model_config(const RunConfig& cfg, Mode mode) {
  HistNetConfig m = cfg.model;
  m.classes = cfg.scene.classes;
  m.in_channels = cfg.scene.channels;
  m.mode = mode;
  if (mode == Mode::kBaseOnly) m.stages = 1;
  return m;
}

TrainResult pretrain_base(const RunConfig& cfg, const ContextDataset& train, const ContextDataset& val) {
  HistNet net(model_config(cfg, Mode::kBaseOnly), derive(cfg.seed, kModelStream));
  TrainOptions opts;
  opts.eval = cfg.eval_options();
  TrainResult r;
  r.rows = train_phase(net, Phase::kBase, train, val, cfg.schedule.base_epochs, cfg.schedule.base_lr, cfg.schedule,
                       derive(cfg.seed, kShuffleStream), opts);
  r.base_checkpoint = net.save();
  r.val = evaluate(net, val, opts.eval);
  return r;
}

TrainResult train_context(const RunConfig& cfg, Mode mode, std::span<const std::uint8_t> base_checkpoint,
                          const ContextDataset& train, const ContextDataset& val) {
  if (mode == Mode::kBaseOnly) throw ArgumentError("train_context: base_only has no context stages");
  const auto base = decode_checkpoint(base_checkpoint);
  HistNet net(model_config(cfg, mode), derive(cfg.seed, kModelStream));
  net.load(base, true);
  TrainOptions opts;
  opts.eval = cfg.eval_options();
  const std::uint64_t shuffle = derive(cfg.seed, kShuffleStream);
  const Schedule& s = cfg.schedule;

  TrainResult r;
  r.base_checkpoint.assign(base_checkpoint.begin(), base_checkpoint.end());
  r.rows = train_phase(net, Phase::kContext, train, val, s.phase1_epochs, s.lr, s, shuffle, opts);
  r.phase1_checkpoint = net.save();
  r.stage1_before_joint = evaluate(net, val, cfg.eval_options(1));
  auto joint = train_phase(net, Phase::kJoint, train, val, s.phase2_epochs, s.lr, s, shuffle, opts);
  r.rows.insert(r.rows.end(), joint.begin(), joint.end());
  r.phase2_checkpoint = net.save();
  r.stage1_after_joint = evaluate(net, val, cfg.eval_options(1));
  r.val = evaluate(net, val, opts.eval);
  return r;
}

TrainResult cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const Splits s = load_splits(cfg.data_dir);
  TrainResult r;
  if (cfg.base_checkpoint.empty()) {
    r = pretrain_base(cfg, s.train, s.val);
  } else {
    r.base_checkpoint = read_file(cfg.base_checkpoint);
    decode_checkpoint(r.base_checkpoint);
  }
  ensure_dir(cfg.out_dir);
  write_file(cfg.out_dir / "base.hprm", r.base_checkpoint);
  if (cfg.model.mode != Mode::kBaseOnly) {
    TrainResult ctx = train_context(cfg, cfg.model.mode, r.base_checkpoint, s.train, s.val);
    ctx.rows.insert(ctx.rows.begin(), r.rows.begin(), r.rows.end());
    r = std::move(ctx);
    write_file(cfg.out_dir / "phase1.hprm", r.phase1_checkpoint);
    write_file(cfg.out_dir / "phase2.hprm", r.phase2_checkpoint);
  } else if (!cfg.base_checkpoint.empty()) {
    HistNet net = HistNet::from_checkpoint(decode_checkpoint(r.base_checkpoint));
    r.val = evaluate(net, s.val, cfg.eval_options());
  }
  write_text(cfg.out_dir / "log.csv", log_csv(r.rows));
  write_resolved_config(cfg, cfg.out_dir);
  return r;
}

Metrics cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const fs::path& out_dir, const RunConfig& cfg) {
  HistNet net = HistNet::from_checkpoint(load_checkpoint(checkpoint));
  const ContextDataset data = read_dataset(dataset);
  const HistNetConfig& m = net.config();
  if (m.in_channels != data.features.shape().c || m.classes != data.spec.classes) {
    throw ShapeError("checkpoint " + checkpoint.string() + " expects " + std::to_string(m.in_channels) +
                     " channels and " + std::to_string(m.classes) + " classes, but dataset " + dataset.string() +
                     " has " + std::to_string(data.features.shape().c) + " channels and " +
                     std::to_string(data.spec.classes) + " classes");
  }
  const Metrics metrics = evaluate(net, data, cfg.eval_options());
  ensure_dir(out_dir);
  write_text(out_dir / "metrics.csv", "per_pixel,per_class,loss\n" + fmt(metrics.per_pixel) + "," +
                                          fmt(metrics.per_class) + "," + fmt(metrics.loss) + "\n");
  std::string recall = "class,pixels,recall\n";
  for (std::size_t k = 0; k < m.classes; ++k) {
    recall += std::to_string(k) + "," + std::to_string(metrics.confusion.row_total(k)) + "," +
              (std::isnan(metrics.recall[k]) ? std::string("nan") : fmt(metrics.recall[k])) + "\n";
  }
  write_text(out_dir / "recall.csv", recall);
  std::string confusion = "truth";
  for (std::size_t k = 0; k < m.classes; ++k) confusion += ",pred_" + std::to_string(k);
  confusion += "\n";
  for (std::size_t t = 0; t < m.classes; ++t) {
    confusion += std::to_string(t);
    for (std::size_t p = 0; p < m.classes; ++p) confusion += "," + std::to_string(metrics.confusion.at(t, p));
    confusion += "\n";
  }
  write_text(out_dir / "confusion.csv", confusion);
  return metrics;
}

std::string inspect_histogram_csv(std::span<const Parameter> checkpoint) {
  HistNet net = HistNet::from_checkpoint(checkpoint);
  std::ostringstream os;
  os << "stage,class,bin,center,slope,effective_width,outside_support\n";
  bool any = false;
  for (std::size_t stage = 2; stage <= net.config().stages; ++stage) {
    const HistogramLayer* layer = net.histogram(stage);
    if (layer == nullptr) continue;
    if (stage > 2 && net.config().share_histogram) break;
    any = true;
    const HistogramParams p = layer->params();
    for (std::size_t k = 0; k < p.classes; ++k) {
      for (std::size_t b = 0; b < p.bins; ++b) {
        const double c = p.center(k, b);
        const double w = 1.0 / p.slope(k, b);
        const bool outside = c - w < -0.5 || c + w > 1.5;
        os << stage << ',' << k << ',' << b << ',' << fmt(c) << ',' << fmt(p.slope(k, b)) << ',' << fmt(w) << ','
           << (outside ? 1 : 0) << '\n';
      }
    }
  }
  if (!any) throw ArgumentError("checkpoint has no histogram parameters");
  return os.str();
}

double CompareResult::mean(Mode mode, double CompareRow::*field) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const CompareRow& r : rows) {
    if (r.mode != mode) continue;
    sum += r.*field;
    ++n;
  }
  return n == 0 ? std::nan("") : sum / static_cast<double>(n);
}

std::string CompareResult::csv() const {
  std::ostringstream os;
  os << "mode,seed,per_pixel,per_class,stage1_before_joint,stage1_after_joint\n";
  std::vector<Mode> modes;
  for (const CompareRow& r : rows) {
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);
    os << mode_name(r.mode) << ',' << r.seed << ',' << fmt(r.per_pixel) << ',' << fmt(r.per_class) << ','
       << fmt(r.stage1_before_joint) << ',' << fmt(r.stage1_after_joint) << '\n';
  }
  for (Mode m : modes) {
    os << mode_name(m) << ",mean," << fmt(mean(m, &CompareRow::per_pixel)) << ','
       << fmt(mean(m, &CompareRow::per_class)) << ',' << fmt(mean(m, &CompareRow::stage1_before_joint)) << ','
       << fmt(mean(m, &CompareRow::stage1_after_joint)) << '\n';
  }
  os << "local_bayes_ceiling,," << fmt(local_bayes_ceiling) << ",,,\n";
  os << "scene_aware_ceiling,," << fmt(scene_aware_ceiling) << ",,,\n";
  return os.str();
}

CompareResult cmd_compare(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  CompareResult result;
  result.local_bayes_ceiling = local_bayes_ceiling(cfg.scene, cfg.ceiling_samples, derive(cfg.seed, 4));
  result.scene_aware_ceiling = scene_aware_ceiling(cfg.scene, cfg.ceiling_samples, derive(cfg.seed, 5));
  for (std::uint64_t seed : cfg.compare_seeds) {
    RunConfig run = cfg;
    run.seed = seed;
    const Splits s = generate_splits(run);
    const TrainResult base = pretrain_base(run, s.train, s.val);
    for (Mode mode : cfg.compare_modes) {
      CompareRow row{mode, seed};
      if (mode == Mode::kBaseOnly) {
        row.per_pixel = base.val.per_pixel;
        row.per_class = base.val.per_class;
        row.stage1_before_joint = row.stage1_after_joint = base.val.per_pixel;
      } else {
        const TrainResult r = train_context(run, mode, base.base_checkpoint, s.train, s.val);
        row.per_pixel = r.val.per_pixel;
        row.per_class = r.val.per_class;
        row.stage1_before_joint = r.stage1_before_joint->per_pixel;
        row.stage1_after_joint = r.stage1_after_joint->per_pixel;
      }
      if (progress) {
        *progress << "seed " << seed << ' ' << mode_name(mode) << " per_pixel " << row.per_pixel << " per_class "
                  << row.per_class << '\n';
      }
      result.rows.push_back(row);
    }
  }
  ensure_dir(cfg.out_dir);
  write_text(cfg.out_dir / "compare.csv", result.csv());
  write_resolved_config(cfg, cfg.out_dir);
  return result;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
  ensure_dir(dir);
  write_text(dir / "resolved_config.txt", cfg.render());
}

}  // namespace histlayer::cli
