#include <CLI11.hpp>
#include <iostream>

#include "experiment.hpp"
#include "histlayer/checkpoint.hpp"
#include "histlayer/error.hpp"
#include "histlayer/verification.hpp"
#include "run_config.hpp"

namespace {

using namespace histlayer;
using namespace histlayer::cli;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kVerification = 4 };

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out;
  std::string data;
  std::vector<std::string> set;
};

RunConfig resolve(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  for (const std::string& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (!f.mode.empty()) cfg.model.mode = parse_mode(f.mode);
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (!f.data.empty()) cfg.data_dir = f.data;
  cfg.validate();
  return cfg;
}

int print_reports(const std::vector<PropertyReport>& reports) {
  bool ok = true;
  for (const PropertyReport& r : reports) {
    std::cout << r.json_line() << '\n';
    ok = ok && r.passed;
  }
  for (const PropertyReport& r : reports) {
    if (!r.passed) std::cerr << "FAILED " << r.name << " (seed " << r.seed << "): " << r.detail << '\n';
  }
  return ok ? kOk : kVerification;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learnable histogram layer experiments"};
  app.require_subcommand(1);
  Flags flags;
  app.add_option("--config", flags.config, "Keyed configuration file");
  app.add_option("--seed", flags.seed, "Master seed");
  app.add_option("--mode", flags.mode, "histnet, fix_hist, free_all, score_global, feat_global or base_only");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--data", flags.data, "Dataset directory");
  app.add_option("--set", flags.set, "Extra key=value config overrides");

  auto* gen = app.add_subcommand("gen-data", "Generate train/val/test splits");
  auto* train = app.add_subcommand("train", "Pretrain the base, then run both context phases");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
  std::string checkpoint;
  std::string dataset;
  eval->add_option("--checkpoint", checkpoint, "HPRM checkpoint")->required();
  eval->add_option("--dataset", dataset, "HCTX dataset")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of every op and the full graph");
  std::size_t trials = 100;
  std::string corrupt_op;
  double corrupt_factor = 1.5;
  gradcheck->add_option("--trials", trials, "Random instances per op");
  gradcheck->add_option("--corrupt-op", corrupt_op, "Scale this op's backward (harness self-test)");
  gradcheck->add_option("--corrupt-factor", corrupt_factor, "Scale factor for --corrupt-op");

  auto* inspect = app.add_subcommand("inspect-histogram", "Print learned bin centers and slopes as CSV");
  inspect->add_option("--checkpoint", checkpoint, "HPRM checkpoint")->required();

  auto* compare = app.add_subcommand("compare", "Train every mode over several seeds and tabulate");
  auto* verify = app.add_subcommand("verify", "Run the full property suite");

  for (auto* sub : {gen, train, eval, gradcheck, inspect, compare, verify}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    const RunConfig cfg = resolve(flags);
    if (gen->parsed()) {
      const Splits s = cmd_gen_data(cfg);
      std::cout << "wrote " << s.train.images() << '/' << s.val.images() << '/' << s.test.images()
                << " images to " << cfg.data_dir.string() << '\n';
    } else if (train->parsed()) {
      const TrainResult r = cmd_train(cfg);
      std::cout << "val per_pixel " << r.val.per_pixel << " per_class " << r.val.per_class << '\n';
      if (r.stage1_before_joint) {
        std::cout << "stage1 per_pixel before joint " << r.stage1_before_joint->per_pixel << " after "
                  << r.stage1_after_joint->per_pixel << '\n';
      }
    } else if (eval->parsed()) {
      const Metrics m = cmd_eval(checkpoint, dataset, cfg.out_dir, cfg);
      std::cout << "per_pixel " << m.per_pixel << " per_class " << m.per_class << " loss " << m.loss << '\n';
      for (std::size_t k = 0; k < m.recall.size(); ++k) std::cout << "recall[" << k << "] " << m.recall[k] << '\n';
    } else if (gradcheck->parsed()) {
      SuiteOptions opts;
      opts.seed = cfg.seed;
      opts.gradient_trials = trials;
      opts.gradcheck.corrupt_op = corrupt_op;
      opts.gradcheck.corrupt_factor = corrupt_factor;
      return print_reports(run_gradient_checks(opts));
    } else if (inspect->parsed()) {
      std::cout << inspect_histogram_csv(load_checkpoint(checkpoint));
    } else if (compare->parsed()) {
      const CompareResult r = cmd_compare(cfg, &std::cerr);
      std::cout << r.csv();
    } else if (verify->parsed()) {
      SuiteOptions opts;
      opts.seed = cfg.seed;
      return print_reports(run_all(opts));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
