#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "experiment.hpp"
#include "histlayer/binary_io.hpp"
#include "histlayer/checkpoint.hpp"
#include "histlayer/error.hpp"
#include "histlayer/histogram.hpp"
#include "run_config.hpp"

using namespace histlayer;
using namespace histlayer::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("histlayer_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_config(const fs::path& dir) {
  RunConfig cfg = parse_config(R"(
    data.train_images = 120
    data.val_images = 40
    data.test_images = 40
    data.height = 8
    data.width = 8
    train.base_epochs = 3
    train.phase1_epochs = 3
    train.phase2_epochs = 2
    train.base_lr = 0.1
    train.lr = 0.1
  )");
  cfg.data_dir = dir / "data";
  cfg.out_dir = dir / "out";
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(RunConfig, CommentsBlankLinesAndOverrides) {
  const RunConfig cfg = parse_config("# header\n\nseed = 17  # trailing\nmodel.mode = fix_hist\ntrain.lr=0.05\n");
  EXPECT_EQ(cfg.seed, 17u);
  EXPECT_EQ(cfg.model.mode, Mode::kFixHist);
  EXPECT_EQ(cfg.schedule.lr, 0.05);
  EXPECT_EQ(cfg.data.train_images, 2000u);
  EXPECT_EQ(cfg.schedule.batch_size, 10u);
  EXPECT_EQ(cfg.schedule.lr_step, 20u);
  EXPECT_EQ(cfg.schedule.phase2_epochs, 30u);
}

TEST(RunConfig, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(parse_config("trian.lr = 0.1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = twelve\n"), ConfigError);
  EXPECT_THROW(parse_config("model.mode = histogram\n"), ConfigError);
  EXPECT_THROW(parse_config("just a line\n"), ConfigError);
  EXPECT_THROW(parse_config("scene.class_means = [1, 2\n"), ConfigError);
  RunConfig bad = parse_config("train.momentum = 1.0\n");
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(RunConfig, RenderParsesBackIdentically) {
  RunConfig cfg = parse_config("seed = 5\ncompare.modes = histnet, base_only\nscene.noise_sigma = 0.1\n");
  cfg.out_dir = "some/where";
  const RunConfig back = parse_config(cfg.render());
  EXPECT_EQ(back.render(), cfg.render());
  EXPECT_EQ(back.scene, cfg.scene);
  EXPECT_EQ(back.compare_modes, cfg.compare_modes);
  for (const std::string& key : config_keys()) EXPECT_NE(cfg.render().find(key + " = "), std::string::npos) << key;
}

TEST(GenData, WritesThreeDeterministicSplits) {
  const fs::path dir = scratch_dir("gen");
  RunConfig cfg = tiny_config(dir);
  const Splits s = cmd_gen_data(cfg);
  EXPECT_EQ(s.train.images(), 120u);
  EXPECT_EQ(s.val.images(), 40u);
  EXPECT_EQ(s.test.images(), 40u);
  const auto seeds = split_seeds(cfg.seed);
  EXPECT_NE(seeds[0], seeds[1]);
  EXPECT_NE(seeds[1], seeds[2]);
  EXPECT_NE(seeds[0], seeds[2]);
  EXPECT_TRUE(fs::exists(cfg.data_dir / "resolved_config.txt"));

  const auto first = read_file(cfg.data_dir / "train.hctx");
  cfg.data_dir = dir / "again";
  cmd_gen_data(cfg);
  EXPECT_EQ(read_file(cfg.data_dir / "train.hctx"), first);
  EXPECT_EQ(read_file(dir / "data" / "test.hctx"), read_file(cfg.data_dir / "test.hctx"));
}

TEST(GenData, SplitLabelDistributionsMatch) {
  RunConfig cfg;
  cfg.data.train_images = 400;
  cfg.data.val_images = 200;
  cfg.data.test_images = 200;
  const Splits s = generate_splits(cfg);
  auto counts = [](const ContextDataset& d) {
    std::vector<double> c(d.spec.classes, 0.0);
    for (std::uint8_t l : d.labels) c[l] += 1;
    return c;
  };
  const auto train = counts(s.train);
  for (const ContextDataset* other : {&s.val, &s.test}) {
    const auto o = counts(*other);
    const double nt = static_cast<double>(s.train.labels.size());
    const double no = static_cast<double>(other->labels.size());
    double chi2 = 0.0;
    for (std::size_t k = 0; k < train.size(); ++k) {
      const double total = train[k] + o[k];
      const double et = total * nt / (nt + no);
      const double eo = total * no / (nt + no);
      chi2 += (train[k] - et) * (train[k] - et) / et + (o[k] - eo) * (o[k] - eo) / eo;
    }
    // Pixels within an image share a scene, so the test is run on a loose
    // critical value: chi-square(5) at 1e-6 is 35.9.
    EXPECT_LT(chi2 / 256.0, 35.9);
  }
}

TEST(Train, MissingDatasetIsAnIoError) {
  const fs::path dir = scratch_dir("missing");
  RunConfig cfg = tiny_config(dir);
  EXPECT_THROW(cmd_train(cfg), IoError);
}

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch_dir("train");
    cfg_ = tiny_config(dir_);
    cmd_gen_data(cfg_);
    result_ = cmd_train(cfg_);
  }
  static inline fs::path dir_;
  static inline RunConfig cfg_;
  static inline TrainResult result_;
};

TEST_F(TrainedRun, WritesCheckpointsLogAndConfig) {
  for (const char* f : {"base.hprm", "phase1.hprm", "phase2.hprm", "log.csv", "resolved_config.txt"}) {
    EXPECT_TRUE(fs::exists(cfg_.out_dir / f)) << f;
  }
  const auto log = lines(slurp(cfg_.out_dir / "log.csv"));
  EXPECT_EQ(log.front(), "phase,epoch,split,loss,per_pixel,per_class");
  // (base 3 + phase1 3 + phase2 2 epochs) x (train, val)
  EXPECT_EQ(log.size() - 1, (3u + 3u + 2u) * 2u);
  EXPECT_EQ(parse_config(slurp(cfg_.out_dir / "resolved_config.txt")).render(), cfg_.render());
}

TEST_F(TrainedRun, EvalReproducesFinalLogRow) {
  const Metrics m = cmd_eval(cfg_.out_dir / "phase2.hprm", cfg_.data_dir / "val.hctx", dir_ / "eval", cfg_);
  const LogRow& last = result_.rows.back();
  EXPECT_EQ(last.split, "val");
  EXPECT_EQ(m.per_pixel, last.per_pixel);
  EXPECT_EQ(m.per_class, last.per_class);
  EXPECT_EQ(m.loss, last.loss);
  const ContextDataset val = read_dataset(cfg_.data_dir / "val.hctx");
  for (std::size_t k = 0; k < val.spec.classes; ++k) {
    std::uint64_t pixels = 0;
    for (std::uint8_t l : val.labels) pixels += l == k;
    EXPECT_EQ(m.confusion.row_total(k), pixels);
  }
  const auto confusion = lines(slurp(dir_ / "eval" / "confusion.csv"));
  EXPECT_EQ(confusion.size(), val.spec.classes + 1);
  EXPECT_EQ(lines(slurp(dir_ / "eval" / "recall.csv")).size(), val.spec.classes + 1);
}

TEST_F(TrainedRun, RerunIsBitIdentical) {
  RunConfig again = cfg_;
  again.out_dir = dir_ / "out2";
  cmd_train(again);
  for (const char* f : {"base.hprm", "phase1.hprm", "phase2.hprm", "log.csv"}) {
    EXPECT_EQ(read_file(cfg_.out_dir / f), read_file(again.out_dir / f)) << f;
  }
  cmd_eval(again.out_dir / "phase2.hprm", again.data_dir / "val.hctx", dir_ / "eval2", again);
  cmd_eval(cfg_.out_dir / "phase2.hprm", cfg_.data_dir / "val.hctx", dir_ / "eval1", cfg_);
  for (const char* f : {"metrics.csv", "recall.csv", "confusion.csv"}) {
    EXPECT_EQ(slurp(dir_ / "eval1" / f), slurp(dir_ / "eval2" / f)) << f;
  }
}

TEST_F(TrainedRun, InspectShowsLearnedHistogram) {
  const std::string csv = inspect_histogram_csv(load_checkpoint(cfg_.out_dir / "phase2.hprm"));
  const auto rows = lines(csv);
  EXPECT_EQ(rows.front(), "stage,class,bin,center,slope,effective_width,outside_support");
  EXPECT_EQ(rows.size(), 1u + 6u * 6u);
  const HistogramParams init = init_histogram_params(6, 6);
  const HistNet net = HistNet::from_checkpoint(load_checkpoint(cfg_.out_dir / "phase2.hprm"));
  EXPECT_NE(net.histogram()->params().centers, init.centers);
  EXPECT_THROW(inspect_histogram_csv(load_checkpoint(cfg_.out_dir / "base.hprm")), ArgumentError);
}

TEST_F(TrainedRun, ShapeMismatchNamesCheckpointAndDataset) {
  RunConfig other = cfg_;
  other.set("scene.class_means", "[[1.5,0],[0,1.5],[0,0],[1.5,1.5],[-1.5,0],[-1.5,0]]");
  other.data_dir = dir_ / "narrow";
  cmd_gen_data(other);
  try {
    cmd_eval(cfg_.out_dir / "phase2.hprm", other.data_dir / "val.hctx", dir_ / "bad", cfg_);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("phase2.hprm"), std::string::npos);
    EXPECT_NE(msg.find("val.hctx"), std::string::npos);
  }
}

TEST(Inspect, FreshAndFixedHistogramsSitAtInit) {
  HistNetConfig c;
  c.mode = Mode::kFixHist;
  HistNet net(c, 1);
  const auto csv = lines(inspect_histogram_csv(decode_checkpoint(net.save())));
  EXPECT_EQ(csv[1], "2,0,0,0,5,0.20000000000000001,0");
  EXPECT_EQ(csv[6], "2,0,5,1,5,0.20000000000000001,0");
  HistNet back = HistNet::from_checkpoint(decode_checkpoint(net.save()));
  EXPECT_EQ(back.config().mode, Mode::kFixHist);
}

TEST(Inspect, FlagsSupportOutsideRange) {
  HistNet net(HistNetConfig{}, 1);
  HistogramParams p = net.histogram()->params();
  p.centers[0] = -0.4;
  net.histogram()->set_params(p);
  const auto csv = lines(inspect_histogram_csv(decode_checkpoint(net.save())));
  EXPECT_EQ(csv[1].back(), '1');
  EXPECT_EQ(csv[2].back(), '0');
}

TEST(FixHistTraining, HistogramStaysAtInit) {
  const fs::path dir = scratch_dir("fixhist");
  RunConfig cfg = tiny_config(dir);
  cfg.model.mode = Mode::kFixHist;
  cfg.schedule.phase1_epochs = 1;
  cfg.schedule.phase2_epochs = 1;
  cmd_gen_data(cfg);
  cmd_train(cfg);
  const HistNet net = HistNet::from_checkpoint(load_checkpoint(cfg.out_dir / "phase2.hprm"));
  const HistogramParams init = init_histogram_params(6, 6);
  EXPECT_EQ(net.histogram()->params().centers, init.centers);
  EXPECT_EQ(net.histogram()->params().slopes, init.slopes);
}

TEST(Context, HistNetResolvesTheAmbiguousPairThatBaseCannot) {
  RunConfig cfg = tiny_config(scratch_dir("flip"));
  cfg.data.train_images = 400;
  cfg.data.val_images = 100;
  cfg.data.height = 16;
  cfg.data.width = 16;
  cfg.schedule.base_epochs = 4;
  cfg.schedule.phase1_epochs = 10;
  cfg.schedule.phase2_epochs = 1;
  const Splits s = generate_splits(cfg);
  const TrainResult base = pretrain_base(cfg, s.train, s.val);
  const TrainResult hist = train_context(cfg, Mode::kHistNet, base.base_checkpoint, s.train, s.val);

  // Base errors sit almost entirely inside the ambiguous pair.
  const ConfusionMatrix& bc = base.val.confusion;
  std::uint64_t errors = 0, pair_errors = 0;
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t p = 0; p < 6; ++p) {
      if (t == p) continue;
      errors += bc.at(t, p);
      if (t >= 4 && p >= 4) pair_errors += bc.at(t, p);
    }
  }
  EXPECT_GT(static_cast<double>(pair_errors), 0.8 * static_cast<double>(errors));
  EXPECT_LT(std::min(base.val.recall[4], base.val.recall[5]), 0.6);
  EXPECT_GT(hist.val.recall[4], 0.9);
  EXPECT_GT(hist.val.recall[5], 0.9);
}

#ifdef HISTLAYER_CLI_PATH
TEST(CliBinary, ExitCodes) {
  const fs::path dir = scratch_dir("exit");
  const std::string cli = HISTLAYER_CLI_PATH;
  auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " > " + (dir / "out.txt").string() + " 2>&1").c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("--set bogus=1 gen-data"), 2);
  EXPECT_EQ(run("eval --checkpoint " + (dir / "none.hprm").string() + " --dataset x.hctx"), 3);
  EXPECT_EQ(run("--out " + dir.string() + " --set data.train_images=4 --set data.val_images=2 "
                "--set data.test_images=2 --data " + (dir / "d").string() + " gen-data"),
            0);
  EXPECT_EQ(run("gradcheck --trials 3 --corrupt-op histogram"), 4);
  EXPECT_NE(slurp(dir / "out.txt").find("histogram"), std::string::npos);
  EXPECT_EQ(run("gradcheck --trials 3"), 0);
  EXPECT_NE(slurp(dir / "out.txt").find("\"skipped\""), std::string::npos);
}
#endif
