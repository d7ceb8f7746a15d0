// Runs every acceptance criterion and prints one PASS/FAIL line for each.
// Usage: histlayer_acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>

#include "experiment.hpp"
#include "histlayer/binary_io.hpp"
#include "histlayer/checkpoint.hpp"
#include "histlayer/gradcheck.hpp"
#include "histlayer/histogram.hpp"
#include "histlayer/rng.hpp"
#include "histlayer/tolerances.hpp"
#include "histlayer/verification.hpp"

using namespace histlayer;
using namespace histlayer::cli;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20160903;
constexpr std::size_t kGradInstances = 100;
constexpr double kGradSeconds = 30.0;
constexpr std::size_t kStructuralInstances = 1000;
constexpr double kEquivalenceSeconds = 60.0;
constexpr double kCeilingBand = 0.03;
constexpr double kContextGain = 0.05;
constexpr double kExperimentSeconds = 15.0 * 60.0;
constexpr double kStage1Slack = 0.01;
constexpr std::size_t kCeilingSamples = 400000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail
            << std::endl;
  if (!o.pass) ++failures;
}

std::string num(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

// Central differences on centers, slopes and inputs of the direct form,
// compared against hist_backward_direct.
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  const double eps = tol::kFiniteDiffEps;
  for (std::size_t trial = 0; trial < kGradInstances; ++trial) {
    Rng rng(splitmix64(kSeed ^ trial));
    const std::size_t K = 1 + rng.index(3);
    const std::size_t B = 2 + rng.index(5);
    const bool vec = trial % 4 == 0;
    HistogramParams p = init_histogram_params(K, B);
    for (double& c : p.centers) c += rng.uniform(-0.1, 0.1);
    for (double& s : p.slopes) s = rng.uniform(1.0, 8.0);
    Tensor x(Shape{2, K, vec ? 1u : 3u, vec ? 1u : 3u});
    for (double& v : x.values()) v = rng.uniform();
    Tensor proj(Shape{2, K * B, 1, 1});
    for (double& v : proj.values()) v = rng.uniform(-1, 1);

    auto objective = [&] {
      const Tensor out = hist_forward_direct(x, p);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * proj[i];
      return s;
    };
    auto near_kink = [&] {
      for (std::size_t n = 0; n < x.shape().n; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
          for (double v : x.plane(n, k)) {
            for (std::size_t b = 0; b < B; ++b) {
              const double d = std::abs(v - p.center(k, b));
              if (d < tol::kKinkMargin || std::abs(1.0 - p.slope(k, b) * d) < tol::kKinkMargin) return true;
            }
          }
        }
      }
      return false;
    };
    const HistogramGrads g = hist_backward_direct(x, p, proj);
    auto probe = [&](double& slot, double analytic) {
      const double keep = slot;
      slot = keep + eps;
      const bool kink_plus = near_kink();
      const double fp = objective();
      slot = keep - eps;
      const bool kink_minus = near_kink();
      const double fm = objective();
      slot = keep;
      if (kink_plus || kink_minus || near_kink()) {
        ++skipped;
        return;
      }
      worst = std::max(worst, relative_error(analytic, (fp - fm) / (2 * eps), 1e-6));
      ++checked;
    };
    for (std::size_t j = 0; j < K * B; ++j) probe(p.centers[j], g.centers[j]);
    for (std::size_t j = 0; j < K * B; ++j) probe(p.slopes[j], g.slopes[j]);
    for (std::size_t i = 0; i < x.size(); ++i) probe(x[i], g.input[i]);
  }
  const double secs = seconds_since(t0);
  return {worst < tol::kFiniteDiff && secs < kGradSeconds && checked > 0,
          "max rel error " + num(worst) + " < " + num(tol::kFiniteDiff) + " over " + std::to_string(kGradInstances) +
              " instances (" + std::to_string(checked) + " coordinates, " + std::to_string(skipped) +
              " kink-adjacent skipped), " + num(secs, 3) + " s < " + num(kGradSeconds) + " s"};
}

Outcome from_property(const PropertyReport& r, double seconds = -1.0, double limit = 0.0) {
  Outcome o;
  o.pass = r.passed && (seconds < 0.0 || seconds < limit);
  o.detail = r.name + " max error " + num(r.max_error) + " over " + std::to_string(r.trials) + " trials";
  if (seconds >= 0.0) o.detail += ", " + num(seconds, 3) + " s < " + num(limit) + " s";
  if (!r.detail.empty()) o.detail += " (" + r.detail + ")";
  return o;
}

Outcome both(const Outcome& a, const Outcome& b) { return {a.pass && b.pass, a.detail + "; " + b.detail}; }

Outcome determinism_and_formats(const fs::path& work) {
  RunConfig cfg = parse_config(R"(
    data.train_images = 60
    data.val_images = 20
    data.test_images = 20
    data.height = 8
    data.width = 8
    train.base_epochs = 2
    train.phase1_epochs = 2
    train.phase2_epochs = 2
  )");
  std::vector<std::string> problems;
  auto run = [&](const std::string& tag) {
    RunConfig c = cfg;
    c.data_dir = work / ("det_" + tag) / "data";
    c.out_dir = work / ("det_" + tag) / "out";
    cmd_gen_data(c);
    cmd_train(c);
    cmd_eval(c.out_dir / "phase2.hprm", c.data_dir / "val.hctx", c.out_dir / "eval", c);
    return c;
  };
  const RunConfig a = run("a");
  const RunConfig b = run("b");
  for (const char* f : {"train.hctx", "val.hctx", "test.hctx"}) {
    if (read_file(a.data_dir / f) != read_file(b.data_dir / f)) problems.push_back(f);
  }
  for (const char* f : {"base.hprm", "phase1.hprm", "phase2.hprm", "log.csv"}) {
    if (read_file(a.out_dir / f) != read_file(b.out_dir / f)) problems.push_back(f);
  }
  for (const char* f : {"metrics.csv", "recall.csv", "confusion.csv"}) {
    if (read_file(a.out_dir / "eval" / f) != read_file(b.out_dir / "eval" / f)) problems.push_back(f);
  }
  const auto hctx = read_file(a.data_dir / "train.hctx");
  if (encode_dataset(decode_dataset(hctx)) != hctx) problems.push_back("HCTX round trip");
  const auto hprm = read_file(a.out_dir / "phase2.hprm");
  const auto params = decode_checkpoint(hprm);
  std::vector<const Parameter*> ptrs;
  for (const Parameter& p : params) ptrs.push_back(&p);
  if (encode_checkpoint(ptrs) != hprm) problems.push_back("HPRM round trip");
  const PropertyReport suite = check_dataset_determinism(kSeed);
  if (!suite.passed) problems.push_back("in-memory generation");

  std::string detail = "datasets, checkpoints, logs and metric CSVs bit-identical across reruns; HCTX and HPRM "
                       "round trips bit-exact";
  if (!problems.empty()) {
    detail = "mismatch in";
    for (const auto& p : problems) detail += " " + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "histlayer_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  report(1, "gradient correctness", gradient_correctness());

  auto t0 = Clock::now();
  const PropertyReport eq = check_histogram_equivalence(kSeed, kStructuralInstances);
  report(2, "structural equivalence", from_property(eq, seconds_since(t0), kEquivalenceSeconds));

  report(3, "oracle agreement", from_property(check_oracle_agreement(kSeed, kStructuralInstances)));

  report(4, "initialization fidelity",
         both(from_property(check_initialization()), from_property(check_partition_of_unity())));

  report(5, "lock semantics",
         both(from_property(check_lock_immutability(kSeed, false)),
              from_property(check_lock_immutability(kSeed, true))));

  RunConfig cfg;
  cfg.out_dir = work / "compare";
  cfg.compare_modes = {Mode::kBaseOnly, Mode::kScoreGlobal, Mode::kHistNet};
  cfg.compare_seeds = {1, 2, 3};
  cfg.ceiling_samples = kCeilingSamples;
  t0 = Clock::now();
  const CompareResult cmp = cmd_compare(cfg, &std::cerr);
  const double experiment_secs = seconds_since(t0);
  const double ceiling = cmp.local_bayes_ceiling;

  Outcome gain{experiment_secs < kExperimentSeconds, ""};
  gain.detail = "local-Bayes ceiling " + num(ceiling) + " (occupancy " + num(cfg.scene.ambiguous_occupancy()) +
                ", 1 - p/2 = " + num(1 - cfg.scene.ambiguous_occupancy() / 2) + ")";
  for (const CompareRow& r : cmp.rows) {
    if (r.mode == Mode::kBaseOnly) {
      const bool ok = std::abs(r.per_pixel - ceiling) <= kCeilingBand;
      gain.pass = gain.pass && ok;
      gain.detail += "; seed " + std::to_string(r.seed) + " base_only " + num(r.per_pixel) + (ok ? "" : " [out of band]");
    } else if (r.mode == Mode::kHistNet) {
      const bool ok = r.per_pixel - ceiling >= kContextGain;
      gain.pass = gain.pass && ok;
      gain.detail += "; seed " + std::to_string(r.seed) + " histnet " + num(r.per_pixel) + " (+" +
                     num(r.per_pixel - ceiling, 3) + ")" + (ok ? "" : " [gain too small]");
    }
  }
  gain.detail += "; " + num(experiment_secs, 4) + " s < " + num(kExperimentSeconds) + " s";
  report(6, "context gain", gain);

  Outcome joint{fs::exists(cfg.out_dir / "compare.csv"), ""};
  for (const CompareRow& r : cmp.rows) {
    if (r.mode != Mode::kHistNet) continue;
    const bool ok = r.stage1_after_joint >= r.stage1_before_joint - kStage1Slack;
    joint.pass = joint.pass && ok;
    joint.detail += "seed " + std::to_string(r.seed) + " stage-1 " + num(r.stage1_before_joint) + " -> " +
                    num(r.stage1_after_joint) + (ok ? "" : " [degraded]") + "; ";
  }
  const double h = cmp.mean(Mode::kHistNet, &CompareRow::per_pixel);
  const double sg = cmp.mean(Mode::kScoreGlobal, &CompareRow::per_pixel);
  const double bo = cmp.mean(Mode::kBaseOnly, &CompareRow::per_pixel);
  const bool ordered = h - sg >= 0.0 && sg - bo >= 0.0;
  joint.pass = joint.pass && ordered;
  joint.detail += "means histnet " + num(h, 8) + " >= score_global " + num(sg, 8) + " >= base_only " + num(bo, 8) +
                  (ordered ? "" : " [order violated]") + "; table " + (cfg.out_dir / "compare.csv").string();
  report(7, "joint finetuning effect", joint);

  report(8, "determinism and formats", determinism_and_formats(work));

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
