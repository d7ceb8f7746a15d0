#include "histlayer/verification.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>

#include "histlayer/histogram.hpp"
#include "histlayer/metrics.hpp"
#include "histlayer/network.hpp"
#include "histlayer/ops.hpp"
#include "histlayer/optim.hpp"
#include "histlayer/reference_histogram.hpp"
#include "histlayer/rng.hpp"
#include "histlayer/synthetic.hpp"
#include "histlayer/tolerances.hpp"

namespace histlayer {
namespace {

constexpr std::size_t kSkippedExamples = 5;

std::uint64_t name_seed(std::uint64_t seed, std::string_view name, std::size_t trial) {
  std::uint64_t h = seed;
  for (char ch : name) h = splitmix64(h ^ static_cast<std::uint8_t>(ch));
  return splitmix64(h ^ trial);
}

Tensor random_tensor(Rng& rng, Shape s, double lo, double hi) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Parameter random_param(Rng& rng, std::string name, Shape s) {
  return Parameter(std::move(name), random_tensor(rng, s, -1.0, 1.0));
}

HistogramParams random_hist_params(Rng& rng, std::size_t classes, std::size_t bins) {
  HistogramParams p = init_histogram_params(classes, bins);
  for (double& c : p.centers) c += rng.uniform(-0.08, 0.08);
  for (double& s : p.slopes) s = rng.uniform(1.5, 7.0);
  return p;
}

// Accumulates grad_check reports over trials into one property.
struct GradAccumulator {
  PropertyReport report;

  GradAccumulator(std::string name, std::uint64_t seed, double tolerance) {
    report.name = std::move(name);
    report.seed = seed;
    report.tolerance = tolerance;
  }

  void add(const GradCheckReport& r) {
    ++report.trials;
    report.skipped += r.skipped.size();
    for (const Coordinate& c : r.skipped) {
      if (report.skipped_examples.size() < kSkippedExamples) report.skipped_examples.push_back(c);
    }
    if (!(r.max_rel_error <= report.max_error)) {
      report.max_error = r.max_rel_error;
      report.detail = "worst " + r.worst.target + "[" + std::to_string(r.worst.index) + "]";
    }
    report.passed = report.passed && r.passed;
  }
};

using Instance = std::function<GradCheckReport(Rng&, const GradCheckOptions&)>;

PropertyReport fd_property(const std::string& name, const Instance& instance, std::size_t trials,
                           const SuiteOptions& opts) {
  GradAccumulator acc("fd_" + name, opts.seed, opts.gradcheck.tolerance);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(name_seed(opts.seed, name, t));
    acc.add(instance(rng, opts.gradcheck));
  }
  return acc.report;
}

GradCheckReport fd_conv1x1(Rng& rng, const GradCheckOptions& o) {
  Tensor x = random_tensor(rng, {2, 3, 2, 2}, -1, 1);
  Parameter w = random_param(rng, "w", {4, 3, 1, 1});
  Parameter b = random_param(rng, "b", {4, 1, 1, 1});
  Tensor proj = random_tensor(rng, {2, 4, 2, 2}, -1, 1);
  Parameter* ps[] = {&w, &b};
  InputSlot in[] = {{"x", &x}};
  return grad_check([&](Graph& g) { return dot(g, conv1x1(g, g.input(x, "x"), w, b), proj); }, ps, in, o);
}

GradCheckReport fd_fully_connected(Rng& rng, const GradCheckOptions& o) {
  Tensor x = random_tensor(rng, {3, 5, 1, 1}, -1, 1);
  Parameter w = random_param(rng, "w", {4, 5, 1, 1});
  Parameter b = random_param(rng, "b", {4, 1, 1, 1});
  Tensor proj = random_tensor(rng, {3, 4, 1, 1}, -1, 1);
  Parameter* ps[] = {&w, &b};
  InputSlot in[] = {{"x", &x}};
  return grad_check([&](Graph& g) { return dot(g, fully_connected(g, g.input(x, "x"), w, b), proj); }, ps, in, o);
}

GradCheckReport fd_unary(Rng& rng, const GradCheckOptions& o, Var (*op)(Graph&, Var)) {
  Tensor x = random_tensor(rng, {2, 3, 2, 2}, -1, 1);
  Tensor proj = random_tensor(rng, {2, 3, 2, 2}, -1, 1);
  InputSlot in[] = {{"x", &x}};
  return grad_check([&](Graph& g) { return dot(g, op(g, g.input(x, "x")), proj); }, {}, in, o);
}

GradCheckReport fd_global_avg_pool(Rng& rng, const GradCheckOptions& o) {
  Tensor x = random_tensor(rng, {2, 3, 3, 2}, -1, 1);
  Tensor proj = random_tensor(rng, {2, 3, 1, 1}, -1, 1);
  InputSlot in[] = {{"x", &x}};
  return grad_check([&](Graph& g) { return dot(g, global_avg_pool(g, g.input(x, "x")), proj); }, {}, in, o);
}

GradCheckReport fd_broadcast_concat(Rng& rng, const GradCheckOptions& o) {
  Tensor f = random_tensor(rng, {2, 3, 2, 2}, -1, 1);
  Tensor c = random_tensor(rng, {2, 2, 1, 1}, -1, 1);
  Tensor proj = random_tensor(rng, {2, 5, 2, 2}, -1, 1);
  InputSlot in[] = {{"f", &f}, {"c", &c}};
  return grad_check(
      [&](Graph& g) { return dot(g, broadcast_concat(g, g.input(f, "f"), g.input(c, "c")), proj); }, {}, in, o);
}

GradCheckReport fd_softmax_xent(Rng& rng, const GradCheckOptions& o) {
  Tensor z = random_tensor(rng, {1, 3, 2, 2}, -2, 2);
  std::vector<std::uint8_t> labels(4);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.index(3));
  Tensor proj = random_tensor(rng, {1, 3, 2, 2}, -1, 1);
  InputSlot in[] = {{"z", &z}};
  return grad_check(
      [&](Graph& g) {
        SoftmaxXent sx = softmax_xent(g, g.input(z, "z"), labels);
        const Var parts[] = {sx.loss, dot(g, sx.probs, proj)};
        return average(g, parts);
      },
      {}, in, o);
}

GradCheckReport fd_average(Rng& rng, const GradCheckOptions& o) {
  Tensor a = random_tensor(rng, {2, 2, 2, 1}, -1, 1);
  Tensor b = random_tensor(rng, {2, 2, 2, 1}, -1, 1);
  Tensor proj = random_tensor(rng, {2, 2, 2, 1}, -1, 1);
  InputSlot in[] = {{"a", &a}, {"b", &b}};
  return grad_check(
      [&](Graph& g) {
        const Var xs[] = {g.input(a, "a"), g.input(b, "b")};
        return dot(g, average(g, xs), proj);
      },
      {}, in, o);
}

GradCheckReport fd_histogram(Rng& rng, const GradCheckOptions& o, bool composed) {
  const std::size_t K = 1 + rng.index(3);
  const std::size_t B = 2 + rng.index(4);
  const bool vector_input = rng.uniform() < 0.25;
  const Shape s{2, K, vector_input ? 1u : 2u, vector_input ? 1u : 3u};
  HistogramLayer layer("hist", random_hist_params(rng, K, B));
  Tensor x = random_tensor(rng, s, 0.0, 1.0);
  Tensor proj = random_tensor(rng, {2, K * B, 1, 1}, -1, 1);
  InputSlot in[] = {{"x", &x}};
  std::vector<Parameter*> ps = {&layer.conv1_bias, &layer.conv2_weight};
  if (composed) ps = {&layer.conv1_weight, &layer.conv1_bias, &layer.conv2_weight, &layer.conv2_bias};
  return grad_check(
      [&](Graph& g) {
        Var input = g.input(x, "x");
        return dot(g, composed ? layer.forward_composed(g, input) : layer.forward_direct(g, input), proj);
      },
      ps, in, o);
}

GradCheckReport fd_histnet(Rng& rng, const GradCheckOptions& o) {
  HistNetConfig cfg;
  cfg.classes = 3;
  cfg.bins = 4;
  cfg.in_channels = 4;
  cfg.feat_channels = 5;
  cfg.stages = 3;
  HistNet net(cfg, rng.bits());
  // Larger context weights than the 0.01 init so every path carries signal.
  for (Parameter* p : net.context_parameters()) {
    for (double& v : p->value.values()) v = rng.uniform(-0.5, 0.5);
  }
  net.histogram()->set_params(random_hist_params(rng, cfg.classes, cfg.bins));
  Tensor x = random_tensor(rng, {2, 4, 3, 3}, -1, 1);
  std::vector<std::uint8_t> labels(2 * 9);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.index(cfg.classes));
  const auto params = net.parameters();
  return grad_check([&](Graph& g) { return *net.forward(g, x, labels).loss; }, params, {}, o);
}

PropertyReport make_report(std::string name, std::size_t trials, double tolerance) {
  PropertyReport r;
  r.name = std::move(name);
  r.trials = trials;
  r.tolerance = tolerance;
  return r;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

std::string PropertyReport::json_line() const {
  nlohmann::json j;
  j["property"] = name;
  j["trials"] = trials;
  j["max_error"] = max_error;
  j["tolerance"] = tolerance;
  j["skipped"] = skipped;
  auto examples = nlohmann::json::array();
  for (const Coordinate& c : skipped_examples) examples.push_back({{"target", c.target}, {"index", c.index}});
  j["skipped_examples"] = examples;
  j["passed"] = passed;
  j["expected_fail"] = expected_fail;
  j["seed"] = seed;
  if (!detail.empty()) j["detail"] = detail;
  return j.dump();
}

std::vector<PropertyReport> run_gradient_checks(const SuiteOptions& opts) {
  const std::size_t n = opts.gradient_trials;
  const std::size_t few = std::max<std::size_t>(1, n / 20);
  std::vector<PropertyReport> out;
  out.push_back(fd_property("conv1x1", fd_conv1x1, n, opts));
  out.push_back(fd_property("fully_connected", fd_fully_connected, n, opts));
  out.push_back(fd_property("abs_elem", [](Rng& r, const GradCheckOptions& o) { return fd_unary(r, o, abs_elem); },
                            n, opts));
  out.push_back(fd_property("relu", [](Rng& r, const GradCheckOptions& o) { return fd_unary(r, o, relu); }, n, opts));
  out.push_back(fd_property("softmax", [](Rng& r, const GradCheckOptions& o) { return fd_unary(r, o, softmax); }, n,
                            opts));
  out.push_back(fd_property("global_avg_pool", fd_global_avg_pool, n, opts));
  out.push_back(fd_property("broadcast_concat", fd_broadcast_concat, n, opts));
  out.push_back(fd_property("softmax_xent", fd_softmax_xent, n, opts));
  out.push_back(fd_property("average", fd_average, n, opts));
  out.push_back(fd_property(
      "histogram_direct", [](Rng& r, const GradCheckOptions& o) { return fd_histogram(r, o, false); }, n, opts));
  out.push_back(fd_property(
      "histogram_composed", [](Rng& r, const GradCheckOptions& o) { return fd_histogram(r, o, true); }, n, opts));
  out.push_back(fd_property("histnet_graph", fd_histnet, few, opts));
  return out;
}

PropertyReport check_histogram_equivalence(std::uint64_t seed, std::size_t trials) {
  PropertyReport rep = make_report("direct_vs_composed", 0, tol::kStructural);
  rep.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(name_seed(seed, rep.name, t));
    const std::size_t K = 1 + rng.index(4);
    const std::size_t B = 2 + rng.index(5);
    const std::size_t N = 1 + rng.index(3);
    // Every other trial is a likelihood vector (H = W = 1).
    const std::size_t H = t % 2 == 0 ? 1 : 1 + rng.index(4);
    const std::size_t W = t % 2 == 0 ? 1 : 2 + rng.index(3);
    HistogramParams params = init_histogram_params(K, B);
    for (double& c : params.centers) c = rng.uniform(-0.2, 1.2);
    for (double& s : params.slopes) s = rng.uniform(kMinSlope, 8.0);
    Tensor x = random_tensor(rng, {N, K, H, W}, -0.1, 1.1);
    Tensor proj = random_tensor(rng, {N, K * B, 1, 1}, -1, 1);

    HistogramLayer direct("d", params);
    HistogramLayer composed("c", params);
    Graph gd;
    Graph gc;
    Var xd = gd.input(x, "x");
    Var xc = gc.input(x, "x");
    Var od = direct.forward_direct(gd, xd);
    Var oc = composed.forward_composed(gc, xc);
    gd.backward(dot(gd, od, proj));
    gc.backward(dot(gc, oc, proj));

    double err = max_abs_diff(gd.value(od).values(), gc.value(oc).values());
    err = std::max(err, max_abs_diff(gd.grad(xd).values(), gc.grad(xc).values()));
    err = std::max(err, max_abs_diff(direct.conv1_bias.grad.values(), composed.conv1_bias.grad.values()));
    for (std::size_t j = 0; j < K * B; ++j) {
      err = std::max(err, std::abs(direct.conv2_weight.grad(j, j, 0, 0) - composed.conv2_weight.grad(j, j, 0, 0)));
    }
    // The standalone backward must agree with the fused op's routing.
    HistogramGrads hg = hist_backward_direct(x, params, proj);
    for (std::size_t j = 0; j < K * B; ++j) {
      err = std::max(err, std::abs(-hg.centers[j] - composed.conv1_bias.grad[j]));
      err = std::max(err, std::abs(-hg.slopes[j] - composed.conv2_weight.grad(j, j, 0, 0)));
    }
    ++rep.trials;
    if (!(err <= rep.max_error)) rep.max_error = err;
  }
  rep.passed = rep.max_error < rep.tolerance;
  return rep;
}

PropertyReport check_oracle_agreement(std::uint64_t seed, std::size_t trials) {
  PropertyReport rep = make_report("oracle_agreement", 0, tol::kStructural);
  rep.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(name_seed(seed, rep.name, t));
    const std::size_t K = 1 + rng.index(4);
    const std::size_t B = 2 + rng.index(6);
    const Shape s{1 + rng.index(3), K, 1 + rng.index(5), 1 + rng.index(5)};
    HistogramParams params = random_hist_params(rng, K, B);
    Tensor x = random_tensor(rng, s, 0.0, 1.0);
    const Tensor got = hist_forward_direct(x, params);
    const std::vector<double> flat(x.values().begin(), x.values().end());
    const auto want = reference::histogram(flat, s.n, K, s.spatial(), params.centers, params.slopes, B);
    ++rep.trials;
    const double err = max_abs_diff(got.values(), want);
    if (!(err <= rep.max_error)) rep.max_error = err;
  }
  rep.passed = rep.max_error < rep.tolerance;
  return rep;
}

PropertyReport check_partition_of_unity() {
  PropertyReport rep = make_report("partition_of_unity", 0, tol::kStructural);
  for (std::size_t B = 2; B <= 12; ++B) {
    const HistogramParams p = init_histogram_params(1, B);
    for (int i = 0; i <= 10000; ++i) {
      const double x = i / 10000.0;
      double sum = 0.0;
      int active = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const double v = basis_eval(x, p.center(0, b), p.slope(0, b));
        sum += v;
        if (v > tol::kStructural) ++active;
      }
      ++rep.trials;
      rep.max_error = std::max(rep.max_error, std::abs(sum - 1.0));
      if (active > 2) {
        rep.passed = false;
        rep.detail = "more than two active bins at x=" + std::to_string(x);
      }
    }
  }
  rep.passed = rep.passed && rep.max_error < rep.tolerance;
  return rep;
}

PropertyReport check_initialization() {
  PropertyReport rep = make_report("initialization", 1, tol::kStructural);
  const HistogramParams p = init_histogram_params(3, 6);
  const double expected[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t b = 0; b < 6; ++b) {
      rep.max_error = std::max(rep.max_error, std::abs(p.center(k, b) - expected[b]));
      rep.max_error = std::max(rep.max_error, std::abs(1.0 / p.slope(k, b) - 0.2));
    }
  }
  rep.passed = rep.max_error < rep.tolerance;
  return rep;
}

namespace {

// Runs `steps` momentum-SGD steps of a small composed-realization network on
// random inputs and labels.
HistNet train_randomly(Mode mode, std::uint64_t seed, std::size_t steps) {
  HistNetConfig cfg;
  cfg.classes = 3;
  cfg.bins = 4;
  cfg.in_channels = 4;
  cfg.feat_channels = 6;
  cfg.mode = mode;
  cfg.realization = HistogramRealization::kComposed;
  HistNet net(cfg, seed);
  net.set_phase(Phase::kJoint);
  Rng rng(seed);
  const auto params = net.parameters();
  for (std::size_t step = 0; step < steps; ++step) {
    Tensor x = random_tensor(rng, {2, cfg.in_channels, 3, 3}, -2, 2);
    std::vector<std::uint8_t> labels(18);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.index(cfg.classes));
    zero_grads(params);
    Graph g;
    g.backward(*net.forward(g, x, labels).loss);
    sgd_step(params, 0.05, 0.9);
    net.after_step();
  }
  return net;
}

}  // namespace

PropertyReport check_lock_immutability(std::uint64_t seed, bool fix_hist) {
  PropertyReport rep = make_report(fix_hist ? "lock_immutability_fix_hist" : "lock_immutability", 100, 0.0);
  rep.seed = seed;
  const Mode mode = fix_hist ? Mode::kFixHist : Mode::kHistNet;
  HistNetConfig cfg;
  cfg.classes = 3;
  cfg.bins = 4;
  cfg.in_channels = 4;
  cfg.feat_channels = 6;
  cfg.mode = mode;
  cfg.realization = HistogramRealization::kComposed;
  const HistNet fresh(cfg, seed);
  HistNet trained = train_randomly(mode, seed, 100);
  std::size_t locked = 0;
  std::size_t moved = 0;
  for (const Parameter* p : trained.parameters()) {
    const Parameter* before = fresh.find(p->name);
    for (std::size_t i = 0; i < p->size(); ++i) {
      if (p->structural_mask[i] != 0.0) continue;
      ++locked;
      if (std::bit_cast<std::uint64_t>(p->value[i]) != std::bit_cast<std::uint64_t>(before->value[i])) {
        ++moved;
        rep.max_error = std::max(rep.max_error, std::abs(p->value[i] - before->value[i]));
        if (rep.detail.empty()) rep.detail = p->name + "[" + std::to_string(i) + "] moved";
      }
    }
  }
  if (fix_hist && trained.histogram()->params().centers != fresh.histogram()->params().centers) ++moved;
  rep.passed = moved == 0 && locked > 0 && trained.histogram()->preserves_histogram_structure();
  if (rep.detail.empty()) rep.detail = std::to_string(locked) + " locked entries bit-identical";
  return rep;
}

PropertyReport check_free_all_breaks_structure(std::uint64_t seed) {
  PropertyReport rep = make_report("structure_preserved_free_all", 100, 0.0);
  rep.seed = seed;
  rep.expected_fail = true;
  HistNet trained = train_randomly(Mode::kFreeAll, seed, 100);
  const bool preserved = trained.histogram()->preserves_histogram_structure();
  rep.passed = !preserved;
  rep.detail = preserved ? "structure unexpectedly preserved" : "structure broken as expected";
  return rep;
}

PropertyReport check_feature_range(std::uint64_t seed, std::size_t trials) {
  PropertyReport rep = make_report("feature_range", 0, tol::kStructural);
  rep.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(name_seed(seed, rep.name, t));
    const std::size_t K = 1 + rng.index(4);
    const std::size_t B = 2 + rng.index(6);
    const Shape s{1 + rng.index(3), K, 1 + rng.index(5), 1 + rng.index(5)};
    HistogramParams params = init_histogram_params(K, B);
    Tensor x = random_tensor(rng, s, 0.0, 1.0);
    // At init every (n, k) histogram sums to one.
    const Tensor init_out = hist_forward_direct(x, params);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        double sum = 0.0;
        for (std::size_t b = 0; b < B; ++b) sum += init_out(n, k * B + b, 0, 0);
        rep.max_error = std::max(rep.max_error, std::abs(sum - 1.0));
      }
    }
    for (double& c : params.centers) c = rng.uniform(-1.0, 2.0);
    for (double& sl : params.slopes) sl = rng.uniform(kMinSlope, 20.0);
    const Tensor moved = hist_forward_direct(x, params);
    for (double v : moved.values()) {
      if (v < 0.0 || v > 1.0) {
        rep.passed = false;
        rep.detail = "entry " + std::to_string(v) + " outside [0,1]";
      }
    }
    ++rep.trials;
  }
  rep.passed = rep.passed && rep.max_error < rep.tolerance;
  return rep;
}

PropertyReport check_dataset_determinism(std::uint64_t seed) {
  PropertyReport rep = make_report("dataset_determinism", 1, 0.0);
  rep.seed = seed;
  const SceneSpec spec = SceneSpec::desk_default();
  const ContextDataset a = generate(spec, 8, 6, 5, seed);
  const ContextDataset b = generate(spec, 8, 6, 5, seed);
  const auto bytes = encode_dataset(a);
  const ContextDataset back = decode_dataset(bytes);
  rep.passed = a == b && back == a && encode_dataset(back) == bytes && encode_dataset(b) == bytes;
  if (!rep.passed) rep.detail = "generation or HCTX round trip not bit-exact";
  return rep;
}

PropertyReport check_metric_fixtures() {
  PropertyReport rep = make_report("metric_fixtures", 2, tol::kStructural);
  ConfusionMatrix c(2);
  c.add(0, 0, 2);
  c.add(1, 0, 1);
  c.add(1, 1, 1);
  const Metrics m = metrics_from_confusion(c);
  rep.max_error = std::max(std::abs(m.per_pixel - 0.75), std::abs(m.per_class - 0.75));
  ConfusionMatrix perfect(3);
  perfect.add(0, 0, 4);
  perfect.add(2, 2, 1);
  const Metrics p = metrics_from_confusion(perfect);
  rep.max_error = std::max({rep.max_error, std::abs(p.per_pixel - 1.0), std::abs(p.per_class - 1.0)});
  rep.passed = rep.max_error < rep.tolerance;
  return rep;
}

std::vector<PropertyReport> run_all(const SuiteOptions& options) {
  std::vector<PropertyReport> out = run_gradient_checks(options);
  out.push_back(check_histogram_equivalence(options.seed, options.structural_trials));
  out.push_back(check_oracle_agreement(options.seed, options.structural_trials));
  out.push_back(check_partition_of_unity());
  out.push_back(check_initialization());
  out.push_back(check_lock_immutability(options.seed, false));
  out.push_back(check_lock_immutability(options.seed, true));
  out.push_back(check_free_all_breaks_structure(options.seed));
  out.push_back(check_feature_range(options.seed, options.structural_trials));
  out.push_back(check_dataset_determinism(options.seed));
  out.push_back(check_metric_fixtures());
  for (PropertyReport& r : out) r.seed = options.seed;
  return out;
}

}  // namespace histlayer
