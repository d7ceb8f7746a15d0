#include <gtest/gtest.h>

#include <cmath>

#include "histlayer/error.hpp"
#include "histlayer/gradcheck.hpp"
#include "histlayer/histogram.hpp"
#include "histlayer/ops.hpp"
#include "histlayer/optim.hpp"
#include "histlayer/reference_histogram.hpp"
#include "histlayer/tolerances.hpp"
#include "test_util.hpp"

using namespace histlayer;
using histlayer::testing::random_tensor;

TEST(Basis, PeakBoundaryAndMidpoint) {
  EXPECT_EQ(basis_eval(0.3, 0.3, 4.0), 1.0);
  EXPECT_EQ(basis_eval(0.3 + 0.25, 0.3, 4.0), 0.0);
  EXPECT_EQ(basis_eval(0.3 - 0.25, 0.3, 4.0), 0.0);
  EXPECT_NEAR(basis_eval(0.5, 0.4, 5.0), 0.5, 1e-15);
}

TEST(Init, SixBinsMatchPublishedGrid) {
  const HistogramParams p = init_histogram_params(2, 6);
  const double centers[] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t b = 0; b < 6; ++b) {
      EXPECT_NEAR(p.center(k, b), centers[b], 1e-15);
      EXPECT_EQ(p.slope(k, b), 5.0);
      EXPECT_NEAR(1.0 / p.slope(k, b), 0.2, 1e-15);
    }
  }
}

TEST(Init, TwoBinsAndRejection) {
  const HistogramParams p = init_histogram_params(1, 2);
  EXPECT_EQ(p.centers, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(p.slopes, (std::vector<double>{1.0, 1.0}));
  EXPECT_THROW(init_histogram_params(1, 1), ArgumentError);
}

TEST(Init, PartitionOfUnityAndLocality) {
  for (std::size_t B : {2u, 3u, 6u, 11u}) {
    const HistogramParams p = init_histogram_params(1, B);
    for (int i = 0; i <= 1000; ++i) {
      const double x = i / 1000.0;
      double sum = 0.0;
      int active = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const double v = basis_eval(x, p.center(0, b), p.slope(0, b));
        sum += v;
        active += v > tol::kStructural;
      }
      EXPECT_NEAR(sum, 1.0, tol::kStructural);
      EXPECT_LE(active, 2);
    }
  }
}

TEST(DirectForward, TwoPixelExample) {
  const Tensor x({1, 1, 1, 2}, {0.0, 0.2});
  const Tensor out = hist_forward_direct(x, init_histogram_params(1, 6));
  ASSERT_EQ(out.shape(), (Shape{1, 6, 1, 1}));
  const double want[] = {0.5, 0.5, 0, 0, 0, 0};
  for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(out[b], want[b], 1e-15);
}

TEST(DirectForward, ConstantMapAtCenterFillsOneBin) {
  const Tensor x({2, 1, 3, 3}, 0.6);
  const Tensor out = hist_forward_direct(x, init_histogram_params(1, 6));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(out(n, b, 0, 0), b == 3 ? 1.0 : 0.0, 1e-15);
  }
}

TEST(DirectForward, ChannelMismatchRejected) {
  EXPECT_THROW(hist_forward_direct(Tensor({1, 3, 2, 2}), init_histogram_params(2, 4)), ShapeError);
}

TEST(DirectBackward, SinglePixelPartials) {
  HistogramParams p = init_histogram_params(1, 6);
  const double x = p.center(0, 2) + 0.05;
  const Tensor in({1, 1, 1, 1}, x);
  Tensor up({1, 6, 1, 1});
  up[2] = 1.0;
  const HistogramGrads g = hist_backward_direct(in, p, up);
  EXPECT_NEAR(g.centers[2], 5.0, 1e-12);
  EXPECT_NEAR(g.slopes[2], -0.05, 1e-12);
  EXPECT_NEAR(g.input[0], -5.0, 1e-12);
}

TEST(DirectBackward, InactiveVoteHasZeroPartials) {
  HistogramParams p = init_histogram_params(1, 6);
  const Tensor in({1, 1, 1, 1}, 0.9);
  Tensor up({1, 6, 1, 1});
  up[1] = 1.0;
  const HistogramGrads g = hist_backward_direct(in, p, up);
  EXPECT_EQ(g.centers[1], 0.0);
  EXPECT_EQ(g.slopes[1], 0.0);
  EXPECT_EQ(g.input[0], 0.0);
}

TEST(DirectBackward, AtCenterSignIsZero) {
  HistogramParams p = init_histogram_params(1, 6);
  const Tensor in({1, 1, 1, 1}, p.center(0, 3));
  Tensor up({1, 6, 1, 1});
  up[3] = 1.0;
  const HistogramGrads g = hist_backward_direct(in, p, up);
  EXPECT_EQ(g.centers[3], 0.0);
  EXPECT_EQ(g.input[0], 0.0);
}

namespace {

// Finite differences directly on centers, slopes and the input, with kinks
// (x at a center or at a support edge) excluded.
struct DirectFd {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

DirectFd direct_finite_difference(Rng& rng) {
  const std::size_t K = 2;
  const std::size_t B = 4;
  HistogramParams p = init_histogram_params(K, B);
  for (double& c : p.centers) c += rng.uniform(-0.08, 0.08);
  for (double& s : p.slopes) s = rng.uniform(1.5, 6.0);
  Tensor x = random_tensor(rng, {2, K, 2, 2}, 0.0, 1.0);
  Tensor proj = random_tensor(rng, {2, K * B, 1, 1});
  auto f = [&] {
    const Tensor out = hist_forward_direct(x, p);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * proj[i];
    return s;
  };
  auto near_kink = [&] {
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t k = 0; k < K; ++k) {
        for (double v : x.plane(n, k)) {
          for (std::size_t b = 0; b < B; ++b) {
            const double d = std::abs(v - p.center(k, b));
            if (d < 1e-3 || std::abs(1.0 - p.slope(k, b) * d) < 1e-3) return true;
          }
        }
      }
    }
    return false;
  };
  const HistogramGrads g = hist_backward_direct(x, p, proj);
  DirectFd r;
  const double eps = tol::kFiniteDiffEps;
  auto probe = [&](double& slot, double analytic) {
    const double keep = slot;
    slot = keep + eps;
    const bool kp = near_kink();
    const double fp = f();
    slot = keep - eps;
    const bool km = near_kink();
    const double fm = f();
    slot = keep;
    if (kp || km || near_kink()) return;
    const double numeric = (fp - fm) / (2 * eps);
    r.max_rel = std::max(r.max_rel, relative_error(analytic, numeric, 1e-6));
    ++r.checked;
  };
  for (std::size_t j = 0; j < K * B; ++j) probe(p.centers[j], g.centers[j]);
  for (std::size_t j = 0; j < K * B; ++j) probe(p.slopes[j], g.slopes[j]);
  for (std::size_t i = 0; i < x.size(); ++i) probe(x[i], g.input[i]);
  return r;
}

}  // namespace

TEST(DirectBackward, MatchesFiniteDifferences) {
  std::size_t checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(1000 + trial);
    const DirectFd r = direct_finite_difference(rng);
    EXPECT_LT(r.max_rel, tol::kFiniteDiff) << "trial " << trial;
    checked += r.checked;
  }
  EXPECT_GT(checked, 100u * 25u);
}

TEST(Composed, KernelsHaveLockedLayout) {
  HistogramLayer layer("h", init_histogram_params(2, 3));
  for (std::size_t o = 0; o < 6; ++o) {
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_EQ(layer.conv1_weight.value(o, c, 0, 0), c == o / 3 ? 1.0 : 0.0);
      EXPECT_EQ(layer.conv1_weight.structural_mask(o, c, 0, 0), 0.0);
    }
    EXPECT_EQ(layer.conv1_bias.structural_mask[o], 1.0);
    EXPECT_EQ(layer.conv2_bias.value[o], 1.0);
    EXPECT_EQ(layer.conv2_bias.structural_mask[o], 0.0);
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_EQ(layer.conv2_weight.value(o, c, 0, 0), o == c ? -layer.params().slopes[o] : 0.0);
      EXPECT_EQ(layer.conv2_weight.structural_mask(o, c, 0, 0), o == c ? 1.0 : 0.0);
    }
  }
  EXPECT_TRUE(layer.preserves_histogram_structure());
}

TEST(Composed, MatchesDirectOnHalfLikelihood) {
  HistogramLayer layer("h", init_histogram_params(1, 6));
  Graph g;
  const Tensor out = g.value(layer.forward_composed(g, g.input(Tensor({1, 1, 2, 2}, 0.5))));
  const double want[] = {0, 0, 0.5, 0.5, 0, 0};
  for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(out[b], want[b], tol::kStructural);
}

TEST(Composed, ValuesAndGradientsEqualDirectForm) {
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(500 + trial);
    const std::size_t K = 1 + rng.index(3);
    const std::size_t B = 2 + rng.index(5);
    const bool vec = trial % 2 == 0;
    HistogramParams p = init_histogram_params(K, B);
    for (double& c : p.centers) c = rng.uniform(-0.2, 1.2);
    for (double& s : p.slopes) s = rng.uniform(kMinSlope, 8.0);
    Tensor x = random_tensor(rng, {2, K, vec ? 1u : 3u, vec ? 1u : 2u}, 0.0, 1.0);
    Tensor proj = random_tensor(rng, {2, K * B, 1, 1});
    HistogramLayer layer("h", p);
    Graph g;
    Var xv = g.input(x);
    Var out = layer.forward_composed(g, xv);
    g.backward(dot(g, out, proj));
    const Tensor direct = hist_forward_direct(x, p);
    const HistogramGrads dg = hist_backward_direct(x, p, proj);
    for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(g.value(out)[i], direct[i], tol::kStructural);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g.grad(xv)[i], dg.input[i], tol::kStructural);
    for (std::size_t j = 0; j < K * B; ++j) {
      EXPECT_NEAR(-layer.conv1_bias.grad[j], dg.centers[j], tol::kStructural);
      EXPECT_NEAR(-layer.conv2_weight.grad(j, j, 0, 0), dg.slopes[j], tol::kStructural);
    }
  }
}

TEST(Composed, LockedEntriesSurviveTraining) {
  Rng rng(77);
  HistogramLayer layer("h", init_histogram_params(3, 4));
  const HistogramLayer initial = layer;
  std::vector<Parameter*> ps = {&layer.conv1_weight, &layer.conv1_bias, &layer.conv2_weight, &layer.conv2_bias};
  for (int step = 0; step < 100; ++step) {
    Tensor x = random_tensor(rng, {2, 3, 2, 2}, 0.0, 1.0);
    zero_grads(ps);
    Graph g;
    g.backward(dot(g, layer.forward_composed(g, g.input(x)), random_tensor(rng, {2, 12, 1, 1})));
    sgd_step(ps, 0.05, 0.9);
    layer.clamp_slopes();
  }
  for (std::size_t i = 0; i < layer.conv1_weight.size(); ++i) {
    EXPECT_EQ(layer.conv1_weight.value[i], initial.conv1_weight.value[i]);
  }
  for (std::size_t o = 0; o < 12; ++o) {
    EXPECT_EQ(layer.conv2_bias.value[o], 1.0);
    for (std::size_t c = 0; c < 12; ++c) {
      if (o != c) EXPECT_EQ(layer.conv2_weight.value(o, c, 0, 0), 0.0);
    }
  }
  EXPECT_TRUE(layer.preserves_histogram_structure());
  EXPECT_NE(layer.params().centers, initial.params().centers);
}

TEST(Composed, UnlockedLayerLosesStructure) {
  Rng rng(78);
  HistogramLayer layer("h", init_histogram_params(2, 3));
  layer.unlock_everything();
  std::vector<Parameter*> ps = {&layer.conv1_weight, &layer.conv1_bias, &layer.conv2_weight, &layer.conv2_bias};
  for (int step = 0; step < 20; ++step) {
    zero_grads(ps);
    Graph g;
    g.backward(dot(g, layer.forward_composed(g, g.input(random_tensor(rng, {2, 2, 2, 2}, 0.0, 1.0))),
                   random_tensor(rng, {2, 6, 1, 1})));
    sgd_step(ps, 0.05, 0.9);
  }
  EXPECT_FALSE(layer.preserves_histogram_structure());
}

TEST(Composed, SlopeClampFloorsSlopes) {
  HistogramParams p = init_histogram_params(1, 3);
  p.slopes[1] = -2.0;
  HistogramLayer layer("h", init_histogram_params(1, 3));
  layer.set_params(p);
  layer.clamp_slopes();
  EXPECT_EQ(layer.params().slopes[1], kMinSlope);
}

TEST(Reference, HandExamples) {
  const std::vector<double> half(4, 0.5);
  HistogramParams p = init_histogram_params(1, 6);
  const auto out = reference::histogram(half, 1, 1, 4, p.centers, p.slopes, 6);
  const double want[] = {0, 0, 0.5, 0.5, 0, 0};
  for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(out[b], want[b], 1e-15);

  const std::vector<double> zero = {0.0};
  const auto one = reference::histogram(zero, 1, 1, 1, {0.0}, {1.0}, 1);
  EXPECT_EQ(one, std::vector<double>{1.0});
}

TEST(Reference, AgreesWithDirectForm) {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng rng(9000 + trial);
    const std::size_t K = 1 + rng.index(3);
    const std::size_t B = 2 + rng.index(6);
    const Shape s{1 + rng.index(2), K, 1 + rng.index(4), 1 + rng.index(4)};
    HistogramParams p = init_histogram_params(K, B);
    for (double& c : p.centers) c += rng.uniform(-0.1, 0.1);
    for (double& sl : p.slopes) sl = rng.uniform(0.5, 9.0);
    Tensor x = random_tensor(rng, s, 0.0, 1.0);
    const Tensor got = hist_forward_direct(x, p);
    const std::vector<double> flat(x.values().begin(), x.values().end());
    const auto want = reference::histogram(flat, s.n, K, s.spatial(), p.centers, p.slopes, B);
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  EXPECT_LT(worst, tol::kStructural);
}

TEST(Range, FeaturesStayInUnitInterval) {
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(300 + trial);
    HistogramParams p = init_histogram_params(3, 5);
    Tensor x = random_tensor(rng, {2, 3, 3, 3}, 0.0, 1.0);
    const Tensor init_out = hist_forward_direct(x, p);
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t k = 0; k < 3; ++k) {
        double sum = 0.0;
        for (std::size_t b = 0; b < 5; ++b) sum += init_out(n, k * 5 + b, 0, 0);
        EXPECT_NEAR(sum, 1.0, tol::kStructural);
      }
    }
    for (double& c : p.centers) c = rng.uniform(-1, 2);
    for (double& s : p.slopes) s = rng.uniform(kMinSlope, 30);
    const Tensor out = hist_forward_direct(x, p);
    for (double v : out.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(DirectLayer, RoutesGradientsLikeComposed) {
  Rng rng(31);
  HistogramParams p = init_histogram_params(2, 4);
  for (double& c : p.centers) c += rng.uniform(-0.05, 0.05);
  HistogramLayer layer("h", p);
  Tensor x = random_tensor(rng, {1, 2, 3, 3}, 0.0, 1.0);
  InputSlot in[] = {{"x", &x}};
  Parameter* ps[] = {&layer.conv1_bias, &layer.conv2_weight};
  Tensor proj = random_tensor(rng, {1, 8, 1, 1});
  const auto r =
      grad_check([&](Graph& g) { return dot(g, layer.forward_direct(g, g.input(x, "x")), proj); }, ps, in);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
