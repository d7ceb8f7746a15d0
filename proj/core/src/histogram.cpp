#include "histlayer/histogram.hpp"

#include "histlayer/error.hpp"
#include "histlayer/ops.hpp"

namespace histlayer {
namespace {

void check_params(const HistogramParams& p) {
  const std::size_t n = p.classes * p.bins;
  if (p.centers.size() != n || p.slopes.size() != n) {
    throw ShapeError("histogram params: expected " + std::to_string(n) + " centers and slopes");
  }
}

void check_likelihood(const Tensor& likelihood, const HistogramParams& p) {
  const Shape& s = likelihood.shape();
  if (s.c != p.classes) {
    throw ShapeError("histogram: likelihood has " + std::to_string(s.c) + " channels, histogram expects " +
                     std::to_string(p.classes) + " classes");
  }
  if (s.spatial() == 0) throw ShapeError("histogram: empty spatial extent " + s.str());
}

}  // namespace

HistogramParams init_histogram_params(std::size_t classes, std::size_t bins) {
  if (bins < 2) throw ArgumentError("histogram needs at least 2 bins, got " + std::to_string(bins));
  HistogramParams p{classes, bins, {}, {}};
  const double step = 1.0 / static_cast<double>(bins - 1);
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t b = 0; b < bins; ++b) {
      p.centers.push_back(static_cast<double>(b) * step);
      p.slopes.push_back(static_cast<double>(bins - 1));
    }
  }
  return p;
}

Tensor hist_forward_direct(const Tensor& likelihood, const HistogramParams& params) {
  check_params(params);
  check_likelihood(likelihood, params);
  const Shape s = likelihood.shape();
  const std::size_t B = params.bins;
  const double inv = 1.0 / static_cast<double>(s.spatial());
  Tensor out(Shape{s.n, s.c * B, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t k = 0; k < s.c; ++k) {
      const auto xs = likelihood.plane(n, k);
      for (std::size_t b = 0; b < B; ++b) {
        const double mu = params.center(k, b);
        const double slope = params.slope(k, b);
        double sum = 0.0;
        for (double x : xs) sum += basis_eval(x, mu, slope);
        out(n, k * B + b, 0, 0) = sum * inv;
      }
    }
  }
  return out;
}

HistogramGrads hist_backward_direct(const Tensor& likelihood, const HistogramParams& params,
                                    const Tensor& upstream) {
  check_params(params);
  check_likelihood(likelihood, params);
  const Shape s = likelihood.shape();
  const std::size_t B = params.bins;
  if (upstream.shape() != Shape{s.n, s.c * B, 1, 1}) {
    throw ShapeError("hist_backward_direct: upstream " + upstream.shape().str() + " does not match [" +
                     std::to_string(s.n) + "," + std::to_string(s.c * B) + ",1,1]");
  }
  const double inv = 1.0 / static_cast<double>(s.spatial());
  HistogramGrads g{Tensor(s), std::vector<double>(s.c * B, 0.0), std::vector<double>(s.c * B, 0.0)};
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t k = 0; k < s.c; ++k) {
      const auto xs = likelihood.plane(n, k);
      auto gx = g.input.plane(n, k);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t j = k * B + b;
        const double mu = params.centers[j];
        const double slope = params.slopes[j];
        const double u = upstream(n, j, 0, 0) * inv;
        double dmu = 0.0;
        double ds = 0.0;
        for (std::size_t p = 0; p < xs.size(); ++p) {
          const double diff = xs[p] - mu;
          const double dist = diff < 0.0 ? -diff : diff;
          if (1.0 - slope * dist <= 0.0) continue;
          const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          ds -= dist * u;
          dmu += slope * sgn * u;
          gx[p] -= slope * sgn * u;
        }
        g.centers[j] += dmu;
        g.slopes[j] += ds;
      }
    }
  }
  return g;
}

HistogramLayer::HistogramLayer(std::string prefix, const HistogramParams& params)
    : conv1_weight(prefix + ".conv1.weight", Tensor(Shape{params.feature_size(), params.classes, 1, 1})),
      conv1_bias(prefix + ".conv1.bias", Tensor(Shape{params.feature_size(), 1, 1, 1})),
      conv2_weight(prefix + ".conv2.weight", Tensor(Shape{params.feature_size(), params.feature_size(), 1, 1})),
      conv2_bias(prefix + ".conv2.bias", Tensor(Shape{params.feature_size(), 1, 1, 1}, 1.0)),
      classes_(params.classes),
      bins_(params.bins) {
  check_params(params);
  for (std::size_t k = 0; k < classes_; ++k) {
    for (std::size_t b = 0; b < bins_; ++b) conv1_weight.value(k * bins_ + b, k, 0, 0) = 1.0;
  }
  set_params(params);
  apply_structural_locks();
}

HistogramLayer::HistogramLayer(std::string prefix, std::size_t classes, std::size_t bins)
    : HistogramLayer(std::move(prefix), init_histogram_params(classes, bins)) {}

HistogramParams HistogramLayer::params() const {
  HistogramParams p{classes_, bins_, {}, {}};
  const std::size_t kb = classes_ * bins_;
  for (std::size_t j = 0; j < kb; ++j) {
    p.centers.push_back(-conv1_bias.value[j]);
    p.slopes.push_back(-conv2_weight.value(j, j, 0, 0));
  }
  return p;
}

void HistogramLayer::set_params(const HistogramParams& p) {
  check_params(p);
  if (p.classes != classes_ || p.bins != bins_) throw ShapeError("histogram params do not match layer size");
  for (std::size_t j = 0; j < p.feature_size(); ++j) {
    conv1_bias.value[j] = -p.centers[j];
    conv2_weight.value(j, j, 0, 0) = -p.slopes[j];
  }
}

void HistogramLayer::clamp_slopes(double min_slope) {
  const std::size_t kb = classes_ * bins_;
  for (std::size_t j = 0; j < kb; ++j) {
    double& d = conv2_weight.value(j, j, 0, 0);
    if (d > -min_slope) d = -min_slope;
  }
}

void HistogramLayer::apply_structural_locks() {
  const std::size_t kb = classes_ * bins_;
  conv1_weight.set_structural_mask(Tensor(conv1_weight.shape(), 0.0));
  conv1_bias.set_structural_mask(Tensor(conv1_bias.shape(), 1.0));
  Tensor diag(conv2_weight.shape(), 0.0);
  for (std::size_t j = 0; j < kb; ++j) diag(j, j, 0, 0) = 1.0;
  conv2_weight.set_structural_mask(std::move(diag));
  conv2_bias.set_structural_mask(Tensor(conv2_bias.shape(), 0.0));
}

void HistogramLayer::unlock_everything() {
  for (Parameter* p : {&conv1_weight, &conv1_bias, &conv2_weight, &conv2_bias}) {
    p->set_structural_mask(Tensor(p->shape(), 1.0));
  }
}

void HistogramLayer::lock_everything() {
  for (Parameter* p : {&conv1_weight, &conv1_bias, &conv2_weight, &conv2_bias}) {
    p->set_structural_mask(Tensor(p->shape(), 0.0));
  }
}

bool HistogramLayer::preserves_histogram_structure() const {
  const std::size_t kb = classes_ * bins_;
  for (std::size_t o = 0; o < kb; ++o) {
    for (std::size_t c = 0; c < classes_; ++c) {
      const double expect = (c == o / bins_) ? 1.0 : 0.0;
      if (conv1_weight.value(o, c, 0, 0) != expect) return false;
    }
    for (std::size_t c = 0; c < kb; ++c) {
      if (c != o && conv2_weight.value(o, c, 0, 0) != 0.0) return false;
    }
    if (conv2_bias.value[o] != 1.0) return false;
  }
  return true;
}

Var HistogramLayer::forward_composed(Graph& g, Var likelihood) {
  Var shifted = conv1x1(g, likelihood, conv1_weight, conv1_bias);
  Var dist = abs_elem(g, shifted);
  Var votes = conv1x1(g, dist, conv2_weight, conv2_bias);
  Var active = relu(g, votes);
  return global_avg_pool(g, active);
}

Var HistogramLayer::forward_direct(Graph& g, Var likelihood) {
  const Tensor& x = g.value(likelihood);
  const HistogramParams p = params();
  Tensor out = hist_forward_direct(x, p);
  if (g.track_hinges()) {
    // Same hinge arguments the composed form exposes: x - c, then 1 - s|x - c|.
    const Shape s = x.shape();
    std::vector<double> shifted;
    std::vector<double> votes;
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t k = 0; k < s.c; ++k) {
        for (std::size_t b = 0; b < bins_; ++b) {
          for (double v : x.plane(n, k)) {
            const double d = v - p.center(k, b);
            shifted.push_back(d);
            votes.push_back(1.0 - p.slope(k, b) * (d < 0.0 ? -d : d));
          }
        }
      }
    }
    g.add_hinges(shifted);
    g.add_hinges(votes);
  }
  const bool need_input = g.requires_grad(likelihood);
  const bool need_params =
      !g.skip_frozen() || conv1_bias.trainable_count() > 0 || conv2_weight.trainable_count() > 0;
  return g.record("histogram", std::move(out), need_input || need_params,
                  [this, likelihood, p, need_input](Graph& gr, Var, const Tensor& up) {
                    HistogramGrads hg = hist_backward_direct(gr.value(likelihood), p, up);
                    const std::size_t kb = p.feature_size();
                    for (std::size_t j = 0; j < kb; ++j) {
                      conv1_bias.grad[j] -= hg.centers[j];
                      conv2_weight.grad(j, j, 0, 0) -= hg.slopes[j];
                    }
                    if (need_input) gr.grad_slot(likelihood).add(hg.input);
                  });
}

}  // namespace histlayer
