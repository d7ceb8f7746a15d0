#include "histlayer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "histlayer/error.hpp"

namespace histlayer {
namespace {

double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_weight(const Parameter& weight, const Parameter& bias, std::size_t in_channels, const char* op) {
  const Shape& ws = weight.shape();
  if (ws.h != 1 || ws.w != 1) {
    throw ShapeError(std::string(op) + ": weight " + weight.name + " must be [Cout,Cin,1,1], got " + ws.str());
  }
  if (ws.c != in_channels) {
    throw ShapeError(std::string(op) + ": weight " + weight.name + " expects " + std::to_string(ws.c) +
                     " input channels, input has " + std::to_string(in_channels));
  }
  if (bias.size() != ws.n) {
    throw ShapeError(std::string(op) + ": bias " + bias.name + " has " + std::to_string(bias.size()) +
                     " entries, weight has " + std::to_string(ws.n) + " output channels");
  }
}

// Shared kernel for conv1x1 and fully_connected (an FC on [N,D,1,1] is a 1x1 conv).
Var pointwise_affine(Graph& g, Var x, Parameter& weight, Parameter& bias, const char* op) {
  const Tensor& in = g.value(x);
  const Shape is = in.shape();
  check_weight(weight, bias, is.c, op);
  const std::size_t cout = weight.shape().n;
  const std::size_t hw = is.spatial();
  Tensor out(Shape{is.n, cout, is.h, is.w});
  const auto w = weight.value.values();
  for (std::size_t n = 0; n < is.n; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      auto dst = out.plane(n, o);
      std::fill(dst.begin(), dst.end(), 0.0);
      for (std::size_t c = 0; c < is.c; ++c) {
        const double wc = w[o * is.c + c];
        const auto src = in.plane(n, c);
        for (std::size_t p = 0; p < hw; ++p) dst[p] += wc * src[p];
      }
      const double b = bias.value[o];
      for (std::size_t p = 0; p < hw; ++p) dst[p] += b;
    }
  }
  Parameter* wp = &weight;
  Parameter* bp = &bias;
  const bool need_input = g.requires_grad(x);
  const bool need_params = !g.skip_frozen() || weight.trainable_count() > 0 || bias.trainable_count() > 0;
  return g.record(op, std::move(out), need_input || need_params,
                  [x, wp, bp, need_input, need_params, cout](Graph& gr, Var, const Tensor& up) {
    const Tensor& in = gr.value(x);
    const Shape is = in.shape();
    const std::size_t hw = is.spatial();
    auto wgrad = wp->grad.values();
    for (std::size_t n = 0; n < is.n && need_params; ++n) {
      for (std::size_t o = 0; o < cout; ++o) {
        const auto u = up.plane(n, o);
        double bsum = 0.0;
        for (std::size_t p = 0; p < hw; ++p) bsum += u[p];
        bp->grad[o] += bsum;
        for (std::size_t c = 0; c < is.c; ++c) {
          const auto src = in.plane(n, c);
          double acc = 0.0;
          for (std::size_t p = 0; p < hw; ++p) acc += u[p] * src[p];
          wgrad[o * is.c + c] += acc;
        }
      }
    }
    if (!need_input) return;
    Tensor& gin = gr.grad_slot(x);
    const auto w = wp->value.values();
    for (std::size_t n = 0; n < is.n; ++n) {
      for (std::size_t c = 0; c < is.c; ++c) {
        auto dst = gin.plane(n, c);
        for (std::size_t o = 0; o < cout; ++o) {
          const double wc = w[o * is.c + c];
          const auto u = up.plane(n, o);
          for (std::size_t p = 0; p < hw; ++p) dst[p] += wc * u[p];
        }
      }
    }
  });
}

}  // namespace

Var conv1x1(Graph& g, Var x, Parameter& weight, Parameter& bias) {
  return pointwise_affine(g, x, weight, bias, "conv1x1");
}

Var fully_connected(Graph& g, Var x, Parameter& weight, Parameter& bias) {
  const Shape& s = g.value(x).shape();
  if (s.h != 1 || s.w != 1) {
    throw ShapeError("fully_connected: input must be [N,D,1,1], got " + s.str());
  }
  return pointwise_affine(g, x, weight, bias, "fully_connected");
}

Var abs_elem(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::abs(in[i]);
  if (g.track_hinges()) g.add_hinges(in.values());
  return g.record("abs_elem", std::move(out), g.requires_grad(x), [x](Graph& gr, Var, const Tensor& up) {
    const Tensor& in = gr.value(x);
    Tensor& gin = gr.grad_slot(x);
    for (std::size_t i = 0; i < in.size(); ++i) gin[i] += sign_or_zero(in[i]) * up[i];
  });
}

Var relu(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (g.track_hinges()) g.add_hinges(in.values());
  return g.record("relu", std::move(out), g.requires_grad(x), [x](Graph& gr, Var, const Tensor& up) {
    const Tensor& in = gr.value(x);
    Tensor& gin = gr.grad_slot(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) gin[i] += up[i];
    }
  });
}

Var global_avg_pool(Graph& g, Var x) {
  const Tensor& in = g.value(x);
  const Shape s = in.shape();
  if (s.spatial() == 0) throw ShapeError("global_avg_pool: empty spatial extent " + s.str());
  Tensor out(Shape{s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.spatial());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (double v : in.plane(n, c)) sum += v;
      out(n, c, 0, 0) = sum * inv;
    }
  }
  return g.record("global_avg_pool", std::move(out), g.requires_grad(x), [x, inv](Graph& gr, Var, const Tensor& up) {
    Tensor& gin = gr.grad_slot(x);
    const Shape s = gin.shape();
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const double u = up(n, c, 0, 0) * inv;
        for (double& d : gin.plane(n, c)) d += u;
      }
    }
  });
}

Var broadcast_concat(Graph& g, Var features, Var context) {
  const Shape fs = g.value(features).shape();
  const Shape cs = g.value(context).shape();
  if (fs.n != cs.n) {
    throw ShapeError("broadcast_concat: batch mismatch, features " + fs.str() + " vs context " + cs.str());
  }
  if (cs.h != 1 || cs.w != 1) {
    throw ShapeError("broadcast_concat: context must be [N,D,1,1], got " + cs.str());
  }
  const Tensor& f = g.value(features);
  const Tensor& ctx = g.value(context);
  Tensor out(Shape{fs.n, fs.c + cs.c, fs.h, fs.w});
  for (std::size_t n = 0; n < fs.n; ++n) {
    for (std::size_t c = 0; c < fs.c; ++c) {
      const auto src = f.plane(n, c);
      std::copy(src.begin(), src.end(), out.plane(n, c).begin());
    }
    for (std::size_t d = 0; d < cs.c; ++d) {
      auto dst = out.plane(n, fs.c + d);
      std::fill(dst.begin(), dst.end(), ctx(n, d, 0, 0));
    }
  }
  const bool need_f = g.requires_grad(features);
  const bool need_c = g.requires_grad(context);
  return g.record("broadcast_concat", std::move(out), need_f || need_c,
                  [features, context, need_f, need_c, fc = fs.c, dc = cs.c](Graph& gr, Var, const Tensor& up) {
                    const std::size_t batch = up.shape().n;
                    if (need_f) {
                      Tensor& gf = gr.grad_slot(features);
                      for (std::size_t n = 0; n < batch; ++n) {
                        for (std::size_t c = 0; c < fc; ++c) {
                          auto dst = gf.plane(n, c);
                          const auto u = up.plane(n, c);
                          for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += u[p];
                        }
                      }
                    }
                    if (need_c) {
                      Tensor& gc = gr.grad_slot(context);
                      for (std::size_t n = 0; n < batch; ++n) {
                        for (std::size_t d = 0; d < dc; ++d) {
                          double sum = 0.0;
                          for (double u : up.plane(n, fc + d)) sum += u;
                          gc(n, d, 0, 0) += sum;
                        }
                      }
                    }
                  });
}

Var softmax(Graph& g, Var logits) {
  const Tensor& z = g.value(logits);
  const Shape s = z.shape();
  Tensor p(s);
  const std::size_t hw = s.spatial();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t q = 0; q < hw; ++q) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.c; ++k) mx = std::max(mx, z.plane(n, k)[q]);
      double sum = 0.0;
      for (std::size_t k = 0; k < s.c; ++k) {
        const double e = std::exp(z.plane(n, k)[q] - mx);
        p.plane(n, k)[q] = e;
        sum += e;
      }
      for (std::size_t k = 0; k < s.c; ++k) p.plane(n, k)[q] /= sum;
    }
  }
  return g.record("softmax", std::move(p), g.requires_grad(logits), [logits](Graph& gr, Var self, const Tensor& up) {
    const Tensor& p = gr.value(self);
    Tensor& gz = gr.grad_slot(logits);
    const Shape s = p.shape();
    const std::size_t hw = s.spatial();
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t q = 0; q < hw; ++q) {
        double inner = 0.0;
        for (std::size_t k = 0; k < s.c; ++k) inner += p.plane(n, k)[q] * up.plane(n, k)[q];
        for (std::size_t k = 0; k < s.c; ++k) {
          gz.plane(n, k)[q] += p.plane(n, k)[q] * (up.plane(n, k)[q] - inner);
        }
      }
    }
  });
}

SoftmaxXent softmax_xent(Graph& g, Var logits, std::span<const std::uint8_t> labels) {
  const Tensor& z = g.value(logits);
  const Shape s = z.shape();
  const std::size_t hw = s.spatial();
  if (labels.size() != s.n * hw) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for logits " + s.str());
  }
  std::size_t count = 0;
  for (std::uint8_t l : labels) {
    if (l == kIgnoreLabel) continue;
    if (l >= s.c) {
      throw ArgumentError("softmax_xent: label " + std::to_string(l) + " out of range for " +
                          std::to_string(s.c) + " classes");
    }
    ++count;
  }
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t q = 0; q < hw; ++q) {
      const std::uint8_t l = labels[n * hw + q];
      if (l == kIgnoreLabel) continue;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.c; ++k) mx = std::max(mx, z.plane(n, k)[q]);
      double sum = 0.0;
      for (std::size_t k = 0; k < s.c; ++k) sum += std::exp(z.plane(n, k)[q] - mx);
      total += std::log(sum) + mx - z.plane(n, l)[q];
    }
  }
  const double inv = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
  Tensor loss(Shape{1, 1, 1, 1}, total * inv);
  std::vector<std::uint8_t> kept(labels.begin(), labels.end());
  Var probs = softmax(g, logits);
  Var loss_var = g.record(
      "softmax_xent", std::move(loss), g.requires_grad(logits),
      [logits, probs, inv, kept = std::move(kept)](Graph& gr, Var, const Tensor& up) {
        const Tensor& p = gr.value(probs);
        Tensor& gz = gr.grad_slot(logits);
        const Shape s = p.shape();
        const std::size_t hw = s.spatial();
        const double scale = up[0] * inv;
        for (std::size_t n = 0; n < s.n; ++n) {
          for (std::size_t q = 0; q < hw; ++q) {
            const std::uint8_t l = kept[n * hw + q];
            if (l == kIgnoreLabel) continue;
            for (std::size_t k = 0; k < s.c; ++k) {
              const double target = k == l ? 1.0 : 0.0;
              gz.plane(n, k)[q] += scale * (p.plane(n, k)[q] - target);
            }
          }
        }
      });
  return SoftmaxXent{loss_var, probs};
}

Var average(Graph& g, std::span<const Var> xs) {
  if (xs.empty()) throw ArgumentError("average: no inputs");
  const Shape s = g.value(xs[0]).shape();
  Tensor out(s);
  bool need = false;
  for (Var v : xs) {
    if (g.value(v).shape() != s) {
      throw ShapeError("average: shape " + g.value(v).shape().str() + " differs from " + s.str());
    }
    out.add(g.value(v));
    need = need || g.requires_grad(v);
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (double& v : out.values()) v *= inv;
  std::vector<Var> inputs(xs.begin(), xs.end());
  return g.record("average", std::move(out), need, [inputs, inv](Graph& gr, Var, const Tensor& up) {
    for (Var v : inputs) {
      if (!gr.requires_grad(v)) continue;
      Tensor& gi = gr.grad_slot(v);
      for (std::size_t i = 0; i < up.size(); ++i) gi[i] += up[i] * inv;
    }
  });
}

Var dot(Graph& g, Var x, const Tensor& weights) {
  const Tensor& in = g.value(x);
  if (weights.shape() != in.shape()) {
    throw ShapeError("dot: weights " + weights.shape().str() + " vs input " + in.shape().str());
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) sum += weights[i] * in[i];
  return g.record("dot", Tensor(Shape{1, 1, 1, 1}, sum), g.requires_grad(x),
                  [x, weights](Graph& gr, Var, const Tensor& up) {
                    Tensor& gi = gr.grad_slot(x);
                    for (std::size_t i = 0; i < weights.size(); ++i) gi[i] += up[0] * weights[i];
                  });
}

}  // namespace histlayer
