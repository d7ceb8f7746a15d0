#include "histlayer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "histlayer/error.hpp"

namespace histlayer {
namespace {

struct Probe {
  double loss = 0.0;
  std::vector<double> hinges;
};

Probe probe(const ForwardFn& forward) {
  Graph g;
  g.set_track_hinges(true);
  Var out = forward(g);
  return Probe{g.value(out)[0], g.hinges()};
}

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

bool crosses_kink(const std::vector<double>& base, const Probe& plus, const Probe& minus, double margin) {
  const std::size_t n = std::min({base.size(), plus.hinges.size(), minus.hinges.size()});
  for (std::size_t i = 0; i < n; ++i) {
    if (sign_of(plus.hinges[i]) != sign_of(minus.hinges[i])) return true;
    if (std::abs(base[i]) < margin && (plus.hinges[i] != base[i] || minus.hinges[i] != base[i])) return true;
  }
  return false;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const ForwardFn& forward, std::span<Parameter* const> params,
                           std::span<const InputSlot> inputs, const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ArgumentError("grad_check: eps must be positive");

  std::vector<std::vector<double>> analytic_params;
  std::vector<std::vector<double>> analytic_inputs;
  std::vector<double> base_hinges;
  {
    for (Parameter* p : params) p->zero_grad();
    Graph g;
    g.set_track_hinges(true);
    if (!options.corrupt_op.empty()) g.corrupt_backward(options.corrupt_op, options.corrupt_factor);
    Var out = forward(g);
    g.backward(out);
    base_hinges = g.hinges();
    for (Parameter* p : params) analytic_params.emplace_back(p->grad.values().begin(), p->grad.values().end());
    for (const InputSlot& slot : inputs) {
      auto var = g.find_input(slot.name);
      if (!var) throw ArgumentError("grad_check: forward never created input \"" + slot.name + "\"");
      Tensor gi = g.grad(*var);
      analytic_inputs.emplace_back(gi.values().begin(), gi.values().end());
    }
  }

  GradCheckReport report;
  auto check_entries = [&](const std::string& target, std::span<double> storage, const std::vector<double>& analytic) {
    for (std::size_t i = 0; i < storage.size(); ++i) {
      const double saved = storage[i];
      storage[i] = saved + options.eps;
      Probe plus = probe(forward);
      storage[i] = saved - options.eps;
      Probe minus = probe(forward);
      storage[i] = saved;
      if (crosses_kink(base_hinges, plus, minus, options.kink_margin)) {
        report.skipped.push_back(Coordinate{target, i});
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.eps);
      const double err = relative_error(analytic[i], numeric, options.abs_floor);
      ++report.checked;
      // Negated compare so a NaN error becomes the worst one and fails the check.
      if (!(err <= report.max_rel_error)) {
        report.max_rel_error = err;
        report.worst = Coordinate{target, i};
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  };

  for (std::size_t k = 0; k < params.size(); ++k) {
    check_entries(params[k]->name, params[k]->value.values(), analytic_params[k]);
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    check_entries(inputs[k].name, inputs[k].tensor->values(), analytic_inputs[k]);
  }
  report.passed = report.max_rel_error < options.tolerance;  // false for NaN
  return report;
}

}  // namespace histlayer
