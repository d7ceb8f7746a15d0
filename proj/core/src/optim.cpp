#include "histlayer/optim.hpp"

#include <string>

#include "histlayer/error.hpp"

namespace histlayer {

void sgd_step(std::span<Parameter* const> params, double lr, double momentum) {
  if (!(lr > 0.0)) throw ArgumentError("sgd_step: learning rate must be positive, got " + std::to_string(lr));
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ArgumentError("sgd_step: momentum must lie in [0,1), got " + std::to_string(momentum));
  }
  for (Parameter* p : params) {
    auto value = p->value.values();
    auto buf = p->momentum.values();
    const auto grad = p->grad.values();
    const auto mask = p->lock_mask.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      buf[i] = momentum * buf[i] + grad[i];
      if (mask[i] != 0.0) value[i] -= lr * (buf[i] * mask[i]);
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace histlayer
