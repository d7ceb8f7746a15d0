#pragma once

#include <span>

#include "histlayer/tensor.hpp"

namespace histlayer {

/// One momentum-SGD update:
///   buf   <- momentum * buf + grad
///   value <- value - lr * (buf * lock_mask)
/// Entries with lock_mask == 0 are not written at all.
void sgd_step(std::span<Parameter* const> params, double lr, double momentum);

void zero_grads(std::span<Parameter* const> params);

}  // namespace histlayer
