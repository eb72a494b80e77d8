#pragma once

#include <cstdint>
#include <vector>

#include "ccv/tensor.hpp"

namespace ccv {

// Moment buffers for Adam; sized lazily on the first step and validated
// against the parameter shapes afterwards.
template <typename T>
struct AdamState {
  int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One Adam update with bias correction, applied in place. Each parameter's
// gradient is taken from its own grad buffer; a missing buffer counts as a
// zero gradient (moments still decay).
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& state, T lr, T beta1,
               T beta2, T eps);

// Same update with explicitly supplied gradients.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params,
               const std::vector<const std::vector<T>*>& grads, AdamState<T>& state, T lr,
               T beta1, T beta2, T eps);

}  // namespace ccv
