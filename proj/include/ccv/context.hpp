#pragma once

#include <vector>

#include "ccv/tensor.hpp"

namespace ccv {

// One in-context example: image and mask are [1,H,W] with values in [0,1].
// Ground-truth masks are binary; predicted masks fed back as context during
// cycle verification may be soft.
template <typename T>
struct ContextPair {
  Tensor<T> image;
  Tensor<T> mask;

  template <typename U>
  ContextPair<U> cast() const {
    return {image.template cast<U>(), mask.template cast<U>()};
  }
};

template <typename T>
using ContextSet = std::vector<ContextPair<T>>;

template <typename T, typename U>
ContextSet<U> cast_context(const ContextSet<T>& ctx) {
  ContextSet<U> out;
  out.reserve(ctx.size());
  for (const auto& p : ctx) out.push_back(p.template cast<U>());
  return out;
}

}  // namespace ccv
