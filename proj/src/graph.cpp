#include "ccv/graph.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "ccv/kernels.hpp"

namespace ccv {

namespace {

// Wider accumulator used for reductions: float sums run in double, double
// sums in x87 extended precision. Together with the canonical ordering in
// mean_stack this makes the cross-pair mean an exact function of the
// multiset of addends for all inputs that occur here.
template <typename T>
struct Wider;
template <>
struct Wider<float> {
  using type = double;
};
template <>
struct Wider<double> {
  using type = long double;
};
template <typename T>
using Acc = typename Wider<T>::type;

inline uint32_t total_order_key(float v) {
  uint32_t u;
  std::memcpy(&u, &v, sizeof u);
  return (u & 0x80000000u) ? ~u : (u | 0x80000000u);
}
inline uint64_t total_order_key(double v) {
  uint64_t u;
  std::memcpy(&u, &v, sizeof u);
  return (u & 0x8000000000000000ull) ? ~u : (u | 0x8000000000000000ull);
}

template <typename T>
void sort_canonical(T* p, int n) {
  for (int i = 1; i < n; ++i) {
    T v = p[i];
    auto kv = total_order_key(v);
    int j = i - 1;
    while (j >= 0 && total_order_key(p[j]) > kv) {
      p[j + 1] = p[j];
      --j;
    }
    p[j + 1] = v;
  }
}

template <typename T>
constexpr T entropy_clamp() {
  if constexpr (sizeof(T) == sizeof(float))
    return T(1e-7);
  else
    return T(1e-12);
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

std::string dim_msg(const char* op, const char* what, int got, int want) {
  return std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
         std::to_string(want);
}

}  // namespace

template <typename T>
bool Graph<T>::produced_here(const Tensor<T>& t) const {
  return t.defined() && produced_.count(t.storage_id()) > 0;
}

template <typename T>
bool Graph<T>::wants_grad(const Tensor<T>& t) const {
  if (t.requires_grad()) return true;
  auto it = produced_.find(t.storage_id());
  return it != produced_.end() && nodes_[it->second].needs_grad;
}

template <typename T>
Tensor<T> Graph<T>::record(const char* op, bool needs_grad, Tensor<T> out,
                           std::function<void()> back) {
  produced_[out.storage_id()] = nodes_.size();
  nodes_.push_back(Node{op, needs_grad, out, std::move(back)});
  return out;
}

template <typename T>
typename Graph<T>::Bcast Graph<T>::binary_mode(const char* op, const Tensor<T>& a,
                                               const Tensor<T>& b) const {
  if (a.same_shape(b)) return Bcast::same;
  if (a.numel() == 1) return Bcast::a_scalar;
  if (b.numel() == 1) return Bcast::b_scalar;
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                              b.shape_str());
}

template <typename T>
Tensor<T> Graph<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  Bcast m = binary_mode("add", a, b);
  Tensor<T> out(m == Bcast::a_scalar ? b.shape() : a.shape());
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  if (m == Bcast::same)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  else if (m == Bcast::a_scalar)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[0] + pb[i];
  else
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[0];
  const bool wa = wants_grad(a), wb = wants_grad(b);
  return record("add", wa || wb, out, [a, b, out, m, wa, wb]() mutable {
    const auto& g = out.grad();
    const int64_t nn = out.numel();
    if (wa) {
      a.ensure_grad();
      if (m == Bcast::a_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]);
        a.grad()[0] += static_cast<T>(s);
      } else {
        for (int64_t i = 0; i < nn; ++i) a.grad()[i] += g[i];
      }
    }
    if (wb) {
      b.ensure_grad();
      if (m == Bcast::b_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]);
        b.grad()[0] += static_cast<T>(s);
      } else {
        for (int64_t i = 0; i < nn; ++i) b.grad()[i] += g[i];
      }
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::sub(const Tensor<T>& a, const Tensor<T>& b) {
  Bcast m = binary_mode("sub", a, b);
  Tensor<T> out(m == Bcast::a_scalar ? b.shape() : a.shape());
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  if (m == Bcast::same)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  else if (m == Bcast::a_scalar)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[0] - pb[i];
  else
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[0];
  const bool wa = wants_grad(a), wb = wants_grad(b);
  return record("sub", wa || wb, out, [a, b, out, m, wa, wb]() mutable {
    const auto& g = out.grad();
    const int64_t nn = out.numel();
    if (wa) {
      a.ensure_grad();
      if (m == Bcast::a_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]);
        a.grad()[0] += static_cast<T>(s);
      } else {
        for (int64_t i = 0; i < nn; ++i) a.grad()[i] += g[i];
      }
    }
    if (wb) {
      b.ensure_grad();
      if (m == Bcast::b_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]);
        b.grad()[0] -= static_cast<T>(s);
      } else {
        for (int64_t i = 0; i < nn; ++i) b.grad()[i] -= g[i];
      }
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  Bcast m = binary_mode("mul", a, b);
  Tensor<T> out(m == Bcast::a_scalar ? b.shape() : a.shape());
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  if (m == Bcast::same)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  else if (m == Bcast::a_scalar)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[0] * pb[i];
  else
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[0];
  const bool wa = wants_grad(a), wb = wants_grad(b);
  return record("mul", wa || wb, out, [a, b, out, m, wa, wb]() mutable {
    const auto& g = out.grad();
    const int64_t nn = out.numel();
    const T* da = a.ptr();
    const T* db = b.ptr();
    if (wa) {
      a.ensure_grad();
      if (m == Bcast::a_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]) * db[i];
        a.grad()[0] += static_cast<T>(s);
      } else if (m == Bcast::b_scalar) {
        for (int64_t i = 0; i < nn; ++i) a.grad()[i] += g[i] * db[0];
      } else {
        for (int64_t i = 0; i < nn; ++i) a.grad()[i] += g[i] * db[i];
      }
    }
    if (wb) {
      b.ensure_grad();
      if (m == Bcast::b_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]) * da[i];
        b.grad()[0] += static_cast<T>(s);
      } else if (m == Bcast::a_scalar) {
        for (int64_t i = 0; i < nn; ++i) b.grad()[i] += g[i] * da[0];
      } else {
        for (int64_t i = 0; i < nn; ++i) b.grad()[i] += g[i] * da[i];
      }
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::div(const Tensor<T>& a, const Tensor<T>& b) {
  Bcast m = binary_mode("div", a, b);
  Tensor<T> out(m == Bcast::a_scalar ? b.shape() : a.shape());
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  if (m == Bcast::same)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
  else if (m == Bcast::a_scalar)
    for (int64_t i = 0; i < n; ++i) po[i] = pa[0] / pb[i];
  else
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[0];
  const bool wa = wants_grad(a), wb = wants_grad(b);
  return record("div", wa || wb, out, [a, b, out, m, wa, wb]() mutable {
    const auto& g = out.grad();
    const int64_t nn = out.numel();
    const T* da = a.ptr();
    const T* db = b.ptr();
    if (wa) {
      a.ensure_grad();
      if (m == Bcast::a_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]) / db[i];
        a.grad()[0] += static_cast<T>(s);
      } else if (m == Bcast::b_scalar) {
        for (int64_t i = 0; i < nn; ++i) a.grad()[i] += g[i] / db[0];
      } else {
        for (int64_t i = 0; i < nn; ++i) a.grad()[i] += g[i] / db[i];
      }
    }
    if (wb) {
      b.ensure_grad();
      if (m == Bcast::b_scalar) {
        Acc<T> s = 0;
        for (int64_t i = 0; i < nn; ++i) s += static_cast<Acc<T>>(g[i]) * da[i];
        b.grad()[0] -= static_cast<T>(s / (static_cast<Acc<T>>(db[0]) * db[0]));
      } else if (m == Bcast::a_scalar) {
        for (int64_t i = 0; i < nn; ++i) b.grad()[i] -= g[i] * da[0] / (db[i] * db[i]);
      } else {
        for (int64_t i = 0; i < nn; ++i) b.grad()[i] -= g[i] * da[i] / (db[i] * db[i]);
      }
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] + c;
  const bool wa = wants_grad(a);
  return record("add_scalar", wa, out, [a, out, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    const auto& g = out.grad();
    for (int64_t i = 0; i < out.numel(); ++i) a.grad()[i] += g[i];
  });
}

template <typename T>
Tensor<T> Graph<T>::mul_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * c;
  const bool wa = wants_grad(a);
  return record("mul_scalar", wa, out, [a, out, wa, c]() mutable {
    if (!wa) return;
    a.ensure_grad();
    const auto& g = out.grad();
    for (int64_t i = 0; i < out.numel(); ++i) a.grad()[i] += g[i] * c;
  });
}

template <typename T>
Tensor<T> Graph<T>::rsub_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = c - a.ptr()[i];
  const bool wa = wants_grad(a);
  return record("rsub_scalar", wa, out, [a, out, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    const auto& g = out.grad();
    for (int64_t i = 0; i < out.numel(); ++i) a.grad()[i] -= g[i];
  });
}

template <typename T>
Tensor<T> Graph<T>::relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] > T(0) ? a.ptr()[i] : T(0);
  const bool wa = wants_grad(a);
  return record("relu", wa, out, [a, out, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    const auto& g = out.grad();
    for (int64_t i = 0; i < out.numel(); ++i)
      if (a.ptr()[i] > T(0)) a.grad()[i] += g[i];
  });
}

template <typename T>
Tensor<T> Graph<T>::sigmoid(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = stable_sigmoid(a.ptr()[i]);
  const bool wa = wants_grad(a);
  return record("sigmoid", wa, out, [a, out, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    const auto& g = out.grad();
    const T* s = out.ptr();
    for (int64_t i = 0; i < out.numel(); ++i) a.grad()[i] += g[i] * s[i] * (T(1) - s[i]);
  });
}

template <typename T>
Tensor<T> Graph<T>::binary_entropy(const Tensor<T>& p) {
  constexpr T eps = entropy_clamp<T>();
  Tensor<T> out(p.shape());
  const int64_t n = p.numel();
  for (int64_t i = 0; i < n; ++i) {
    T pc = std::min(std::max(p.ptr()[i], eps), T(1) - eps);
    out.ptr()[i] = -(pc * std::log(pc) + (T(1) - pc) * std::log(T(1) - pc));
  }
  const bool wp = wants_grad(p);
  return record("binary_entropy", wp, out, [p, out, wp]() mutable {
    if (!wp) return;
    constexpr T ec = entropy_clamp<T>();
    p.ensure_grad();
    const auto& g = out.grad();
    for (int64_t i = 0; i < out.numel(); ++i) {
      T pc = std::min(std::max(p.ptr()[i], ec), T(1) - ec);
      p.grad()[i] += g[i] * std::log((T(1) - pc) / pc);
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::bce_with_logits(const Tensor<T>& z, const Tensor<T>& t) {
  if (!z.same_shape(t))
    throw std::invalid_argument("bce_with_logits: shape mismatch " + z.shape_str() + " vs " +
                                t.shape_str());
  Tensor<T> out(z.shape());
  const int64_t n = z.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T zi = z.ptr()[i];
    const T ti = t.ptr()[i];
    out.ptr()[i] =
        std::max(zi, T(0)) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
  }
  const bool wz = wants_grad(z), wt = wants_grad(t);
  return record("bce_with_logits", wz || wt, out, [z, t, out, wz, wt]() mutable {
    const auto& g = out.grad();
    if (wz) {
      z.ensure_grad();
      for (int64_t i = 0; i < out.numel(); ++i)
        z.grad()[i] += g[i] * (stable_sigmoid(z.ptr()[i]) - t.ptr()[i]);
    }
    if (wt) {
      t.ensure_grad();
      for (int64_t i = 0; i < out.numel(); ++i) t.grad()[i] -= g[i] * z.ptr()[i];
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b,
                           int padding) {
  if (x.rank() != 3)
    throw std::invalid_argument(dim_msg("conv2d", "input rank", x.rank(), 3));
  if (k.rank() != 4)
    throw std::invalid_argument(dim_msg("conv2d", "kernel rank", k.rank(), 4));
  if (b.rank() != 1)
    throw std::invalid_argument(dim_msg("conv2d", "bias rank", b.rank(), 1));
  if (k.dim(1) != x.dim(0))
    throw std::invalid_argument(
        dim_msg("conv2d", "kernel in-channel dim (shape[1])", k.dim(1), x.dim(0)));
  if (b.dim(0) != k.dim(0))
    throw std::invalid_argument(dim_msg("conv2d", "bias dim 0", b.dim(0), k.dim(0)));
  if (k.dim(2) % 2 == 0 || k.dim(3) % 2 == 0)
    throw std::invalid_argument("conv2d: kernel height/width must be odd, got " +
                                k.shape_str());
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");

  kernels::ConvDims d{x.dim(0), x.dim(1), x.dim(2), k.dim(0), k.dim(2), k.dim(3), padding};
  if (d.ho() < 1 || d.wo() < 1)
    throw std::invalid_argument("conv2d: kernel larger than padded input " + x.shape_str());

  Tensor<T> out({d.co, d.ho(), d.wo()});
  kernels::conv2d_forward(x.ptr(), k.ptr(), b.ptr(), out.ptr(), d);

  const bool wx = wants_grad(x), wk = wants_grad(k), wb = wants_grad(b);
  return record("conv2d", wx || wk || wb, out, [x, k, b, out, d, wx, wk, wb]() mutable {
    const T* g = out.grad().data();
    if (wx) {
      x.ensure_grad();
      kernels::conv2d_backward_input(g, k.ptr(), x.grad().data(), d);
    }
    if (wk) {
      k.ensure_grad();
      kernels::conv2d_backward_kernel(g, x.ptr(), k.grad().data(), d);
    }
    if (wb) {
      b.ensure_grad();
      kernels::conv2d_backward_bias(g, b.grad().data(), d);
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3)
    throw std::invalid_argument("concat_channels: inputs must be rank 3");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: spatial mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  const int ca = a.dim(0), cb = b.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor<T> out({ca + cb, h, w});
  std::memcpy(out.ptr(), a.ptr(), sizeof(T) * a.numel());
  std::memcpy(out.ptr() + a.numel(), b.ptr(), sizeof(T) * b.numel());
  const bool wa = wants_grad(a), wb = wants_grad(b);
  return record("concat_channels", wa || wb, out, [a, b, out, wa, wb]() mutable {
    const auto& g = out.grad();
    if (wa) {
      a.ensure_grad();
      for (int64_t i = 0; i < a.numel(); ++i) a.grad()[i] += g[i];
    }
    if (wb) {
      b.ensure_grad();
      const int64_t off = a.numel();
      for (int64_t i = 0; i < b.numel(); ++i) b.grad()[i] += g[off + i];
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::avgpool2(const Tensor<T>& a) {
  if (a.rank() != 3) throw std::invalid_argument("avgpool2: input must be rank 3");
  if (a.dim(1) % 2 != 0 || a.dim(2) % 2 != 0)
    throw std::invalid_argument("avgpool2: spatial dims must be even, got " + a.shape_str());
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor<T> out({c, h / 2, w / 2});
  kernels::avgpool2_forward(a.ptr(), out.ptr(), c, h, w);
  const bool wa = wants_grad(a);
  return record("avgpool2", wa, out, [a, out, c, h, w, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    kernels::avgpool2_backward(out.grad().data(), a.grad().data(), c, h, w);
  });
}

template <typename T>
Tensor<T> Graph<T>::upsample2(const Tensor<T>& a) {
  if (a.rank() != 3) throw std::invalid_argument("upsample2: input must be rank 3");
  const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor<T> out({c, 2 * h, 2 * w});
  kernels::upsample2_forward(a.ptr(), out.ptr(), c, h, w);
  const bool wa = wants_grad(a);
  return record("upsample2", wa, out, [a, out, c, h, w, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    kernels::upsample2_backward(out.grad().data(), a.grad().data(), c, h, w);
  });
}

template <typename T>
Tensor<T> Graph<T>::mean_stack(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_stack: empty input list");
  for (size_t i = 1; i < xs.size(); ++i)
    if (!xs[i].same_shape(xs[0]))
      throw std::invalid_argument("mean_stack: shape mismatch at index " + std::to_string(i) +
                                  ": " + xs[i].shape_str() + " vs " + xs[0].shape_str());
  const int n = static_cast<int>(xs.size());
  Tensor<T> out(xs[0].shape());
  const int64_t m = out.numel();
  std::vector<T> buf(n);
  std::vector<const T*> ptrs(n);
  for (int j = 0; j < n; ++j) ptrs[j] = xs[j].ptr();
  for (int64_t i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) buf[j] = ptrs[j][i];
    sort_canonical(buf.data(), n);
    Acc<T> s = 0;
    for (int j = 0; j < n; ++j) s += static_cast<Acc<T>>(buf[j]);
    out.ptr()[i] = static_cast<T>(s / static_cast<Acc<T>>(n));
  }
  bool any = false;
  std::vector<char> want(n);
  for (int j = 0; j < n; ++j) {
    want[j] = wants_grad(xs[j]);
    any = any || want[j];
  }
  auto inputs = xs;
  return record("mean_stack", any, out, [inputs, out, want, n]() mutable {
    const auto& g = out.grad();
    const T invn = T(1) / static_cast<T>(n);
    for (int j = 0; j < n; ++j) {
      if (!want[j]) continue;
      inputs[j].ensure_grad();
      auto& gj = inputs[j].grad();
      for (int64_t i = 0; i < out.numel(); ++i) gj[i] += g[i] * invn;
    }
  });
}

template <typename T>
Tensor<T> Graph<T>::mean_reduce(const Tensor<T>& a) {
  if (!a.defined() || a.numel() < 1)
    throw std::invalid_argument("mean_reduce: empty tensor");
  const int64_t n = a.numel();
  Acc<T> s = 0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<Acc<T>>(a.ptr()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / static_cast<Acc<T>>(n)));
  const bool wa = wants_grad(a);
  return record("mean_reduce", wa, out, [a, out, n, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    const T share = out.grad()[0] / static_cast<T>(n);
    for (int64_t i = 0; i < n; ++i) a.grad()[i] += share;
  });
}

template <typename T>
Tensor<T> Graph<T>::sum_reduce(const Tensor<T>& a) {
  if (!a.defined() || a.numel() < 1)
    throw std::invalid_argument("sum_reduce: empty tensor");
  const int64_t n = a.numel();
  Acc<T> s = 0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<Acc<T>>(a.ptr()[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  const bool wa = wants_grad(a);
  return record("sum_reduce", wa, out, [a, out, n, wa]() mutable {
    if (!wa) return;
    a.ensure_grad();
    const T g = out.grad()[0];
    for (int64_t i = 0; i < n; ++i) a.grad()[i] += g;
  });
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss tensor");
  auto it = produced_.find(loss.storage_id());
  if (it == produced_.end())
    throw std::invalid_argument("backward: loss was not produced by this graph");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                loss.shape_str());
  Tensor<T> l = loss;
  l.ensure_grad();
  l.grad()[0] += T(1);
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& nd = nodes_[i];
    if (!nd.needs_grad || !nd.out.has_grad()) continue;
    nd.back();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace ccv
