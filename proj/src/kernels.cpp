#include "ccv/kernels.hpp"

#include <algorithm>
#include <vector>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ccv::kernels {

namespace {

std::atomic<bool> g_parallel{true};

bool use_omp() {
#ifdef _OPENMP
  // Nested use (e.g. inside a parallel evaluation loop) falls back to the
  // serial path; results are identical either way.
  return g_parallel.load(std::memory_order_relaxed) && !omp_in_parallel();
#else
  return false;
#endif
}

// The row/slice bodies below are the unit of work shared by the serial and
// the OpenMP paths. They are kept out-of-line so both paths run one and the
// same code generation and therefore produce bit-identical floating point
// results at any thread count.
template <typename T>
inline void axpy(int n, T a, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// Fused three-tap row update: y[i] += a0*x[i] + a1*x[i+1] + a2*x[i+2].
template <typename T>
inline void axpy3(int n, T a0, T a1, T a2, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += a0 * x[i] + a1 * x[i + 1] + a2 * x[i + 2];
}

template <typename T>
inline T dot(int n, const T* a, const T* b) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Fused three-tap correlation of one row against three shifts of another.
template <typename T>
inline void dot3(int n, const T* g, const T* x, T* acc) {
  T s0 = T(0), s1 = T(0), s2 = T(0);
  for (int i = 0; i < n; ++i) {
    s0 += g[i] * x[i];
    s1 += g[i] * x[i + 1];
    s2 += g[i] * x[i + 2];
  }
  acc[0] += s0;
  acc[1] += s1;
  acc[2] += s2;
}

template <typename T>
inline T row_sum(int n, const T* a) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += a[i];
  return s;
}

// One output row (co, oy) of the cross-correlation.
template <typename T>
[[gnu::noinline]] void conv_out_row(const T* x, const T* k, const T* b, T* out,
                                    const ConvDims& d, int co, int oy) {
  const int wo = d.wo();
  T* orow = out + (static_cast<int64_t>(co) * d.ho() + oy) * wo;
  std::fill(orow, orow + wo, b[co]);
  // Columns where every kx tap stays in bounds; taps there are fused.
  const int fuse_lo = std::max(0, d.pad);
  const int fuse_hi = std::min(wo - 1, d.w - 1 + d.pad - (d.kw - 1));
  for (int ci = 0; ci < d.ci; ++ci) {
    for (int ky = 0; ky < d.kh; ++ky) {
      const int iy = oy + ky - d.pad;
      if (iy < 0 || iy >= d.h) continue;
      const T* xrow = x + (static_cast<int64_t>(ci) * d.h + iy) * d.w;
      const T* krow = k + ((static_cast<int64_t>(co) * d.ci + ci) * d.kh + ky) * d.kw;
      if (d.kw == 3 && fuse_hi >= fuse_lo) {
        axpy3(fuse_hi - fuse_lo + 1, krow[0], krow[1], krow[2], xrow + fuse_lo - d.pad,
              orow + fuse_lo);
        for (int kx = 0; kx < 3; ++kx) {
          const int lo = std::max(0, d.pad - kx);
          const int hi = std::min(wo - 1, d.w - 1 + d.pad - kx);
          if (lo < fuse_lo)
            axpy(std::min(hi, fuse_lo - 1) - lo + 1, krow[kx], xrow + lo + kx - d.pad,
                 orow + lo);
          if (hi > fuse_hi)
            axpy(hi - std::max(lo, fuse_hi + 1) + 1, krow[kx],
                 xrow + std::max(lo, fuse_hi + 1) + kx - d.pad, orow + std::max(lo, fuse_hi + 1));
        }
        continue;
      }
      for (int kx = 0; kx < d.kw; ++kx) {
        const int lo = std::max(0, d.pad - kx);
        const int hi = std::min(wo - 1, d.w - 1 + d.pad - kx);
        if (hi < lo) continue;
        axpy(hi - lo + 1, krow[kx], xrow + lo + kx - d.pad, orow + lo);
      }
    }
  }
}

// One input-gradient row (ci, iy); gathers from all output positions that
// read this row, so each element is written by exactly one task.
template <typename T>
[[gnu::noinline]] void conv_gx_row(const T* gout, const T* k, T* gx, const ConvDims& d,
                                   int ci, int iy) {
  const int ho = d.ho(), wo = d.wo();
  T* grow = gx + (static_cast<int64_t>(ci) * d.h + iy) * d.w;
  // ix = ox + kx - pad  =>  ox = ix - kx + pad
  const int fuse_lo = std::max(0, (d.kw - 1) - d.pad);
  const int fuse_hi = std::min(d.w - 1, wo - 1 - d.pad);
  for (int co = 0; co < d.co; ++co) {
    for (int ky = 0; ky < d.kh; ++ky) {
      const int oy = iy - ky + d.pad;
      if (oy < 0 || oy >= ho) continue;
      const T* gorow = gout + (static_cast<int64_t>(co) * ho + oy) * wo;
      const T* krow = k + ((static_cast<int64_t>(co) * d.ci + ci) * d.kh + ky) * d.kw;
      if (d.kw == 3 && fuse_hi >= fuse_lo) {
        axpy3(fuse_hi - fuse_lo + 1, krow[2], krow[1], krow[0],
              gorow + fuse_lo + d.pad - 2, grow + fuse_lo);
        for (int kx = 0; kx < 3; ++kx) {
          const int lo = std::max(0, kx - d.pad);
          const int hi = std::min(d.w - 1, wo - 1 + kx - d.pad);
          if (lo < fuse_lo)
            axpy(std::min(hi, fuse_lo - 1) - lo + 1, krow[kx], gorow + lo - kx + d.pad,
                 grow + lo);
          if (hi > fuse_hi)
            axpy(hi - std::max(lo, fuse_hi + 1) + 1, krow[kx],
                 gorow + std::max(lo, fuse_hi + 1) - kx + d.pad, grow + std::max(lo, fuse_hi + 1));
        }
        continue;
      }
      for (int kx = 0; kx < d.kw; ++kx) {
        const int lo = std::max(0, kx - d.pad);
        const int hi = std::min(d.w - 1, wo - 1 + kx - d.pad);
        if (hi < lo) continue;
        axpy(hi - lo + 1, krow[kx], gorow + lo - kx + d.pad, grow + lo);
      }
    }
  }
}

// Gradient of one kernel slice (co, ci). Output rows are walked once and
// reused for all kh*kw taps to stay in cache.
template <typename T>
[[gnu::noinline]] void conv_gk_slice(const T* gout, const T* x, T* gk, const ConvDims& d,
                                     int co, int ci) {
  const int ho = d.ho(), wo = d.wo();
  T* kslice = gk + (static_cast<int64_t>(co) * d.ci + ci) * d.kh * d.kw;
  std::vector<T> acc(static_cast<size_t>(d.kh) * d.kw, T(0));
  for (int oy = 0; oy < ho; ++oy) {
    const T* grow = gout + (static_cast<int64_t>(co) * ho + oy) * wo;
    for (int ky = 0; ky < d.kh; ++ky) {
      const int iy = oy + ky - d.pad;
      if (iy < 0 || iy >= d.h) continue;
      const T* xrow = x + (static_cast<int64_t>(ci) * d.h + iy) * d.w;
      for (int kx = 0; kx < d.kw; ++kx) {
        const int lo = std::max(0, d.pad - kx);
        const int hi = std::min(wo - 1, d.w - 1 + d.pad - kx);
        if (hi < lo) continue;
        acc[ky * d.kw + kx] += dot(hi - lo + 1, grow + lo, xrow + lo + kx - d.pad);
      }
    }
  }
  for (int i = 0; i < d.kh * d.kw; ++i) kslice[i] += acc[i];
}

}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

template <typename T>
void conv2d_forward_serial(const T* x, const T* k, const T* b, T* out, const ConvDims& d) {
  const int ho = d.ho();
  for (int co = 0; co < d.co; ++co)
    for (int oy = 0; oy < ho; ++oy) conv_out_row(x, k, b, out, d, co, oy);
}

template <typename T>
void conv2d_forward(const T* x, const T* k, const T* b, T* out, const ConvDims& d) {
  if (!use_omp()) {
    conv2d_forward_serial(x, k, b, out, d);
    return;
  }
  const int ho = d.ho();
  const int tasks = d.co * ho;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < tasks; ++t) conv_out_row(x, k, b, out, d, t / ho, t % ho);
}

template <typename T>
void conv2d_backward_input_serial(const T* gout, const T* k, T* gx, const ConvDims& d) {
  for (int ci = 0; ci < d.ci; ++ci)
    for (int iy = 0; iy < d.h; ++iy) conv_gx_row(gout, k, gx, d, ci, iy);
}

template <typename T>
void conv2d_backward_input(const T* gout, const T* k, T* gx, const ConvDims& d) {
  if (!use_omp()) {
    conv2d_backward_input_serial(gout, k, gx, d);
    return;
  }
  const int tasks = d.ci * d.h;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < tasks; ++t) conv_gx_row(gout, k, gx, d, t / d.h, t % d.h);
}

template <typename T>
void conv2d_backward_kernel_serial(const T* gout, const T* x, T* gk, const ConvDims& d) {
  for (int co = 0; co < d.co; ++co)
    for (int ci = 0; ci < d.ci; ++ci) conv_gk_slice(gout, x, gk, d, co, ci);
}

template <typename T>
void conv2d_backward_kernel(const T* gout, const T* x, T* gk, const ConvDims& d) {
  if (!use_omp()) {
    conv2d_backward_kernel_serial(gout, x, gk, d);
    return;
  }
  const int tasks = d.co * d.ci;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < tasks; ++t) conv_gk_slice(gout, x, gk, d, t / d.ci, t % d.ci);
}

template <typename T>
void conv2d_backward_bias_serial(const T* gout, T* gb, const ConvDims& d) {
  const int ho = d.ho(), wo = d.wo();
  for (int co = 0; co < d.co; ++co) {
    T acc = T(0);
    for (int oy = 0; oy < ho; ++oy)
      acc += row_sum(wo, gout + (static_cast<int64_t>(co) * ho + oy) * wo);
    gb[co] += acc;
  }
}

template <typename T>
void conv2d_backward_bias(const T* gout, T* gb, const ConvDims& d) {
  if (!use_omp()) {
    conv2d_backward_bias_serial(gout, gb, d);
    return;
  }
  const int ho = d.ho(), wo = d.wo();
#pragma omp parallel for schedule(static)
  for (int co = 0; co < d.co; ++co) {
    T acc = T(0);
    for (int oy = 0; oy < ho; ++oy)
      acc += row_sum(wo, gout + (static_cast<int64_t>(co) * ho + oy) * wo);
    gb[co] += acc;
  }
}

template <typename T>
void avgpool2_forward(const T* x, T* out, int c, int h, int w) {
  const int hh = h / 2, ww = w / 2;
  const T quarter = T(0.25);
  auto body = [&](int ch) {
    const T* xc = x + static_cast<int64_t>(ch) * h * w;
    T* oc = out + static_cast<int64_t>(ch) * hh * ww;
    for (int y = 0; y < hh; ++y)
      for (int xi = 0; xi < ww; ++xi) {
        const T* p = xc + (2 * y) * w + 2 * xi;
        oc[y * ww + xi] = (p[0] + p[1] + p[w] + p[w + 1]) * quarter;
      }
  };
  if (use_omp()) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) body(ch);
  } else {
    for (int ch = 0; ch < c; ++ch) body(ch);
  }
}

template <typename T>
void avgpool2_backward(const T* gout, T* gx, int c, int h, int w) {
  const int hh = h / 2, ww = w / 2;
  const T quarter = T(0.25);
  for (int ch = 0; ch < c; ++ch) {
    const T* gc = gout + static_cast<int64_t>(ch) * hh * ww;
    T* xc = gx + static_cast<int64_t>(ch) * h * w;
    for (int y = 0; y < hh; ++y)
      for (int xi = 0; xi < ww; ++xi) {
        const T g = gc[y * ww + xi] * quarter;
        T* p = xc + (2 * y) * w + 2 * xi;
        p[0] += g;
        p[1] += g;
        p[w] += g;
        p[w + 1] += g;
      }
  }
}

template <typename T>
void upsample2_forward(const T* x, T* out, int c, int h, int w) {
  const int h2 = 2 * h, w2 = 2 * w;
  auto body = [&](int ch) {
    const T* xc = x + static_cast<int64_t>(ch) * h * w;
    T* oc = out + static_cast<int64_t>(ch) * h2 * w2;
    for (int y = 0; y < h2; ++y) {
      const T* xrow = xc + (y / 2) * w;
      T* orow = oc + y * w2;
      for (int xi = 0; xi < w2; ++xi) orow[xi] = xrow[xi / 2];
    }
  };
  if (use_omp()) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) body(ch);
  } else {
    for (int ch = 0; ch < c; ++ch) body(ch);
  }
}

template <typename T>
void upsample2_backward(const T* gout, T* gx, int c, int h, int w) {
  const int h2 = 2 * h, w2 = 2 * w;
  for (int ch = 0; ch < c; ++ch) {
    const T* gc = gout + static_cast<int64_t>(ch) * h2 * w2;
    T* xc = gx + static_cast<int64_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int xi = 0; xi < w; ++xi) {
        const T* g0 = gc + (2 * y) * w2 + 2 * xi;
        const T* g1 = g0 + w2;
        xc[y * w + xi] += (g0[0] + g0[1]) + (g1[0] + g1[1]);
      }
  }
}

#define CCV_INSTANTIATE_KERNELS(T)                                                      \
  template void conv2d_forward<T>(const T*, const T*, const T*, T*, const ConvDims&);  \
  template void conv2d_forward_serial<T>(const T*, const T*, const T*, T*,             \
                                         const ConvDims&);                             \
  template void conv2d_backward_input<T>(const T*, const T*, T*, const ConvDims&);     \
  template void conv2d_backward_input_serial<T>(const T*, const T*, T*,                \
                                                const ConvDims&);                      \
  template void conv2d_backward_kernel<T>(const T*, const T*, T*, const ConvDims&);    \
  template void conv2d_backward_kernel_serial<T>(const T*, const T*, T*,               \
                                                 const ConvDims&);                     \
  template void conv2d_backward_bias<T>(const T*, T*, const ConvDims&);                \
  template void conv2d_backward_bias_serial<T>(const T*, T*, const ConvDims&);         \
  template void avgpool2_forward<T>(const T*, T*, int, int, int);                      \
  template void avgpool2_backward<T>(const T*, T*, int, int, int);                     \
  template void upsample2_forward<T>(const T*, T*, int, int, int);                     \
  template void upsample2_backward<T>(const T*, T*, int, int, int);

CCV_INSTANTIATE_KERNELS(float)
CCV_INSTANTIATE_KERNELS(double)

#undef CCV_INSTANTIATE_KERNELS

}  // namespace ccv::kernels
