#pragma once

#include <cstdint>

namespace ccv::kernels {

// Global switch between the OpenMP kernels and the serial reference path.
// Both paths drive the same row-level helpers, so results are bit-identical;
// the serial implementations are kept as the reference the tests and the
// benchmark compare against.
void set_parallel(bool enabled);
bool parallel_enabled();

// Convolution dims: input [Ci,H,W], kernel [Co,Ci,kh,kw], bias [Co],
// output [Co,Ho,Wo] with Ho = H + 2*pad - kh + 1, Wo likewise.
struct ConvDims {
  int ci, h, w;
  int co, kh, kw;
  int pad;
  int ho() const { return h + 2 * pad - kh + 1; }
  int wo() const { return w + 2 * pad - kw + 1; }
};

template <typename T>
void conv2d_forward(const T* x, const T* k, const T* b, T* out, const ConvDims& d);
template <typename T>
void conv2d_forward_serial(const T* x, const T* k, const T* b, T* out, const ConvDims& d);

// Backward kernels accumulate (+=) into their destination buffers.
template <typename T>
void conv2d_backward_input(const T* gout, const T* k, T* gx, const ConvDims& d);
template <typename T>
void conv2d_backward_input_serial(const T* gout, const T* k, T* gx, const ConvDims& d);

template <typename T>
void conv2d_backward_kernel(const T* gout, const T* x, T* gk, const ConvDims& d);
template <typename T>
void conv2d_backward_kernel_serial(const T* gout, const T* x, T* gk, const ConvDims& d);

template <typename T>
void conv2d_backward_bias(const T* gout, T* gb, const ConvDims& d);
template <typename T>
void conv2d_backward_bias_serial(const T* gout, T* gb, const ConvDims& d);

// 2x average pooling, input [C,H,W] with even H,W, output [C,H/2,W/2].
template <typename T>
void avgpool2_forward(const T* x, T* out, int c, int h, int w);
template <typename T>
void avgpool2_backward(const T* gout, T* gx, int c, int h, int w);

// 2x nearest-neighbour upsampling, input [C,H,W], output [C,2H,2W].
template <typename T>
void upsample2_forward(const T* x, T* out, int c, int h, int w);
template <typename T>
void upsample2_backward(const T* gout, T* gx, int c, int h, int w);

}  // namespace ccv::kernels
