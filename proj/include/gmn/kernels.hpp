#pragma once

// Dense kernels behind the autodiff ops. Every kernel exists twice:
//   serial::  straightforward loops, kept as the reference for tests
//   omp::     OpenMP-parallel versions used by the model
// The omp kernels give each output element to exactly one thread with a
// fixed accumulation order, so results do not depend on the thread count.

#include <span>

namespace gmn::kernels {

// Geometry of a 2-d convolution (cross-correlation) over CHW tensors.
// Output size is (in + pad_top + pad_bottom - kernel) / stride + 1; the
// caller fills out_h/out_w consistently, see conv_output_side().
struct ConvGeometry {
  int in_channels = 1, in_h = 1, in_w = 1;
  int out_channels = 1, out_h = 1, out_w = 1;
  int kernel_h = 1, kernel_w = 1;
  int stride = 1;
  int pad_top = 0, pad_left = 0;

  int in_size() const { return in_channels * in_h * in_w; }
  int out_size() const { return out_channels * out_h * out_w; }
  int weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
};

constexpr int conv_output_side(int in, int kernel, int stride, int pad_total) {
  return (in + pad_total - kernel) / stride + 1;
}

constexpr int conv_transpose_output_side(int in, int kernel, int stride) {
  return (in - 1) * stride + kernel;
}

namespace serial {

// y[o] (+)= sum_i w[o, i] x[i]
template <typename T>
void gemv(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y,
          bool accumulate);

// x_grad[i] += sum_o w[o, i] g[o]
template <typename T>
void gemv_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> g,
                         std::span<T> x_grad);

// w_grad[o, i] += g[o] x[i]
template <typename T>
void outer_acc(int rows, int cols, std::span<const T> g, std::span<const T> x, std::span<T> w_grad);

// y = conv(x, w) + b, b may be empty. Weights are [out, in, kh, kw].
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);

// dx += conv^T(dy)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);

// dw += x (*) dy, db += sum(dy); db may be empty.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> db);

}  // namespace serial

namespace omp {

// y[o] (+)= sum_i w[o, i] x[i]
template <typename T>
void gemv(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y,
          bool accumulate);

// x_grad[i] += sum_o w[o, i] g[o]
template <typename T>
void gemv_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> g,
                         std::span<T> x_grad);

// w_grad[o, i] += g[o] x[i]
template <typename T>
void outer_acc(int rows, int cols, std::span<const T> g, std::span<const T> x, std::span<T> w_grad);

// y = conv(x, w) + b, b may be empty. Weights are [out, in, kh, kw].
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);

// dx += conv^T(dy)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);

// dw += x (*) dy, db += sum(dy); db may be empty.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> db);

}  // namespace omp

}  // namespace gmn::kernels
