#include "gmn/kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace gmn::kernels {

namespace {

// Work below this many multiply-adds stays on the calling thread.
constexpr long kParallelThreshold = 1L << 15;

// Output indices o with 0 <= o*stride - pad + k < extent, as a half-open range.
struct ValidRange {
  int begin, end;
};

ValidRange valid_outputs(int out_extent, int in_extent, int stride, int pad, int k) {
  // smallest o with o*stride >= pad - k
  int lo = pad - k;
  int begin = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  // largest o with o*stride <= in_extent - 1 + pad - k
  int hi = in_extent - 1 + pad - k;
  int end = hi < 0 ? 0 : hi / stride + 1;
  return {std::min(begin, out_extent), std::clamp(end, 0, out_extent)};
}

}  // namespace

namespace serial {

template <typename T>
void gemv(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y,
          bool accumulate) {
  for (int o = 0; o < rows; ++o) {
    T acc = accumulate ? y[o] : T(0);
    for (int i = 0; i < cols; ++i) acc += w[std::size_t(o) * cols + i] * x[i];
    y[o] = acc;
  }
}

template <typename T>
void gemv_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> g,
                         std::span<T> x_grad) {
  for (int o = 0; o < rows; ++o)
    for (int i = 0; i < cols; ++i) x_grad[i] += w[std::size_t(o) * cols + i] * g[o];
}

template <typename T>
void outer_acc(int rows, int cols, std::span<const T> g, std::span<const T> x, std::span<T> w_grad) {
  for (int o = 0; o < rows; ++o)
    for (int i = 0; i < cols; ++i) w_grad[std::size_t(o) * cols + i] += g[o] * x[i];
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  for (int f = 0; f < g.out_channels; ++f)
    for (int oi = 0; oi < g.out_h; ++oi)
      for (int oj = 0; oj < g.out_w; ++oj) {
        T acc = b.empty() ? T(0) : b[f];
        for (int c = 0; c < g.in_channels; ++c)
          for (int ki = 0; ki < g.kernel_h; ++ki)
            for (int kj = 0; kj < g.kernel_w; ++kj) {
              int ii = oi * g.stride - g.pad_top + ki;
              int jj = oj * g.stride - g.pad_left + kj;
              if (ii < 0 || ii >= g.in_h || jj < 0 || jj >= g.in_w) continue;
              acc += w[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] *
                     x[(c * g.in_h + ii) * g.in_w + jj];
            }
        y[(f * g.out_h + oi) * g.out_w + oj] = acc;
      }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  for (int f = 0; f < g.out_channels; ++f)
    for (int oi = 0; oi < g.out_h; ++oi)
      for (int oj = 0; oj < g.out_w; ++oj) {
        T grad = dy[(f * g.out_h + oi) * g.out_w + oj];
        for (int c = 0; c < g.in_channels; ++c)
          for (int ki = 0; ki < g.kernel_h; ++ki)
            for (int kj = 0; kj < g.kernel_w; ++kj) {
              int ii = oi * g.stride - g.pad_top + ki;
              int jj = oj * g.stride - g.pad_left + kj;
              if (ii < 0 || ii >= g.in_h || jj < 0 || jj >= g.in_w) continue;
              dx[(c * g.in_h + ii) * g.in_w + jj] +=
                  w[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] * grad;
            }
      }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> db) {
  for (int f = 0; f < g.out_channels; ++f)
    for (int oi = 0; oi < g.out_h; ++oi)
      for (int oj = 0; oj < g.out_w; ++oj) {
        T grad = dy[(f * g.out_h + oi) * g.out_w + oj];
        if (!db.empty()) db[f] += grad;
        for (int c = 0; c < g.in_channels; ++c)
          for (int ki = 0; ki < g.kernel_h; ++ki)
            for (int kj = 0; kj < g.kernel_w; ++kj) {
              int ii = oi * g.stride - g.pad_top + ki;
              int jj = oj * g.stride - g.pad_left + kj;
              if (ii < 0 || ii >= g.in_h || jj < 0 || jj >= g.in_w) continue;
              dw[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] +=
                  grad * x[(c * g.in_h + ii) * g.in_w + jj];
            }
      }
}

}  // namespace serial

namespace omp {

template <typename T>
void gemv(int rows, int cols, std::span<const T> w, std::span<const T> x, std::span<T> y,
          bool accumulate) {
  const T* wp = w.data();
  const T* xp = x.data();
#pragma omp parallel for schedule(static) if (long(rows) * cols > kParallelThreshold)
  for (int o = 0; o < rows; ++o) {
    const T* row = wp + std::size_t(o) * cols;
    T acc = 0;
#pragma omp simd reduction(+ : acc)
    for (int i = 0; i < cols; ++i) acc += row[i] * xp[i];
    y[o] = accumulate ? y[o] + acc : acc;
  }
}

template <typename T>
void gemv_transposed_acc(int rows, int cols, std::span<const T> w, std::span<const T> g,
                         std::span<T> x_grad) {
  constexpr int kBlock = 64;
  const int blocks = (cols + kBlock - 1) / kBlock;
  const T* wp = w.data();
  T* xg = x_grad.data();
#pragma omp parallel for schedule(static) if (long(rows) * cols > kParallelThreshold)
  for (int blk = 0; blk < blocks; ++blk) {
    const int i0 = blk * kBlock;
    const int i1 = std::min(cols, i0 + kBlock);
    for (int o = 0; o < rows; ++o) {
      const T go = g[o];
      const T* row = wp + std::size_t(o) * cols;
#pragma omp simd
      for (int i = i0; i < i1; ++i) xg[i] += row[i] * go;
    }
  }
}

template <typename T>
void outer_acc(int rows, int cols, std::span<const T> g, std::span<const T> x, std::span<T> w_grad) {
  const T* xp = x.data();
  T* wg = w_grad.data();
#pragma omp parallel for schedule(static) if (long(rows) * cols > kParallelThreshold)
  for (int o = 0; o < rows; ++o) {
    const T go = g[o];
    T* row = wg + std::size_t(o) * cols;
#pragma omp simd
    for (int i = 0; i < cols; ++i) row[i] += go * xp[i];
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  const int plane = g.out_h * g.out_w;
  const long work = long(g.weight_size()) * plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (int f = 0; f < g.out_channels; ++f) {
    T* yf = y.data() + std::size_t(f) * plane;
    std::fill(yf, yf + plane, b.empty() ? T(0) : b[f]);
    for (int c = 0; c < g.in_channels; ++c) {
      const T* xc = x.data() + std::size_t(c) * g.in_h * g.in_w;
      for (int ki = 0; ki < g.kernel_h; ++ki) {
        const ValidRange rows = valid_outputs(g.out_h, g.in_h, g.stride, g.pad_top, ki);
        for (int kj = 0; kj < g.kernel_w; ++kj) {
          const ValidRange cols = valid_outputs(g.out_w, g.in_w, g.stride, g.pad_left, kj);
          const T wv = w[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
          for (int oi = rows.begin; oi < rows.end; ++oi) {
            const T* xrow = xc + (oi * g.stride - g.pad_top + ki) * g.in_w - g.pad_left + kj;
            T* yrow = yf + oi * g.out_w;
            for (int oj = cols.begin; oj < cols.end; ++oj) yrow[oj] += wv * xrow[oj * g.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const int plane = g.out_h * g.out_w;
  const long work = long(g.weight_size()) * plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (int c = 0; c < g.in_channels; ++c) {
    T* dxc = dx.data() + std::size_t(c) * g.in_h * g.in_w;
    for (int f = 0; f < g.out_channels; ++f) {
      const T* dyf = dy.data() + std::size_t(f) * plane;
      for (int ki = 0; ki < g.kernel_h; ++ki) {
        const ValidRange rows = valid_outputs(g.out_h, g.in_h, g.stride, g.pad_top, ki);
        for (int kj = 0; kj < g.kernel_w; ++kj) {
          const ValidRange cols = valid_outputs(g.out_w, g.in_w, g.stride, g.pad_left, kj);
          const T wv = w[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
          for (int oi = rows.begin; oi < rows.end; ++oi) {
            T* dxrow = dxc + (oi * g.stride - g.pad_top + ki) * g.in_w - g.pad_left + kj;
            const T* dyrow = dyf + oi * g.out_w;
            for (int oj = cols.begin; oj < cols.end; ++oj) dxrow[oj * g.stride] += wv * dyrow[oj];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw, std::span<T> db) {
  const int plane = g.out_h * g.out_w;
  const long work = long(g.weight_size()) * plane;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
  for (int f = 0; f < g.out_channels; ++f) {
    const T* dyf = dy.data() + std::size_t(f) * plane;
    if (!db.empty()) {
      T acc = 0;
      for (int p = 0; p < plane; ++p) acc += dyf[p];
      db[f] += acc;
    }
    for (int c = 0; c < g.in_channels; ++c) {
      const T* xc = x.data() + std::size_t(c) * g.in_h * g.in_w;
      for (int ki = 0; ki < g.kernel_h; ++ki) {
        const ValidRange rows = valid_outputs(g.out_h, g.in_h, g.stride, g.pad_top, ki);
        for (int kj = 0; kj < g.kernel_w; ++kj) {
          const ValidRange cols = valid_outputs(g.out_w, g.in_w, g.stride, g.pad_left, kj);
          T acc = 0;
          for (int oi = rows.begin; oi < rows.end; ++oi) {
            const T* xrow = xc + (oi * g.stride - g.pad_top + ki) * g.in_w - g.pad_left + kj;
            const T* dyrow = dyf + oi * g.out_w;
            for (int oj = cols.begin; oj < cols.end; ++oj) acc += dyrow[oj] * xrow[oj * g.stride];
          }
          dw[((f * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] += acc;
        }
      }
    }
  }
}

}  // namespace omp

#define GMN_INSTANTIATE_KERNELS(NS, T)                                                          \
  template void NS::gemv<T>(int, int, std::span<const T>, std::span<const T>, std::span<T>,    \
                            bool);                                                             \
  template void NS::gemv_transposed_acc<T>(int, int, std::span<const T>, std::span<const T>,   \
                                           std::span<T>);                                      \
  template void NS::outer_acc<T>(int, int, std::span<const T>, std::span<const T>,             \
                                 std::span<T>);                                                \
  template void NS::conv2d_forward<T>(const ConvGeometry&, std::span<const T>,                 \
                                      std::span<const T>, std::span<const T>, std::span<T>);   \
  template void NS::conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,          \
                                             std::span<const T>, std::span<T>);                \
  template void NS::conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,         \
                                              std::span<const T>, std::span<T>, std::span<T>);

GMN_INSTANTIATE_KERNELS(serial, float)
GMN_INSTANTIATE_KERNELS(serial, double)
GMN_INSTANTIATE_KERNELS(omp, float)
GMN_INSTANTIATE_KERNELS(omp, double)

#undef GMN_INSTANTIATE_KERNELS

}  // namespace gmn::kernels
