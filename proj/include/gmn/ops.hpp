#pragma once

// Differentiable operations on a Tape. Shapes are checked on entry and a
// ShapeError names the op and the offending shapes.
//
// Layout conventions: vectors are [d], matrices are row-major [rows, cols],
// feature maps are [channels, height, width].

#include <cstdint>
#include <span>
#include <type_traits>

#include "gmn/tape.hpp"

namespace gmn::ad {

template <typename T> Var add(Tape<T>& tape, Var a, Var b);
template <typename T> Var sub(Tape<T>& tape, Var a, Var b);
template <typename T> Var mul(Tape<T>& tape, Var a, Var b);
template <typename T> Var scale(Tape<T>& tape, Var a, T factor);
// Sum of all entries, shape [1].
template <typename T> Var sum(Tape<T>& tape, Var a);
template <typename T> Var add_scalar(Tape<T>& tape, Var a, Var scalar);

template <typename T> Var reshape(Tape<T>& tape, Var a, Shape shape);
// Flattened concatenation of any tensors, result [sum of sizes].
template <typename T> Var concat(Tape<T>& tape, std::span<const Var> parts);
// Flattened entries [begin, end).
template <typename T> Var slice(Tape<T>& tape, Var a, int begin, int end);
template <typename T> Var slice_rows(Tape<T>& tape, Var m, int begin, int end);
// [n, d] on top of [m, d]; b may also be a single row [d].
template <typename T> Var concat_rows(Tape<T>& tape, Var a, Var b);
// m[n, d] + v[d] on every row.
template <typename T> Var add_row(Tape<T>& tape, Var m, Var v);

// w[o, i] x[i]
template <typename T> Var matvec(Tape<T>& tape, Var w, Var x);
// w[o, i] x[i] + b[o]; b may be an invalid Var.
template <typename T> Var affine(Tape<T>& tape, Var w, Var b, Var x);
// Row-wise affine map: x[n, i] -> [n, o].
template <typename T> Var affine_rows(Tape<T>& tape, Var w, Var b, Var x);

// Parametric ReLU. The slope runs along the channel axis: the last axis of
// vectors and matrices, the first axis of [c, h, w] maps. A one-element
// slope is broadcast.
template <typename T> Var prelu(Tape<T>& tape, Var x, Var slope);
// Softmax over all entries, max-shifted.
template <typename T> Var softmax(Tape<T>& tape, Var logits);
// sum_t a[t] m[t, :]
template <typename T> Var weighted_rows(Tape<T>& tape, Var weights, Var m);
// GRU update from precomputed gate pre-activations gx = Wx x + bx and
// gh = Wh h + bh, both laid out [update | reset | candidate].
template <typename T> Var gru_cell(Tape<T>& tape, Var gx, Var gh, Var h);

struct Conv2dOptions {
  int stride = 1;
  int pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;
};
// x[c, h, w], w[f, c, kh, kw], b[f] or invalid.
template <typename T> Var conv2d(Tape<T>& tape, Var x, Var w, Var b, Conv2dOptions options);
// x[c, h, w], w[c, f, kh, kw]; output side (h - 1) * stride + kh.
template <typename T> Var conv_transpose2d(Tape<T>& tape, Var x, Var w, Var b, int stride);
template <typename T> Var avg_pool2d(Tape<T>& tape, Var x, int kernel, int stride);
// Half-pixel bilinear resampling of each channel.
template <typename T> Var resize_bilinear(Tape<T>& tape, Var x, int out_h, int out_w);
// [c, h, w] -> [h, w]
template <typename T> Var sum_channels(Tape<T>& tape, Var x);

template <typename T> Var clamp(Tape<T>& tape, Var x, T lo, T hi);
// sum_p x_p log sigmoid(l_p) + (1 - x_p) log(1 - sigmoid(l_p)), in logit form.
template <typename T>
Var bernoulli_loglik(Tape<T>& tape, Var logits, std::span<const std::uint8_t> target);
// KL(N(mq, e^lvq) || N(mp, e^lvp)) for diagonal Gaussians, shape [1].
template <typename T> Var gaussian_kl(Tape<T>& tape, Var mq, Var lvq, Var mp, Var lvp);
template <typename T> Var gaussian_logpdf(Tape<T>& tape, Var z, Var mean, Var logvar);
// mean + exp(logvar / 2) * eps with eps held fixed.
template <typename T>
Var reparameterize(Tape<T>& tape, Var mean, Var logvar, std::span<const std::type_identity_t<T>> eps);

}  // namespace gmn::ad
