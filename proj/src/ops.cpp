#include "gmn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gmn/kernels.hpp"

namespace gmn::ad {

namespace k = gmn::kernels::omp;

namespace {

template <typename T>
bool any_grad(const Tape<T>& tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (tape.needs_grad(v)) return true;
  return false;
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

template <typename T>
void require_same_shape(const Tape<T>& tape, const char* op, Var a, Var b) {
  if (tape.shape(a) != tape.shape(b))
    shape_fail(op, to_string(tape.shape(a)) + " vs " + to_string(tape.shape(b)));
}

template <typename T>
void require_rank(const Tape<T>& tape, const char* op, Var v, std::size_t rank) {
  if (tape.shape(v).size() != rank)
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + to_string(tape.shape(v)));
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

// Channel layout for prelu: x viewed as [outer][channels][inner].
struct ChannelView {
  int outer, channels, inner;
};

ChannelView channel_view(const Shape& s) {
  switch (s.size()) {
    case 1: return {1, s[0], 1};
    case 2: return {s[0], s[1], 1};
    case 3: return {1, s[0], s[1] * s[2]};
    default: shape_fail("prelu", "unsupported rank " + to_string(s));
  }
}

struct Bilinear {
  int i0, i1;
  double frac;
};

std::vector<Bilinear> bilinear_taps(int in, int out) {
  std::vector<Bilinear> taps(out);
  const double ratio = double(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = std::max(0.0, (o + 0.5) * ratio - 0.5);
    int i0 = std::min(int(src), in - 1);
    int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, "add", a, b);
  auto av = tape.value(a), bv = tape.value(b);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.push(std::move(out), tape.shape(a), any_grad(tape, {a, b}), [a, b](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    for (Var in : {a, b}) {
      if (!t.needs_grad(in)) continue;
      auto gi = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, "sub", a, b);
  auto av = tape.value(a), bv = tape.value(b);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.push(std::move(out), tape.shape(a), any_grad(tape, {a, b}), [a, b](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    if (t.needs_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, "mul", a, b);
  auto av = tape.value(a), bv = tape.value(b);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.push(std::move(out), tape.shape(a), any_grad(tape, {a, b}), [a, b](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    auto av = t.value(a), bv = t.value(b);
    if (t.needs_grad(a)) {
      auto ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  auto av = tape.value(a);
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return tape.push(std::move(out), tape.shape(a), tape.needs_grad(a), [a, factor](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    auto ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  auto av = tape.value(a);
  T acc = 0;
  for (T v : av) acc += v;
  return tape.push({acc}, {1}, tape.needs_grad(a), [a](Tape<T>& t, int self) {
    T g = t.grad(Var{self})[0];
    for (T& gi : t.grad(a)) gi += g;
  });
}

template <typename T>
Var add_scalar(Tape<T>& tape, Var a, Var scalar) {
  if (tape.size(scalar) != 1) shape_fail("add_scalar", "scalar has shape " + to_string(tape.shape(scalar)));
  auto av = tape.value(a);
  const T s = tape.value(scalar)[0];
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  return tape.push(std::move(out), tape.shape(a), any_grad(tape, {a, scalar}),
                   [a, scalar](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     if (t.needs_grad(a)) {
                       auto ga = t.grad(a);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                     }
                     if (t.needs_grad(scalar)) {
                       T acc = 0;
                       for (T gi : g) acc += gi;
                       t.grad(scalar)[0] += acc;
                     }
                   });
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  if (shape_size(shape) != tape.size(a))
    shape_fail("reshape", to_string(tape.shape(a)) + " -> " + to_string(shape));
  auto av = tape.value(a);
  return tape.push(std::vector<T>(av.begin(), av.end()), std::move(shape), tape.needs_grad(a),
                   [a](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto ga = t.grad(a);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   });
}

template <typename T>
Var concat(Tape<T>& tape, std::span<const Var> parts) {
  std::vector<T> out;
  bool needs = false;
  for (Var p : parts) {
    auto v = tape.value(p);
    out.insert(out.end(), v.begin(), v.end());
    needs = needs || tape.needs_grad(p);
  }
  const int n = int(out.size());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.push(std::move(out), {n}, needs, [inputs](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t len = t.size(p);
      if (t.needs_grad(p)) {
        auto gp = t.grad(p);
        for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
      }
      offset += len;
    }
  });
}

template <typename T>
Var slice(Tape<T>& tape, Var a, int begin, int end) {
  if (begin < 0 || end < begin || end > tape.size(a))
    shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                            to_string(tape.shape(a)));
  auto av = tape.value(a);
  return tape.push(std::vector<T>(av.begin() + begin, av.begin() + end), {end - begin},
                   tape.needs_grad(a), [a, begin](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto ga = t.grad(a);
                     for (std::size_t i = 0; i < g.size(); ++i) ga[begin + i] += g[i];
                   });
}

template <typename T>
Var slice_rows(Tape<T>& tape, Var m, int begin, int end) {
  require_rank(tape, "slice_rows", m, 2);
  const int rows = tape.shape(m)[0], cols = tape.shape(m)[1];
  if (begin < 0 || end < begin || end > rows)
    shape_fail("slice_rows", "rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                 to_string(tape.shape(m)));
  auto mv = tape.value(m);
  std::vector<T> out(mv.begin() + std::size_t(begin) * cols, mv.begin() + std::size_t(end) * cols);
  return tape.push(std::move(out), {end - begin, cols}, tape.needs_grad(m),
                   [m, begin, cols](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto gm = t.grad(m);
                     const std::size_t off = std::size_t(begin) * cols;
                     for (std::size_t i = 0; i < g.size(); ++i) gm[off + i] += g[i];
                   });
}

template <typename T>
Var concat_rows(Tape<T>& tape, Var a, Var b) {
  require_rank(tape, "concat_rows", a, 2);
  const int cols = tape.shape(a)[1];
  const Shape& bs = tape.shape(b);
  const int b_rows = bs.size() == 1 ? 1 : bs[0];
  const int b_cols = bs.size() == 1 ? bs[0] : bs[1];
  if (b_cols != cols || bs.size() > 2)
    shape_fail("concat_rows", to_string(tape.shape(a)) + " with " + to_string(bs));
  auto av = tape.value(a), bv = tape.value(b);
  std::vector<T> out(av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  const int a_size = int(av.size());
  return tape.push(std::move(out), {tape.shape(a)[0] + b_rows, cols}, any_grad(tape, {a, b}),
                   [a, b, a_size](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     if (t.needs_grad(a)) {
                       auto ga = t.grad(a);
                       for (int i = 0; i < a_size; ++i) ga[i] += g[i];
                     }
                     if (t.needs_grad(b)) {
                       auto gb = t.grad(b);
                       for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[a_size + i];
                     }
                   });
}

template <typename T>
Var add_row(Tape<T>& tape, Var m, Var v) {
  require_rank(tape, "add_row", m, 2);
  const int rows = tape.shape(m)[0], cols = tape.shape(m)[1];
  if (tape.size(v) != cols) shape_fail("add_row", to_string(tape.shape(m)) + " + " + to_string(tape.shape(v)));
  auto mv = tape.value(m), vv = tape.value(v);
  std::vector<T> out(mv.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[r * cols + c] = mv[r * cols + c] + vv[c];
  return tape.push(std::move(out), tape.shape(m), any_grad(tape, {m, v}),
                   [m, v, rows, cols](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     if (t.needs_grad(m)) {
                       auto gm = t.grad(m);
                       for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                     }
                     if (t.needs_grad(v)) {
                       auto gv = t.grad(v);
                       for (int r = 0; r < rows; ++r)
                         for (int c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
                     }
                   });
}

template <typename T>
Var affine(Tape<T>& tape, Var w, Var b, Var x) {
  require_rank(tape, "affine", w, 2);
  const int rows = tape.shape(w)[0], cols = tape.shape(w)[1];
  if (tape.size(x) != cols)
    shape_fail("affine", "weight " + to_string(tape.shape(w)) + " applied to " + to_string(tape.shape(x)));
  if (b.valid() && tape.size(b) != rows)
    shape_fail("affine", "bias " + to_string(tape.shape(b)) + " for " + std::to_string(rows) + " outputs");
  std::vector<T> out(rows);
  if (b.valid()) {
    auto bv = tape.value(b);
    std::copy(bv.begin(), bv.end(), out.begin());
  }
  k::gemv<T>(rows, cols, tape.value(w), tape.value(x), out, b.valid());
  return tape.push(std::move(out), {rows}, any_grad(tape, {w, b, x}),
                   [w, b, x, rows, cols](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     if (t.needs_grad(x)) k::gemv_transposed_acc<T>(rows, cols, t.value(w), g, t.grad(x));
                     if (t.needs_grad(w)) k::outer_acc<T>(rows, cols, g, t.value(x), t.grad(w));
                     if (t.needs_grad(b)) {
                       auto gb = t.grad(b);
                       for (int i = 0; i < rows; ++i) gb[i] += g[i];
                     }
                   });
}

template <typename T>
Var matvec(Tape<T>& tape, Var w, Var x) {
  return affine(tape, w, Var{}, x);
}

template <typename T>
Var affine_rows(Tape<T>& tape, Var w, Var b, Var x) {
  require_rank(tape, "affine_rows", w, 2);
  require_rank(tape, "affine_rows", x, 2);
  const int out_dim = tape.shape(w)[0], in_dim = tape.shape(w)[1];
  const int n = tape.shape(x)[0];
  if (tape.shape(x)[1] != in_dim)
    shape_fail("affine_rows", "weight " + to_string(tape.shape(w)) + " applied to " + to_string(tape.shape(x)));
  if (b.valid() && tape.size(b) != out_dim) shape_fail("affine_rows", "bias " + to_string(tape.shape(b)));
  std::vector<T> out(std::size_t(n) * out_dim, T(0));
  auto xv = tape.value(x);
  for (int r = 0; r < n; ++r) {
    std::span<T> row(out.data() + std::size_t(r) * out_dim, out_dim);
    if (b.valid()) {
      auto bv = tape.value(b);
      std::copy(bv.begin(), bv.end(), row.begin());
    }
    k::gemv<T>(out_dim, in_dim, tape.value(w), xv.subspan(std::size_t(r) * in_dim, in_dim), row, b.valid());
  }
  return tape.push(std::move(out), {n, out_dim}, any_grad(tape, {w, b, x}),
                   [w, b, x, n, out_dim, in_dim](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto xv = t.value(x);
                     for (int r = 0; r < n; ++r) {
                       auto gr = g.subspan(std::size_t(r) * out_dim, out_dim);
                       if (t.needs_grad(x))
                         k::gemv_transposed_acc<T>(out_dim, in_dim, t.value(w), gr,
                                                   t.grad(x).subspan(std::size_t(r) * in_dim, in_dim));
                       if (t.needs_grad(w))
                         k::outer_acc<T>(out_dim, in_dim, gr, xv.subspan(std::size_t(r) * in_dim, in_dim),
                                         t.grad(w));
                       if (t.needs_grad(b)) {
                         auto gb = t.grad(b);
                         for (int i = 0; i < out_dim; ++i) gb[i] += gr[i];
                       }
                     }
                   });
}

template <typename T>
Var prelu(Tape<T>& tape, Var x, Var slope) {
  const ChannelView cv = channel_view(tape.shape(x));
  const int slopes = tape.size(slope);
  if (slopes != 1 && slopes != cv.channels)
    shape_fail("prelu", "slope " + to_string(tape.shape(slope)) + " for input " + to_string(tape.shape(x)));
  auto xv = tape.value(x), av = tape.value(slope);
  std::vector<T> out(xv.size());
  for (int o = 0; o < cv.outer; ++o)
    for (int c = 0; c < cv.channels; ++c) {
      const T a = av[slopes == 1 ? 0 : c];
      const std::size_t base = (std::size_t(o) * cv.channels + c) * cv.inner;
      for (int i = 0; i < cv.inner; ++i) {
        const T v = xv[base + i];
        out[base + i] = v >= 0 ? v : a * v;
      }
    }
  return tape.push(std::move(out), tape.shape(x), any_grad(tape, {x, slope}),
                   [x, slope, cv, slopes](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto xv = t.value(x), av = t.value(slope);
                     const bool gx = t.needs_grad(x), ga = t.needs_grad(slope);
                     std::span<T> dx, da;
                     if (gx) dx = t.grad(x);
                     if (ga) da = t.grad(slope);
                     for (int o = 0; o < cv.outer; ++o)
                       for (int c = 0; c < cv.channels; ++c) {
                         const int ci = slopes == 1 ? 0 : c;
                         const T a = av[ci];
                         const std::size_t base = (std::size_t(o) * cv.channels + c) * cv.inner;
                         T slope_acc = 0;
                         for (int i = 0; i < cv.inner; ++i) {
                           const T v = xv[base + i], gi = g[base + i];
                           if (v >= 0) {
                             if (gx) dx[base + i] += gi;
                           } else {
                             if (gx) dx[base + i] += a * gi;
                             slope_acc += v * gi;
                           }
                         }
                         if (ga) da[ci] += slope_acc;
                       }
                   });
}

template <typename T>
Var softmax(Tape<T>& tape, Var logits) {
  auto lv = tape.value(logits);
  if (lv.empty()) throw ContractError("softmax over an empty set");
  const T mx = *std::max_element(lv.begin(), lv.end());
  std::vector<T> out(lv.size());
  T total = 0;
  for (std::size_t i = 0; i < lv.size(); ++i) total += out[i] = std::exp(lv[i] - mx);
  for (T& v : out) v /= total;
  return tape.push(std::move(out), tape.shape(logits), tape.needs_grad(logits), [logits](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    auto y = t.value(Var{self});
    T dot = 0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += g[i] * y[i];
    auto gl = t.grad(logits);
    for (std::size_t i = 0; i < y.size(); ++i) gl[i] += y[i] * (g[i] - dot);
  });
}

template <typename T>
Var weighted_rows(Tape<T>& tape, Var weights, Var m) {
  require_rank(tape, "weighted_rows", m, 2);
  const int rows = tape.shape(m)[0], cols = tape.shape(m)[1];
  if (tape.size(weights) != rows)
    shape_fail("weighted_rows", to_string(tape.shape(weights)) + " weights for " + to_string(tape.shape(m)));
  auto av = tape.value(weights), mv = tape.value(m);
  std::vector<T> out(cols, T(0));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[c] += av[r] * mv[std::size_t(r) * cols + c];
  return tape.push(std::move(out), {cols}, any_grad(tape, {weights, m}),
                   [weights, m, rows, cols](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto av = t.value(weights), mv = t.value(m);
                     if (t.needs_grad(m)) {
                       auto gm = t.grad(m);
                       for (int r = 0; r < rows; ++r)
                         for (int c = 0; c < cols; ++c) gm[std::size_t(r) * cols + c] += av[r] * g[c];
                     }
                     if (t.needs_grad(weights)) {
                       auto ga = t.grad(weights);
                       for (int r = 0; r < rows; ++r) {
                         T acc = 0;
                         for (int c = 0; c < cols; ++c) acc += mv[std::size_t(r) * cols + c] * g[c];
                         ga[r] += acc;
                       }
                     }
                   });
}

template <typename T>
Var gru_cell(Tape<T>& tape, Var gx, Var gh, Var h) {
  const int d = tape.size(h);
  if (tape.size(gx) != 3 * d || tape.size(gh) != 3 * d)
    shape_fail("gru_cell", "gates " + to_string(tape.shape(gx)) + "/" + to_string(tape.shape(gh)) +
                               " for state " + to_string(tape.shape(h)));
  auto xv = tape.value(gx), hv = tape.value(gh), s = tape.value(h);
  std::vector<T> out(d);
  for (int i = 0; i < d; ++i) {
    const T u = sigmoid(xv[i] + hv[i]);
    const T r = sigmoid(xv[d + i] + hv[d + i]);
    const T n = std::tanh(xv[2 * d + i] + r * hv[2 * d + i]);
    out[i] = (T(1) - u) * n + u * s[i];
  }
  return tape.push(std::move(out), {d}, any_grad(tape, {gx, gh, h}), [gx, gh, h, d](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    auto xv = t.value(gx), hv = t.value(gh), s = t.value(h);
    std::vector<T> dgx(3 * d), dgh(3 * d);
    const bool need_h = t.needs_grad(h);
    std::span<T> dh;
    if (need_h) dh = t.grad(h);
    for (int i = 0; i < d; ++i) {
      const T u = sigmoid(xv[i] + hv[i]);
      const T r = sigmoid(xv[d + i] + hv[d + i]);
      const T n = std::tanh(xv[2 * d + i] + r * hv[2 * d + i]);
      if (need_h) dh[i] += g[i] * u;
      const T dn = g[i] * (T(1) - u);
      const T du = g[i] * (s[i] - n);
      const T dc = dn * (T(1) - n * n);
      const T dr = dc * hv[2 * d + i];
      const T du_pre = du * u * (T(1) - u);
      const T dr_pre = dr * r * (T(1) - r);
      dgx[i] = dgh[i] = du_pre;
      dgx[d + i] = dgh[d + i] = dr_pre;
      dgx[2 * d + i] = dc;
      dgh[2 * d + i] = dc * r;
    }
    if (t.needs_grad(gx)) {
      auto gxg = t.grad(gx);
      for (int i = 0; i < 3 * d; ++i) gxg[i] += dgx[i];
    }
    if (t.needs_grad(gh)) {
      auto ghg = t.grad(gh);
      for (int i = 0; i < 3 * d; ++i) ghg[i] += dgh[i];
    }
  });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, Conv2dOptions opt) {
  require_rank(tape, "conv2d", x, 3);
  require_rank(tape, "conv2d", w, 4);
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  if (ws[1] != xs[0]) shape_fail("conv2d", "weight " + to_string(ws) + " on input " + to_string(xs));
  if (b.valid() && tape.size(b) != ws[0]) shape_fail("conv2d", "bias " + to_string(tape.shape(b)));
  if (opt.stride < 1) shape_fail("conv2d", "stride must be >= 1");
  kernels::ConvGeometry geo;
  geo.in_channels = xs[0];
  geo.in_h = xs[1];
  geo.in_w = xs[2];
  geo.out_channels = ws[0];
  geo.kernel_h = ws[2];
  geo.kernel_w = ws[3];
  geo.stride = opt.stride;
  geo.pad_top = opt.pad_top;
  geo.pad_left = opt.pad_left;
  geo.out_h = kernels::conv_output_side(geo.in_h, geo.kernel_h, opt.stride, opt.pad_top + opt.pad_bottom);
  geo.out_w = kernels::conv_output_side(geo.in_w, geo.kernel_w, opt.stride, opt.pad_left + opt.pad_right);
  if (geo.out_h < 1 || geo.out_w < 1)
    shape_fail("conv2d", "kernel " + to_string(ws) + " larger than padded input " + to_string(xs));
  std::vector<T> out(geo.out_size());
  k::conv2d_forward<T>(geo, tape.value(x), tape.value(w), b.valid() ? tape.value(b) : std::span<const T>{}, out);
  return tape.push(std::move(out), {geo.out_channels, geo.out_h, geo.out_w}, any_grad(tape, {x, w, b}),
                   [x, w, b, geo](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     if (t.needs_grad(x)) k::conv2d_backward_input<T>(geo, g, t.value(w), t.grad(x));
                     if (t.needs_grad(w) || t.needs_grad(b)) {
                       std::vector<T> scratch_w, scratch_b;
                       std::span<T> dw, db;
                       if (t.needs_grad(w)) {
                         dw = t.grad(w);
                       } else {
                         scratch_w.assign(geo.weight_size(), T(0));
                         dw = scratch_w;
                       }
                       if (t.needs_grad(b)) db = t.grad(b);
                       k::conv2d_backward_weight<T>(geo, t.value(x), g, dw, db);
                     }
                   });
}

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var x, Var w, Var b, int stride) {
  require_rank(tape, "conv_transpose2d", x, 3);
  require_rank(tape, "conv_transpose2d", w, 4);
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  if (ws[0] != xs[0]) shape_fail("conv_transpose2d", "weight " + to_string(ws) + " on input " + to_string(xs));
  if (b.valid() && tape.size(b) != ws[1]) shape_fail("conv_transpose2d", "bias " + to_string(tape.shape(b)));
  if (stride < 1) shape_fail("conv_transpose2d", "stride must be >= 1");
  // The equivalent forward convolution maps the (larger) output back to x.
  kernels::ConvGeometry geo;
  geo.in_channels = ws[1];
  geo.in_h = kernels::conv_transpose_output_side(xs[1], ws[2], stride);
  geo.in_w = kernels::conv_transpose_output_side(xs[2], ws[3], stride);
  geo.out_channels = xs[0];
  geo.out_h = xs[1];
  geo.out_w = xs[2];
  geo.kernel_h = ws[2];
  geo.kernel_w = ws[3];
  geo.stride = stride;
  std::vector<T> out(geo.in_size(), T(0));
  if (b.valid()) {
    auto bv = tape.value(b);
    const int plane = geo.in_h * geo.in_w;
    for (int c = 0; c < geo.in_channels; ++c) std::fill_n(out.begin() + c * plane, plane, bv[c]);
  }
  k::conv2d_backward_input<T>(geo, tape.value(x), tape.value(w), out);
  return tape.push(std::move(out), {geo.in_channels, geo.in_h, geo.in_w}, any_grad(tape, {x, w, b}),
                   [x, w, b, geo](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     if (t.needs_grad(x)) {
                       std::vector<T> dx(geo.out_size());
                       k::conv2d_forward<T>(geo, g, t.value(w), {}, dx);
                       auto gx = t.grad(x);
                       for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
                     }
                     if (t.needs_grad(w)) k::conv2d_backward_weight<T>(geo, g, t.value(x), t.grad(w), {});
                     if (t.needs_grad(b)) {
                       auto gb = t.grad(b);
                       const int plane = geo.in_h * geo.in_w;
                       for (int c = 0; c < geo.in_channels; ++c) {
                         T acc = 0;
                         for (int p = 0; p < plane; ++p) acc += g[c * plane + p];
                         gb[c] += acc;
                       }
                     }
                   });
}

template <typename T>
Var avg_pool2d(Tape<T>& tape, Var x, int kernel, int stride) {
  require_rank(tape, "avg_pool2d", x, 3);
  const Shape& xs = tape.shape(x);
  const int c = xs[0], h = xs[1], w = xs[2];
  const int oh = kernels::conv_output_side(h, kernel, stride, 0);
  const int ow = kernels::conv_output_side(w, kernel, stride, 0);
  if (kernel < 1 || stride < 1 || oh < 1 || ow < 1)
    shape_fail("avg_pool2d", "window " + std::to_string(kernel) + " on " + to_string(xs));
  const T inv = T(1) / T(kernel * kernel);
  auto xv = tape.value(x);
  std::vector<T> out(std::size_t(c) * oh * ow, T(0));
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        T acc = 0;
        for (int ki = 0; ki < kernel; ++ki)
          for (int kj = 0; kj < kernel; ++kj) acc += xv[(ch * h + i * stride + ki) * w + j * stride + kj];
        out[(ch * oh + i) * ow + j] = acc * inv;
      }
  return tape.push(std::move(out), {c, oh, ow}, tape.needs_grad(x),
                   [x, c, h, w, oh, ow, kernel, stride, inv](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto gx = t.grad(x);
                     for (int ch = 0; ch < c; ++ch)
                       for (int i = 0; i < oh; ++i)
                         for (int j = 0; j < ow; ++j) {
                           const T gi = g[(ch * oh + i) * ow + j] * inv;
                           for (int ki = 0; ki < kernel; ++ki)
                             for (int kj = 0; kj < kernel; ++kj)
                               gx[(ch * h + i * stride + ki) * w + j * stride + kj] += gi;
                         }
                   });
}

template <typename T>
Var resize_bilinear(Tape<T>& tape, Var x, int out_h, int out_w) {
  require_rank(tape, "resize_bilinear", x, 3);
  const Shape& xs = tape.shape(x);
  const int c = xs[0], h = xs[1], w = xs[2];
  if (out_h < 1 || out_w < 1) shape_fail("resize_bilinear", "empty target size");
  auto rows = bilinear_taps(h, out_h);
  auto cols = bilinear_taps(w, out_w);
  auto xv = tape.value(x);
  std::vector<T> out(std::size_t(c) * out_h * out_w);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        const Bilinear& r = rows[i];
        const Bilinear& q = cols[j];
        const T* plane = xv.data() + std::size_t(ch) * h * w;
        const T top = plane[r.i0 * w + q.i0] * T(1 - q.frac) + plane[r.i0 * w + q.i1] * T(q.frac);
        const T bottom = plane[r.i1 * w + q.i0] * T(1 - q.frac) + plane[r.i1 * w + q.i1] * T(q.frac);
        out[(ch * out_h + i) * out_w + j] = top * T(1 - r.frac) + bottom * T(r.frac);
      }
  return tape.push(std::move(out), {c, out_h, out_w}, tape.needs_grad(x),
                   [x, c, h, w, out_h, out_w, rows, cols](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto gx = t.grad(x);
                     for (int ch = 0; ch < c; ++ch)
                       for (int i = 0; i < out_h; ++i)
                         for (int j = 0; j < out_w; ++j) {
                           const Bilinear& r = rows[i];
                           const Bilinear& q = cols[j];
                           const T gi = g[(ch * out_h + i) * out_w + j];
                           T* plane = gx.data() + std::size_t(ch) * h * w;
                           plane[r.i0 * w + q.i0] += gi * T((1 - r.frac) * (1 - q.frac));
                           plane[r.i0 * w + q.i1] += gi * T((1 - r.frac) * q.frac);
                           plane[r.i1 * w + q.i0] += gi * T(r.frac * (1 - q.frac));
                           plane[r.i1 * w + q.i1] += gi * T(r.frac * q.frac);
                         }
                   });
}

template <typename T>
Var sum_channels(Tape<T>& tape, Var x) {
  require_rank(tape, "sum_channels", x, 3);
  const Shape& xs = tape.shape(x);
  const int c = xs[0], plane = xs[1] * xs[2];
  auto xv = tape.value(x);
  std::vector<T> out(plane, T(0));
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < plane; ++p) out[p] += xv[ch * plane + p];
  return tape.push(std::move(out), {xs[1], xs[2]}, tape.needs_grad(x), [x, c, plane](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    auto gx = t.grad(x);
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < plane; ++p) gx[ch * plane + p] += g[p];
  });
}

template <typename T>
Var clamp(Tape<T>& tape, Var x, T lo, T hi) {
  auto xv = tape.value(x);
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i], lo, hi);
  return tape.push(std::move(out), tape.shape(x), tape.needs_grad(x), [x, lo, hi](Tape<T>& t, int self) {
    auto g = t.grad(Var{self});
    auto xv = t.value(x);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
  });
}

template <typename T>
Var bernoulli_loglik(Tape<T>& tape, Var logits, std::span<const std::uint8_t> target) {
  if (std::size_t(tape.size(logits)) != target.size())
    shape_fail("bernoulli_loglik", to_string(tape.shape(logits)) + " logits for " +
                                       std::to_string(target.size()) + " pixels");
  auto lv = tape.value(logits);
  T acc = 0;
  for (std::size_t i = 0; i < lv.size(); ++i) acc += (target[i] ? lv[i] : T(0)) - softplus(lv[i]);
  std::vector<std::uint8_t> x(target.begin(), target.end());
  return tape.push({acc}, {1}, tape.needs_grad(logits), [logits, x = std::move(x)](Tape<T>& t, int self) {
    const T g = t.grad(Var{self})[0];
    auto lv = t.value(logits);
    auto gl = t.grad(logits);
    for (std::size_t i = 0; i < lv.size(); ++i) gl[i] += g * (T(x[i]) - sigmoid(lv[i]));
  });
}

template <typename T>
Var gaussian_kl(Tape<T>& tape, Var mq, Var lvq, Var mp, Var lvp) {
  require_same_shape(tape, "gaussian_kl", mq, lvq);
  require_same_shape(tape, "gaussian_kl", mq, mp);
  require_same_shape(tape, "gaussian_kl", mq, lvp);
  auto a = tape.value(mq), la = tape.value(lvq), b = tape.value(mp), lb = tape.value(lvp);
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    acc += lb[i] - la[i] + (std::exp(la[i]) + d * d) / std::exp(lb[i]) - T(1);
  }
  return tape.push({T(0.5) * acc}, {1}, any_grad(tape, {mq, lvq, mp, lvp}),
                   [mq, lvq, mp, lvp](Tape<T>& t, int self) {
                     const T g = t.grad(Var{self})[0];
                     auto a = t.value(mq), la = t.value(lvq), b = t.value(mp), lb = t.value(lvp);
                     const std::size_t n = a.size();
                     std::vector<T> d_mq(n), d_lvq(n), d_lvp(n);
                     for (std::size_t i = 0; i < n; ++i) {
                       const T vq = std::exp(la[i]), vp = std::exp(lb[i]), d = a[i] - b[i];
                       d_mq[i] = g * d / vp;
                       d_lvq[i] = g * T(0.5) * (vq / vp - T(1));
                       d_lvp[i] = g * T(0.5) * (T(1) - (vq + d * d) / vp);
                     }
                     if (t.needs_grad(mq)) {
                       auto gg = t.grad(mq);
                       for (std::size_t i = 0; i < n; ++i) gg[i] += d_mq[i];
                     }
                     if (t.needs_grad(mp)) {
                       auto gg = t.grad(mp);
                       for (std::size_t i = 0; i < n; ++i) gg[i] -= d_mq[i];
                     }
                     if (t.needs_grad(lvq)) {
                       auto gg = t.grad(lvq);
                       for (std::size_t i = 0; i < n; ++i) gg[i] += d_lvq[i];
                     }
                     if (t.needs_grad(lvp)) {
                       auto gg = t.grad(lvp);
                       for (std::size_t i = 0; i < n; ++i) gg[i] += d_lvp[i];
                     }
                   });
}

template <typename T>
Var gaussian_logpdf(Tape<T>& tape, Var z, Var mean, Var logvar) {
  require_same_shape(tape, "gaussian_logpdf", z, mean);
  require_same_shape(tape, "gaussian_logpdf", z, logvar);
  const T log2pi = T(std::log(2.0 * std::numbers::pi));
  auto zv = tape.value(z), m = tape.value(mean), lv = tape.value(logvar);
  T acc = 0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const T d = zv[i] - m[i];
    acc += log2pi + lv[i] + d * d / std::exp(lv[i]);
  }
  return tape.push({T(-0.5) * acc}, {1}, any_grad(tape, {z, mean, logvar}), [z, mean, logvar](Tape<T>& t, int self) {
    const T g = t.grad(Var{self})[0];
    auto zv = t.value(z), m = t.value(mean), lv = t.value(logvar);
    const std::size_t n = zv.size();
    const bool gz = t.needs_grad(z), gm = t.needs_grad(mean), gl = t.needs_grad(logvar);
    for (std::size_t i = 0; i < n; ++i) {
      const T v = std::exp(lv[i]), d = zv[i] - m[i];
      if (gz) t.grad(z)[i] -= g * d / v;
      if (gm) t.grad(mean)[i] += g * d / v;
      if (gl) t.grad(logvar)[i] += g * T(0.5) * (d * d / v - T(1));
    }
  });
}

template <typename T>
Var reparameterize(Tape<T>& tape, Var mean, Var logvar, std::span<const std::type_identity_t<T>> eps) {
  require_same_shape(tape, "reparameterize", mean, logvar);
  if (std::size_t(tape.size(mean)) != eps.size())
    shape_fail("reparameterize", std::to_string(eps.size()) + " noise values for " + to_string(tape.shape(mean)));
  auto m = tape.value(mean), lv = tape.value(logvar);
  std::vector<T> out(m.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] + std::exp(T(0.5) * lv[i]) * eps[i];
  std::vector<T> noise(eps.begin(), eps.end());
  return tape.push(std::move(out), tape.shape(mean), any_grad(tape, {mean, logvar}),
                   [mean, logvar, noise = std::move(noise)](Tape<T>& t, int self) {
                     auto g = t.grad(Var{self});
                     auto lv = t.value(logvar);
                     if (t.needs_grad(mean)) {
                       auto gm = t.grad(mean);
                       for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
                     }
                     if (t.needs_grad(logvar)) {
                       auto gl = t.grad(logvar);
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gl[i] += g[i] * T(0.5) * std::exp(T(0.5) * lv[i]) * noise[i];
                     }
                   });
}

#define GMN_INSTANTIATE_OPS(T)                                                               \
  template Var add<T>(Tape<T>&, Var, Var);                                                  \
  template Var sub<T>(Tape<T>&, Var, Var);                                                  \
  template Var mul<T>(Tape<T>&, Var, Var);                                                  \
  template Var scale<T>(Tape<T>&, Var, T);                                                  \
  template Var sum<T>(Tape<T>&, Var);                                                       \
  template Var add_scalar<T>(Tape<T>&, Var, Var);                                           \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                            \
  template Var concat<T>(Tape<T>&, std::span<const Var>);                                   \
  template Var slice<T>(Tape<T>&, Var, int, int);                                           \
  template Var slice_rows<T>(Tape<T>&, Var, int, int);                                      \
  template Var concat_rows<T>(Tape<T>&, Var, Var);                                          \
  template Var add_row<T>(Tape<T>&, Var, Var);                                              \
  template Var matvec<T>(Tape<T>&, Var, Var);                                               \
  template Var affine<T>(Tape<T>&, Var, Var, Var);                                          \
  template Var affine_rows<T>(Tape<T>&, Var, Var, Var);                                     \
  template Var prelu<T>(Tape<T>&, Var, Var);                                                \
  template Var softmax<T>(Tape<T>&, Var);                                                   \
  template Var weighted_rows<T>(Tape<T>&, Var, Var);                                        \
  template Var gru_cell<T>(Tape<T>&, Var, Var, Var);                                        \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, Conv2dOptions);                           \
  template Var conv_transpose2d<T>(Tape<T>&, Var, Var, Var, int);                           \
  template Var avg_pool2d<T>(Tape<T>&, Var, int, int);                                      \
  template Var resize_bilinear<T>(Tape<T>&, Var, int, int);                                 \
  template Var sum_channels<T>(Tape<T>&, Var);                                              \
  template Var clamp<T>(Tape<T>&, Var, T, T);                                               \
  template Var bernoulli_loglik<T>(Tape<T>&, Var, std::span<const std::uint8_t>);           \
  template Var gaussian_kl<T>(Tape<T>&, Var, Var, Var, Var);                                \
  template Var gaussian_logpdf<T>(Tape<T>&, Var, Var, Var);                                 \
  template Var reparameterize<T>(Tape<T>&, Var, Var, std::span<const T>);

GMN_INSTANTIATE_OPS(float)
GMN_INSTANTIATE_OPS(double)

#undef GMN_INSTANTIATE_OPS

}  // namespace gmn::ad
