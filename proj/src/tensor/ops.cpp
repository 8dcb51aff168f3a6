#include "yolod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "yolod/errors.hpp"
#include "yolod/kernels.hpp"

namespace yolod::ops {
namespace {

template <typename T>
using TensorT = BasicTensor<T>;

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected rank-4 [N,C,H,W] input, got " + to_string(s));
}

// Elementwise op with derivative expressed through (x, y).
template <typename T, typename F, typename D>
Var unary(Graph<T>& g, Var x, const char* name, F f, D df) {
  const TensorT<T>& xv = g.value(x);
  TensorT<T> y(xv.shape());
  const T* xp = xv.ptr();
  T* yp = y.ptr();
  const std::int64_t n = xv.numel();
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) yp[i] = f(xp[i]);
  return g.record(name, std::move(y), {x}, [x, df](Graph<T>& gr, Var self) {
    const TensorT<T>& xv2 = gr.value(x);
    const TensorT<T>& yv = gr.value(self);
    const TensorT<T>& gy = gr.grad(self);
    if (!gr.requires_grad(x)) return;
    TensorT<T>& gx = gr.grad_buffer(x);
    const std::int64_t m = xv2.numel();
#pragma omp parallel for simd schedule(static)
    for (std::int64_t i = 0; i < m; ++i) gx[i] += gy[i] * df(xv2[i], yv[i]);
  });
}

// Strides of `in` viewed in `out` coordinates (0 along broadcast axes).
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t s = 1;
  for (int d = static_cast<int>(out.size()) - 1; d >= 0; --d) {
    strides[static_cast<std::size_t>(d)] = in[static_cast<std::size_t>(d)] == 1 ? 0 : s;
    s *= in[static_cast<std::size_t>(d)];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + to_string(a) + " vs " + to_string(b));
  }
  Shape out(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      out[d] = a[d];
    } else if (a[d] == 1) {
      out[d] = b[d];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  return out;
}

// Calls fn(out_index, a_offset, b_offset) in row-major order of `out`.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa, const std::vector<std::int64_t>& sb,
                        Fn fn) {
  const std::int64_t total = numel(out);
  const std::size_t rank = out.size();
  std::vector<int> idx(rank, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    fn(i, oa, ob);
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      oa += sa[du];
      ob += sb[du];
      if (idx[du] < out[du]) break;
      oa -= sa[du] * out[du];
      ob -= sb[du] * out[du];
      idx[du] = 0;
    }
  }
}

// Binary op with partials da(a,b), db(a,b).
template <typename T, typename F, typename DA, typename DB>
Var binary(Graph<T>& g, Var a, Var b, const char* name, F f, DA da, DB db) {
  const TensorT<T>& av = g.value(a);
  const TensorT<T>& bv = g.value(b);
  Shape out_shape = broadcast_shape(av.shape(), bv.shape(), name);
  TensorT<T> y(out_shape);
  const bool same = av.shape() == bv.shape();
  if (same) {
    const std::int64_t n = y.numel();
#pragma omp parallel for simd schedule(static)
    for (std::int64_t i = 0; i < n; ++i) y[i] = f(av[i], bv[i]);
  } else {
    auto sa = broadcast_strides(av.shape(), out_shape);
    auto sb = broadcast_strides(bv.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb,
                       [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { y[i] = f(av[ia], bv[ib]); });
  }
  return g.record(name, std::move(y), {a, b}, [a, b, da, db, same](Graph<T>& gr, Var self) {
    const TensorT<T>& av2 = gr.value(a);
    const TensorT<T>& bv2 = gr.value(b);
    const TensorT<T>& gy = gr.grad(self);
    const bool need_a = gr.requires_grad(a), need_b = gr.requires_grad(b);
    TensorT<T>* ga = need_a ? &gr.grad_buffer(a) : nullptr;
    TensorT<T>* gb = need_b ? &gr.grad_buffer(b) : nullptr;
    if (same) {
      const std::int64_t n = gy.numel();
      for (std::int64_t i = 0; i < n; ++i) {
        if (ga) (*ga)[i] += gy[i] * da(av2[i], bv2[i]);
        if (gb) (*gb)[i] += gy[i] * db(av2[i], bv2[i]);
      }
      return;
    }
    const Shape& out = gy.shape();
    auto sa = broadcast_strides(av2.shape(), out);
    auto sb = broadcast_strides(bv2.shape(), out);
    for_each_broadcast(out, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
      if (ga) (*ga)[ia] += gy[i] * da(av2[ia], bv2[ib]);
      if (gb) (*gb)[ib] += gy[i] * db(av2[ia], bv2[ib]);
    });
  });
}

template <typename T>
T sigmoid_value(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

// --- convolution & normalization -------------------------------------------

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, int stride, int pad) {
  const TensorT<T>& xv = g.value(x);
  const TensorT<T>& wv = g.value(weight);
  const kernels::ConvGeometry geo = kernels::conv_geometry(xv.shape(), wv.shape(), stride, pad);
  const T* bias_ptr = nullptr;
  if (bias.valid()) {
    const TensorT<T>& bv = g.value(bias);
    if (bv.shape() != Shape{geo.out_channels}) {
      throw ShapeError("conv2d: bias shape " + to_string(bv.shape()) + " does not match " +
                       std::to_string(geo.out_channels) + " output channels");
    }
    bias_ptr = bv.ptr();
  }
  TensorT<T> y(Shape{geo.batch, geo.out_channels, geo.out_h(), geo.out_w()});
  kernels::conv2d_forward(geo, xv.ptr(), wv.ptr(), bias_ptr, y.ptr());
  std::vector<Var> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return g.record(
      "conv2d", std::move(y), std::move(inputs),
      [x, weight, bias, geo](Graph<T>& gr, Var self) {
        const TensorT<T>& gy = gr.grad(self);
        if (gr.requires_grad(x)) {
          kernels::conv2d_backward_input(geo, gr.value(weight).ptr(), gy.ptr(), gr.grad_buffer(x).ptr());
        }
        const bool need_w = gr.requires_grad(weight);
        const bool need_b = bias.valid() && gr.requires_grad(bias);
        if (need_w) {
          kernels::conv2d_backward_weight(geo, gr.value(x).ptr(), gy.ptr(), gr.grad_buffer(weight).ptr(),
                                          need_b ? gr.grad_buffer(bias).ptr() : static_cast<T*>(nullptr));
        } else if (need_b) {
          TensorT<T>& gb = gr.grad_buffer(bias);
          const int hw = geo.out_h() * geo.out_w();
          for (int co = 0; co < geo.out_channels; ++co) {
            double acc = 0.0;
            for (int n = 0; n < geo.batch; ++n)
              for (int i = 0; i < hw; ++i) acc += gy[(static_cast<std::int64_t>(n) * geo.out_channels + co) * hw + i];
            gb[co] += static_cast<T>(acc);
          }
        }
      },
      /*weighted=*/true);
}

template <typename T>
Var batch_norm2d(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormState<T>& state, bool training) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "batch_norm2d");
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (g.value(gamma).shape() != Shape{c} || g.value(beta).shape() != Shape{c} ||
      state.running_mean.shape() != Shape{c}) {
    throw ShapeError("batch_norm2d: affine/state shape does not match " + std::to_string(c) + " channels of input " +
                     to_string(xv.shape()));
  }
  const T* gm = g.value(gamma).ptr();
  const T* bt = g.value(beta).ptr();
  const std::int64_t count = static_cast<std::int64_t>(n) * hw;
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  TensorT<T> xhat(xv.shape());
  TensorT<T> y(xv.shape());
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double mu, var;
    if (training) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = xv.ptr() + (static_cast<std::int64_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) s += p[i];
      }
      mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = xv.ptr() + (static_cast<std::int64_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(count);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      state.running_mean[ch] = static_cast<T>((1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mu);
      state.running_var[ch] = static_cast<T>((1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased);
    } else {
      mu = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    inv_std[static_cast<std::size_t>(ch)] = static_cast<T>(is);
    for (int b = 0; b < n; ++b) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) {
        const T h = static_cast<T>((xv[off + i] - mu) * is);
        xhat[off + i] = h;
        y[off + i] = gm[ch] * h + bt[ch];
      }
    }
  }
  return g.record("batch_norm2d", std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, count,
                   training](Graph<T>& gr, Var self) {
                    const TensorT<T>& gy = gr.grad(self);
                    const T* gm2 = gr.value(gamma).ptr();
                    const bool need_x = gr.requires_grad(x);
                    T* gx = need_x ? gr.grad_buffer(x).ptr() : nullptr;
                    T* gg = gr.requires_grad(gamma) ? gr.grad_buffer(gamma).ptr() : nullptr;
                    T* gb = gr.requires_grad(beta) ? gr.grad_buffer(beta).ptr() : nullptr;
#pragma omp parallel for schedule(static)
                    for (int ch = 0; ch < c; ++ch) {
                      double sdy = 0.0, sdyx = 0.0;
                      for (int b = 0; b < n; ++b) {
                        const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * hw;
                        for (int i = 0; i < hw; ++i) {
                          sdy += gy[off + i];
                          sdyx += static_cast<double>(gy[off + i]) * xhat[off + i];
                        }
                      }
                      if (gg) gg[ch] += static_cast<T>(sdyx);
                      if (gb) gb[ch] += static_cast<T>(sdy);
                      if (!gx) continue;
                      const double scale = static_cast<double>(gm2[ch]) * inv_std[static_cast<std::size_t>(ch)];
                      for (int b = 0; b < n; ++b) {
                        const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * hw;
                        for (int i = 0; i < hw; ++i) {
                          double d = gy[off + i];
                          if (training) d -= (sdy + xhat[off + i] * sdyx) / static_cast<double>(count);
                          gx[off + i] += static_cast<T>(scale * d);
                        }
                      }
                    }
                  });
}

// --- elementwise -----------------------------------------------------------

template <typename T>
Var silu(Graph<T>& g, Var x) {
  return unary(
      g, x, "silu", [](T v) { return v * sigmoid_value(v); },
      [](T v, T) {
        const T s = sigmoid_value(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  return unary(
      g, x, "sigmoid", [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var exp(Graph<T>& g, Var x) {
  return unary(
      g, x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var atan(Graph<T>& g, Var x) {
  return unary(
      g, x, "atan", [](T v) { return std::atan(v); }, [](T v, T) { return T(1) / (T(1) + v * v); });
}

template <typename T>
Var square(Graph<T>& g, Var x) {
  return unary(
      g, x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var clamp_min(Graph<T>& g, Var x, double lo) {
  const T l = static_cast<T>(lo);
  return unary(
      g, x, "clamp_min", [l](T v) { return v < l ? l : v; }, [l](T v, T) { return v < l ? T(0) : T(1); });
}

template <typename T>
Var mul_scalar(Graph<T>& g, Var x, double s) {
  const T k = static_cast<T>(s);
  return unary(
      g, x, "mul_scalar", [k](T v) { return v * k; }, [k](T, T) { return k; });
}

template <typename T>
Var add_scalar(Graph<T>& g, Var x, double s) {
  const T k = static_cast<T>(s);
  return unary(
      g, x, "add_scalar", [k](T v) { return v + k; }, [](T, T) { return T(1); });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  return binary(
      g, a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  return binary(
      g, a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  return binary(
      g, a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Var div(Graph<T>& g, Var a, Var b) {
  return binary(
      g, a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Var maximum(Graph<T>& g, Var a, Var b) {
  if (g.value(a).shape() != g.value(b).shape()) {
    throw ShapeError("maximum: shapes differ " + to_string(g.value(a).shape()) + " vs " + to_string(g.value(b).shape()));
  }
  return binary(
      g, a, b, "maximum", [](T x, T y) { return x >= y ? x : y; }, [](T x, T y) { return x >= y ? T(1) : T(0); },
      [](T x, T y) { return x >= y ? T(0) : T(1); });
}

template <typename T>
Var minimum(Graph<T>& g, Var a, Var b) {
  if (g.value(a).shape() != g.value(b).shape()) {
    throw ShapeError("minimum: shapes differ " + to_string(g.value(a).shape()) + " vs " + to_string(g.value(b).shape()));
  }
  return binary(
      g, a, b, "minimum", [](T x, T y) { return x <= y ? x : y; }, [](T x, T y) { return x <= y ? T(1) : T(0); },
      [](T x, T y) { return x <= y ? T(0) : T(1); });
}

template <typename T>
Var detach(Graph<T>& g, Var x) {
  return g.constant(g.value(x));
}

// --- spatial ---------------------------------------------------------------

template <typename T>
Var max_pool2d(Graph<T>& g, Var x, int kernel, int stride, int pad) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "max_pool2d");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (kernel < 1 || stride < 1 || pad < 0 || 2 * pad > kernel || h + 2 * pad < kernel || w + 2 * pad < kernel) {
    throw ShapeError("max_pool2d: invalid window " + std::to_string(kernel) + "/" + std::to_string(stride) + "/" +
                     std::to_string(pad) + " for input " + to_string(xv.shape()));
  }
  const int oh = (h + 2 * pad - kernel) / stride + 1, ow = (w + 2 * pad - kernel) / stride + 1;
  TensorT<T> y(Shape{n, c, oh, ow});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(y.numel()));
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < n * c; ++plane) {
    const T* src = xv.ptr() + static_cast<std::int64_t>(plane) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            const T v = src[iy * w + ix];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = iy * w + ix;
            }
          }
        }
        const std::int64_t o = (static_cast<std::int64_t>(plane) * oh + oy) * ow + ox;
        y[o] = best;
        argmax[static_cast<std::size_t>(o)] = best_idx;
      }
    }
  }
  return g.record("max_pool2d", std::move(y), {x},
                  [x, argmax = std::move(argmax), n, c, h, w, oh, ow](Graph<T>& gr, Var self) {
                    if (!gr.requires_grad(x)) return;
                    const TensorT<T>& gy = gr.grad(self);
                    TensorT<T>& gx = gr.grad_buffer(x);
#pragma omp parallel for schedule(static)
                    for (int plane = 0; plane < n * c; ++plane) {
                      for (int i = 0; i < oh * ow; ++i) {
                        const std::int64_t o = static_cast<std::int64_t>(plane) * oh * ow + i;
                        gx[static_cast<std::int64_t>(plane) * h * w + argmax[static_cast<std::size_t>(o)]] += gy[o];
                      }
                    }
                  });
}

template <typename T>
Var upsample_nearest(Graph<T>& g, Var x, int factor) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int oh = h * factor, ow = w * factor;
  TensorT<T> y(Shape{n, c, oh, ow});
#pragma omp parallel for schedule(static)
  for (int plane = 0; plane < n * c; ++plane) {
    const T* src = xv.ptr() + static_cast<std::int64_t>(plane) * h * w;
    T* dst = y.ptr() + static_cast<std::int64_t>(plane) * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = src[(oy / factor) * w + ox / factor];
  }
  return g.record("upsample_nearest", std::move(y), {x}, [x, n, c, h, w, factor](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const TensorT<T>& gy = gr.grad(self);
    TensorT<T>& gx = gr.grad_buffer(x);
    const int oh = h * factor, ow = w * factor;
#pragma omp parallel for schedule(static)
    for (int plane = 0; plane < n * c; ++plane) {
      const T* src = gy.ptr() + static_cast<std::int64_t>(plane) * oh * ow;
      T* dst = gx.ptr() + static_cast<std::int64_t>(plane) * h * w;
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
          T acc = 0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) acc += src[(iy * factor + dy) * ow + ix * factor + dx];
          dst[iy * w + ix] += acc;
        }
      }
    }
  });
}

// --- channel structure -----------------------------------------------------

template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& first = g.value(xs[0]).shape();
  require_rank4(first, "concat_channels");
  int total_c = 0;
  for (Var v : xs) {
    const Shape& s = g.value(v).shape();
    if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
      throw ShapeError("concat_channels: N,H,W mismatch between " + to_string(first) + " and " + to_string(s));
    }
    total_c += s[1];
  }
  const int n = first[0], hw = first[2] * first[3];
  TensorT<T> y(Shape{n, total_c, first[2], first[3]});
  int offset = 0;
  std::vector<int> offsets;
  for (Var v : xs) {
    const TensorT<T>& xv = g.value(v);
    const int c = xv.dim(1);
    for (int b = 0; b < n; ++b) {
      std::copy_n(xv.ptr() + static_cast<std::int64_t>(b) * c * hw, static_cast<std::int64_t>(c) * hw,
                  y.ptr() + (static_cast<std::int64_t>(b) * total_c + offset) * hw);
    }
    offsets.push_back(offset);
    offset += c;
  }
  return g.record("concat_channels", std::move(y), xs, [xs, offsets, n, hw, total_c](Graph<T>& gr, Var self) {
    const TensorT<T>& gy = gr.grad(self);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!gr.requires_grad(xs[k])) continue;
      TensorT<T>& gx = gr.grad_buffer(xs[k]);
      const int c = gx.dim(1);
      for (int b = 0; b < n; ++b) {
        const T* src = gy.ptr() + (static_cast<std::int64_t>(b) * total_c + offsets[k]) * hw;
        T* dst = gx.ptr() + static_cast<std::int64_t>(b) * c * hw;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(c) * hw; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var slice_channels(Graph<T>& g, Var x, int begin, int end) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "slice_channels");
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (begin < 0 || end > c || begin >= end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + to_string(xv.shape()));
  }
  const int k = end - begin;
  TensorT<T> y(Shape{n, k, xv.dim(2), xv.dim(3)});
  for (int b = 0; b < n; ++b) {
    std::copy_n(xv.ptr() + (static_cast<std::int64_t>(b) * c + begin) * hw, static_cast<std::int64_t>(k) * hw,
                y.ptr() + static_cast<std::int64_t>(b) * k * hw);
  }
  return g.record("slice_channels", std::move(y), {x}, [x, n, c, hw, begin, k](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const TensorT<T>& gy = gr.grad(self);
    TensorT<T>& gx = gr.grad_buffer(x);
    for (int b = 0; b < n; ++b) {
      const T* src = gy.ptr() + static_cast<std::int64_t>(b) * k * hw;
      T* dst = gx.ptr() + (static_cast<std::int64_t>(b) * c + begin) * hw;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(k) * hw; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var channel_mean(Graph<T>& g, Var x) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "channel_mean");
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (hw < 1) throw ShapeError("channel_mean: empty spatial plane in " + to_string(xv.shape()));
  TensorT<T> y(Shape{n, c, 1, 1});
  for (int p = 0; p < n * c; ++p) {
    const T* src = xv.ptr() + static_cast<std::int64_t>(p) * hw;
    double s = 0.0;
    for (int i = 0; i < hw; ++i) s += src[i];
    y[p] = static_cast<T>(s / hw);
  }
  return g.record("channel_mean", std::move(y), {x}, [x, n, c, hw](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const TensorT<T>& gy = gr.grad(self);
    TensorT<T>& gx = gr.grad_buffer(x);
    for (int p = 0; p < n * c; ++p) {
      const T share = gy[p] / static_cast<T>(hw);
      T* dst = gx.ptr() + static_cast<std::int64_t>(p) * hw;
      for (int i = 0; i < hw; ++i) dst[i] += share;
    }
  });
}

template <typename T>
Var mean_over_channels(Graph<T>& g, Var x) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "mean_over_channels");
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (c < 1) throw ShapeError("mean_over_channels: no channels in " + to_string(xv.shape()));
  TensorT<T> y(Shape{n, 1, xv.dim(2), xv.dim(3)});
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < hw; ++i) {
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) s += xv[(static_cast<std::int64_t>(b) * c + ch) * hw + i];
      y[static_cast<std::int64_t>(b) * hw + i] = static_cast<T>(s / c);
    }
  }
  return g.record("mean_over_channels", std::move(y), {x}, [x, n, c, hw](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const TensorT<T>& gy = gr.grad(self);
    TensorT<T>& gx = gr.grad_buffer(x);
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i)
          gx[(static_cast<std::int64_t>(b) * c + ch) * hw + i] += gy[static_cast<std::int64_t>(b) * hw + i] / T(c);
  });
}

template <typename T>
Var max_over_channels(Graph<T>& g, Var x) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "max_over_channels");
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (c < 1) throw ShapeError("max_over_channels: no channels in " + to_string(xv.shape()));
  TensorT<T> y(Shape{n, 1, xv.dim(2), xv.dim(3)});
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(n) * hw);
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < hw; ++i) {
      int best = 0;
      T bv = xv[static_cast<std::int64_t>(b) * c * hw + i];
      for (int ch = 1; ch < c; ++ch) {
        const T v = xv[(static_cast<std::int64_t>(b) * c + ch) * hw + i];
        if (v > bv) {
          bv = v;
          best = ch;
        }
      }
      y[static_cast<std::int64_t>(b) * hw + i] = bv;
      argmax[static_cast<std::size_t>(b) * hw + i] = best;
    }
  }
  return g.record("max_over_channels", std::move(y), {x},
                  [x, argmax = std::move(argmax), n, c, hw](Graph<T>& gr, Var self) {
                    if (!gr.requires_grad(x)) return;
                    const TensorT<T>& gy = gr.grad(self);
                    TensorT<T>& gx = gr.grad_buffer(x);
                    for (int b = 0; b < n; ++b)
                      for (int i = 0; i < hw; ++i) {
                        const int ch = argmax[static_cast<std::size_t>(b) * hw + i];
                        gx[(static_cast<std::int64_t>(b) * c + ch) * hw + i] += gy[static_cast<std::int64_t>(b) * hw + i];
                      }
                  });
}

template <typename T>
Var mask_channels(Graph<T>& g, Var x, const std::vector<unsigned char>& keep) {
  const TensorT<T>& xv = g.value(x);
  require_rank4(xv.shape(), "mask_channels");
  const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (keep.size() != static_cast<std::size_t>(n) * c) {
    throw ShapeError("mask_channels: mask has " + std::to_string(keep.size()) + " entries for input " +
                     to_string(xv.shape()));
  }
  TensorT<T> y(xv.shape());
  for (int p = 0; p < n * c; ++p) {
    if (!keep[static_cast<std::size_t>(p)]) continue;
    std::copy_n(xv.ptr() + static_cast<std::int64_t>(p) * hw, hw, y.ptr() + static_cast<std::int64_t>(p) * hw);
  }
  return g.record("mask_channels", std::move(y), {x}, [x, keep, n, c, hw](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const TensorT<T>& gy = gr.grad(self);
    TensorT<T>& gx = gr.grad_buffer(x);
    for (int p = 0; p < n * c; ++p) {
      if (!keep[static_cast<std::size_t>(p)]) continue;
      const T* src = gy.ptr() + static_cast<std::int64_t>(p) * hw;
      T* dst = gx.ptr() + static_cast<std::int64_t>(p) * hw;
      for (int i = 0; i < hw; ++i) dst[i] += src[i];
    }
  });
}

// --- reshaping & reductions ------------------------------------------------

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  TensorT<T> y = g.value(x).reshaped(std::move(shape));
  return g.record("reshape", std::move(y), {x}, [x](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const TensorT<T>& gy = gr.grad(self);
    TensorT<T>& gx = gr.grad_buffer(x);
    for (std::int64_t i = 0; i < gy.numel(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
Var gather(Graph<T>& g, Var x, const std::vector<std::int64_t>& indices) {
  const TensorT<T>& xv = g.value(x);
  TensorT<T> y(Shape{static_cast<int>(indices.size())});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= xv.numel()) {
      throw ShapeError("gather: index " + std::to_string(indices[i]) + " out of range for " + to_string(xv.shape()));
    }
    y[static_cast<std::int64_t>(i)] = xv[indices[i]];
  }
  return g.record("gather", std::move(y), {x}, [x, indices](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const TensorT<T>& gy = gr.grad(self);
    TensorT<T>& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += gy[static_cast<std::int64_t>(i)];
  });
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  const TensorT<T>& xv = g.value(x);
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) s += xv[i];
  Var out = g.record("sum", TensorT<T>::scalar(static_cast<T>(s)), {x}, [x](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    const T seed = gr.grad(self)[0];
    TensorT<T>& gx = gr.grad_buffer(x);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += seed;
  });
  g.set_precise_scalar(out, s);
  return out;
}

template <typename T>
Var mean(Graph<T>& g, Var x) {
  const TensorT<T>& xv = g.value(x);
  if (xv.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) s += xv[i];
  const double m = s / static_cast<double>(xv.numel());
  Var out = g.record("mean", TensorT<T>::scalar(static_cast<T>(m)), {x}, [x](Graph<T>& gr, Var self) {
    if (!gr.requires_grad(x)) return;
    TensorT<T>& gx = gr.grad_buffer(x);
    const T share = gr.grad(self)[0] / static_cast<T>(gx.numel());
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += share;
  });
  g.set_precise_scalar(out, m);
  return out;
}

template <typename T>
Var bce_with_logits(Graph<T>& g, Var logits, const BasicTensor<T>& targets) {
  const TensorT<T>& xv = g.value(logits);
  if (xv.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: logits " + to_string(xv.shape()) + " vs targets " + to_string(targets.shape()));
  }
  if (xv.numel() == 0) throw ShapeError("bce_with_logits: empty input");
  double s = 0.0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const double x = xv[i], t = targets[i];
    s += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  const double m = s / static_cast<double>(xv.numel());
  Var out = g.record("bce_with_logits", TensorT<T>::scalar(static_cast<T>(m)), {logits},
                     [logits, targets](Graph<T>& gr, Var self) {
                       if (!gr.requires_grad(logits)) return;
                       const TensorT<T>& xv2 = gr.value(logits);
                       TensorT<T>& gx = gr.grad_buffer(logits);
                       const double scale = static_cast<double>(gr.grad(self)[0]) / static_cast<double>(xv2.numel());
                       for (std::int64_t i = 0; i < xv2.numel(); ++i) {
                         const double sg = 1.0 / (1.0 + std::exp(-static_cast<double>(xv2[i])));
                         gx[i] += static_cast<T>(scale * (sg - targets[i]));
                       }
                     });
  g.set_precise_scalar(out, m);
  return out;
}

#define YOLOD_INSTANTIATE_OPS(T)                                                                   \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int);                                      \
  template Var batch_norm2d<T>(Graph<T>&, Var, Var, Var, BatchNormState<T>&, bool);                \
  template Var silu<T>(Graph<T>&, Var);                                                            \
  template Var sigmoid<T>(Graph<T>&, Var);                                                         \
  template Var exp<T>(Graph<T>&, Var);                                                             \
  template Var atan<T>(Graph<T>&, Var);                                                            \
  template Var square<T>(Graph<T>&, Var);                                                          \
  template Var clamp_min<T>(Graph<T>&, Var, double);                                               \
  template Var mul_scalar<T>(Graph<T>&, Var, double);                                              \
  template Var add_scalar<T>(Graph<T>&, Var, double);                                              \
  template Var add<T>(Graph<T>&, Var, Var);                                                        \
  template Var sub<T>(Graph<T>&, Var, Var);                                                        \
  template Var mul<T>(Graph<T>&, Var, Var);                                                        \
  template Var div<T>(Graph<T>&, Var, Var);                                                        \
  template Var maximum<T>(Graph<T>&, Var, Var);                                                    \
  template Var minimum<T>(Graph<T>&, Var, Var);                                                    \
  template Var detach<T>(Graph<T>&, Var);                                                          \
  template Var max_pool2d<T>(Graph<T>&, Var, int, int, int);                                       \
  template Var upsample_nearest<T>(Graph<T>&, Var, int);                                           \
  template Var concat_channels<T>(Graph<T>&, const std::vector<Var>&);                             \
  template Var slice_channels<T>(Graph<T>&, Var, int, int);                                        \
  template Var channel_mean<T>(Graph<T>&, Var);                                                    \
  template Var mean_over_channels<T>(Graph<T>&, Var);                                              \
  template Var max_over_channels<T>(Graph<T>&, Var);                                               \
  template Var mask_channels<T>(Graph<T>&, Var, const std::vector<unsigned char>&);                \
  template Var reshape<T>(Graph<T>&, Var, Shape);                                                  \
  template Var gather<T>(Graph<T>&, Var, const std::vector<std::int64_t>&);                        \
  template Var sum<T>(Graph<T>&, Var);                                                             \
  template Var mean<T>(Graph<T>&, Var);                                                            \
  template Var bce_with_logits<T>(Graph<T>&, Var, const BasicTensor<T>&);

YOLOD_INSTANTIATE_OPS(float)
YOLOD_INSTANTIATE_OPS(double)

#undef YOLOD_INSTANTIATE_OPS

}  // namespace yolod::ops
