#include <atomic>
#include <string>
#include <type_traits>

#include "yolod/errors.hpp"
#include "yolod/kernels.hpp"

namespace yolod::kernels {
namespace {
std::atomic<Backend> g_backend{Backend::fast};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

ConvGeometry conv_geometry(const Shape& x, const Shape& weight, int stride, int pad) {
  auto fail = [&](const std::string& why) {
    throw ShapeError("conv2d: " + why + " (input " + to_string(x) + ", weight " + to_string(weight) +
                     ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad) + ")");
  };
  if (x.size() != 4) fail("input must be rank 4");
  if (weight.size() != 4) fail("weight must be rank 4");
  if (weight[2] != weight[3]) fail("only square kernels are supported");
  if (weight[1] != x[1]) fail("input channels differ from weight channels");
  if (stride < 1 || pad < 0) fail("stride must be >= 1 and pad >= 0");
  ConvGeometry g{x[0], x[1], x[2], x[3], weight[0], weight[2], stride, pad};
  if (g.in_h + 2 * pad < g.kernel || g.in_w + 2 * pad < g.kernel) fail("kernel larger than padded input");
  return g;
}

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < g.batch; ++n) {
    for (int co = 0; co < g.out_channels; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? static_cast<double>(bias[co]) : 0.0;
          for (int ci = 0; ci < g.in_channels; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in_h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.in_w) continue;
                acc += static_cast<double>(x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + iy) *
                                                 g.in_w +
                                             ix]) *
                       static_cast<double>(w[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k + kx]);
              }
            }
          }
          y[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox] = static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int n = 0; n < g.batch; ++n) {
    for (int ci = 0; ci < g.in_channels; ++ci) {
      for (int iy = 0; iy < g.in_h; ++iy) {
        for (int ix = 0; ix < g.in_w; ++ix) {
          double acc = 0.0;
          for (int co = 0; co < g.out_channels; ++co) {
            for (int ky = 0; ky < k; ++ky) {
              const int ty = iy + g.pad - ky;
              if (ty < 0 || ty % g.stride) continue;
              const int oy = ty / g.stride;
              if (oy >= oh) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int tx = ix + g.pad - kx;
                if (tx < 0 || tx % g.stride) continue;
                const int ox = tx / g.stride;
                if (ox >= ow) continue;
                acc += static_cast<double>(gy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox]) *
                       static_cast<double>(w[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k + kx]);
              }
            }
          }
          gx[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix] += static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gb) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int co = 0; co < g.out_channels; ++co) {
    for (int ci = 0; ci < g.in_channels; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          double acc = 0.0;
          for (int n = 0; n < g.batch; ++n) {
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in_h) continue;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.in_w) continue;
                acc += static_cast<double>(x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + iy) *
                                                 g.in_w +
                                             ix]) *
                       static_cast<double>(gy[((static_cast<std::size_t>(n) * g.out_channels + co) * oh + oy) * ow + ox]);
              }
            }
          }
          gw[((static_cast<std::size_t>(co) * g.in_channels + ci) * k + ky) * k + kx] += static_cast<T>(acc);
        }
      }
    }
    if (gb) {
      double acc = 0.0;
      for (int n = 0; n < g.batch; ++n) {
        const T* plane = gy + (static_cast<std::size_t>(n) * g.out_channels + co) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) acc += plane[i];
      }
      gb[co] += static_cast<T>(acc);
    }
  }
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
          int ldc, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = accumulate ? c[static_cast<std::size_t>(i) * ldc + j] : 0.0;
      for (int p = 0; p < k; ++p) {
        const float av = trans_a ? a[static_cast<std::size_t>(p) * lda + i] : a[static_cast<std::size_t>(i) * lda + p];
        const float bv = trans_b ? b[static_cast<std::size_t>(j) * ldb + p] : b[static_cast<std::size_t>(p) * ldb + j];
        acc += static_cast<double>(av) * bv;
      }
      c[static_cast<std::size_t>(i) * ldc + j] = static_cast<float>(acc);
    }
  }
}

template void conv2d_forward<float>(const ConvGeometry&, const float*, const float*, const float*, float*);
template void conv2d_forward<double>(const ConvGeometry&, const double*, const double*, const double*, double*);
template void conv2d_backward_input<float>(const ConvGeometry&, const float*, const float*, float*);
template void conv2d_backward_input<double>(const ConvGeometry&, const double*, const double*, double*);
template void conv2d_backward_weight<float>(const ConvGeometry&, const float*, const float*, float*, float*);
template void conv2d_backward_weight<double>(const ConvGeometry&, const double*, const double*, double*, double*);

}  // namespace reference

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  if constexpr (std::is_same_v<T, float>) {
    if (backend() == Backend::fast) return fast::conv2d_forward(g, x, w, bias, y);
  }
  reference::conv2d_forward(g, x, w, bias, y);
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx) {
  if constexpr (std::is_same_v<T, float>) {
    if (backend() == Backend::fast) return fast::conv2d_backward_input(g, w, gy, gx);
  }
  reference::conv2d_backward_input(g, w, gy, gx);
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gb) {
  if constexpr (std::is_same_v<T, float>) {
    if (backend() == Backend::fast) return fast::conv2d_backward_weight(g, x, gy, gw, gb);
  }
  reference::conv2d_backward_weight(g, x, gy, gw, gb);
}

template void conv2d_forward<float>(const ConvGeometry&, const float*, const float*, const float*, float*);
template void conv2d_forward<double>(const ConvGeometry&, const double*, const double*, const double*, double*);
template void conv2d_backward_input<float>(const ConvGeometry&, const float*, const float*, float*);
template void conv2d_backward_input<double>(const ConvGeometry&, const double*, const double*, double*);
template void conv2d_backward_weight<float>(const ConvGeometry&, const float*, const float*, float*, float*);
template void conv2d_backward_weight<double>(const ConvGeometry&, const double*, const double*, double*, double*);

}  // namespace yolod::kernels
