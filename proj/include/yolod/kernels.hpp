#pragma once

// Raw convolution / matrix kernels behind the graph ops.
//
// Two implementations share one contract:
//   reference::  direct nested loops, serial. Kept as the testing oracle.
//   fast::       im2col + packed GEMM, OpenMP over output panels (float only).
// Every output element is reduced by exactly one thread in a fixed order, so
// both paths are deterministic for any thread count. They are not bit-identical
// to each other (different summation order).

#include <cstdint>

#include "yolod/tensor.hpp"

namespace yolod::kernels {

struct ConvGeometry {
  int batch = 0;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  // Length of one im2col column (Cin*k*k).
  int patch() const { return in_channels * kernel * kernel; }
  std::int64_t mult_adds() const {
    return static_cast<std::int64_t>(batch) * out_channels * out_h() * out_w() * patch();
  }
};

// Validates x[N,Cin,H,W] against weight[Cout,Cin,k,k]; throws ShapeError with
// both shapes in the message.
ConvGeometry conv_geometry(const Shape& x, const Shape& weight, int stride, int pad);

enum class Backend { reference, fast };

// Process-wide selection for the float path; double always uses reference.
void set_backend(Backend backend);
Backend backend();

namespace reference {

// y = conv(x, w) + bias. bias may be null.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);
// gx += conv_transpose(gy, w)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx);
// gw += corr(x, gy); gb += sum(gy) when gb is non-null
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gb);

// C = op(A) * op(B) (+ C when accumulate). Row-major; op is optional transpose.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
          int ldc, bool accumulate);

}  // namespace reference

namespace fast {

void conv2d_forward(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* y);
void conv2d_backward_input(const ConvGeometry& g, const float* w, const float* gy, float* gx);
void conv2d_backward_weight(const ConvGeometry& g, const float* x, const float* gy, float* gw, float* gb);

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
          int ldc, bool accumulate);

// col[(c*k + ky)*k + kx][oy*ow + ox] for a single image.
void im2col(const ConvGeometry& g, const float* x, float* col);
// Adjoint of im2col: x += scatter(col).
void col2im(const ConvGeometry& g, const float* col, float* x);

}  // namespace fast

// Dispatch on backend() for float, reference for double.
template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* w, const T* gy, T* gx);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* x, const T* gy, T* gw, T* gb);

}  // namespace yolod::kernels
