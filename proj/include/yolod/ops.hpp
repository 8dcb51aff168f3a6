#pragma once

// Differentiable ops on Graph<T>. Each op validates shapes eagerly and throws
// ShapeError with the offending extents; outputs are fresh tensors.

#include <cstdint>
#include <vector>

#include "yolod/graph.hpp"

namespace yolod::ops {

// --- convolution & normalization -------------------------------------------

// x[N,Cin,H,W] * weight[Cout,Cin,k,k] (+ bias[Cout] when bias.valid()).
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, int stride, int pad);

template <typename T>
struct BatchNormState {
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double momentum = 0.03;
  double eps = 1e-3;
  explicit BatchNormState(int channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

// Training mode normalizes with batch statistics and updates the running ones;
// otherwise the running statistics are used as constants.
template <typename T>
Var batch_norm2d(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormState<T>& state, bool training);

// --- elementwise -----------------------------------------------------------

template <typename T> Var silu(Graph<T>& g, Var x);
template <typename T> Var sigmoid(Graph<T>& g, Var x);
template <typename T> Var exp(Graph<T>& g, Var x);
template <typename T> Var atan(Graph<T>& g, Var x);
template <typename T> Var square(Graph<T>& g, Var x);
template <typename T> Var clamp_min(Graph<T>& g, Var x, double lo);
template <typename T> Var mul_scalar(Graph<T>& g, Var x, double s);
template <typename T> Var add_scalar(Graph<T>& g, Var x, double s);

// Binary ops broadcast same-rank operands along extents equal to 1.
template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var sub(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var div(Graph<T>& g, Var a, Var b);
// Same-shape only; ties send the gradient to `a`.
template <typename T> Var maximum(Graph<T>& g, Var a, Var b);
template <typename T> Var minimum(Graph<T>& g, Var a, Var b);

// Gradient-free copy.
template <typename T> Var detach(Graph<T>& g, Var x);

// --- spatial ---------------------------------------------------------------

template <typename T> Var max_pool2d(Graph<T>& g, Var x, int kernel, int stride, int pad);
template <typename T> Var upsample_nearest(Graph<T>& g, Var x, int factor);

// --- channel structure -----------------------------------------------------

// Concatenates along C; all N,H,W must match. Channel order is preserved.
template <typename T> Var concat_channels(Graph<T>& g, const std::vector<Var>& xs);
// Channels [begin, end).
template <typename T> Var slice_channels(Graph<T>& g, Var x, int begin, int end);
// Per-channel spatial mean: [N,C,H,W] -> [N,C,1,1].
template <typename T> Var channel_mean(Graph<T>& g, Var x);
// Reductions across channels: [N,C,H,W] -> [N,1,H,W].
template <typename T> Var mean_over_channels(Graph<T>& g, Var x);
template <typename T> Var max_over_channels(Graph<T>& g, Var x);
// Multiplies channel (n,c) by keep[n*C+c] in {0,1}; the mask is a constant.
template <typename T> Var mask_channels(Graph<T>& g, Var x, const std::vector<unsigned char>& keep);

// --- reshaping & reductions ------------------------------------------------

template <typename T> Var reshape(Graph<T>& g, Var x, Shape shape);
// Flat gather: out[i] = x.flat[indices[i]], shape [K].
template <typename T> Var gather(Graph<T>& g, Var x, const std::vector<std::int64_t>& indices);
// Scalar results keep a double-precision copy (Graph::scalar).
template <typename T> Var sum(Graph<T>& g, Var x);
template <typename T> Var mean(Graph<T>& g, Var x);
// Mean binary cross-entropy of logits against constant targets in [0,1].
template <typename T>
Var bce_with_logits(Graph<T>& g, Var logits, const BasicTensor<T>& targets);

}  // namespace yolod::ops
