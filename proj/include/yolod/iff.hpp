#pragma once

// Interference Feature Filtering: per sample, the k = floor(C*p) channels
// with the lowest score are zeroed. The selection is a constant mask; it is
// not differentiated through.

#include <cstddef>
#include <vector>

#include "yolod/graph.hpp"

namespace yolod {

enum class IffScore { mean, abs_mean };

struct IffConfig {
  bool enabled = true;
  double p_start = 0.05;
  double p_end = 0.005;
  IffScore score = IffScore::mean;
  bool on_source = true;  // also filter the backbone outputs, not only the head inputs
};

// Linear ramp from p_start to p_end. Progress outside [0,1] is clamped with
// a warning.
double iff_schedule(double progress, const IffConfig& cfg = {});

// floor(C*p), guarded against products like 100*0.29 landing just below an
// integer.
int iff_count(int channels, double p);

// Keep-mask of size N*C in sample-major order; ties filter the lower channel
// index first. Throws ConfigError unless 0 <= p <= 0.5.
template <typename T>
std::vector<unsigned char> iff_select(const BasicTensor<T>& x, double p, IffScore score = IffScore::mean);

// Tensor-only form for callers outside a graph.
template <typename T>
BasicTensor<T> iff_filter(const BasicTensor<T>& x, double p, IffScore score = IffScore::mean);

// Masks recorded in one forward pass and replayed in later ones, so a
// finite-difference check sees the same selection on every evaluation.
struct IffTape {
  enum class Mode { live, record, replay };
  Mode mode = Mode::live;
  std::vector<std::vector<unsigned char>> masks;
  std::size_t cursor = 0;

  void start_recording() { mode = Mode::record, masks.clear(), cursor = 0; }
  void start_replay() { mode = Mode::replay, cursor = 0; }
};

template <typename T>
Var iff_filter(Graph<T>& g, Var x, double p, IffScore score = IffScore::mean, IffTape* tape = nullptr);

}  // namespace yolod
