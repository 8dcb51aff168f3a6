#include "yolod/iff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "yolod/errors.hpp"
#include "yolod/log.hpp"
#include "yolod/ops.hpp"

namespace yolod {

double iff_schedule(double progress, const IffConfig& cfg) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    const double clamped = progress > 1.0 ? 1.0 : 0.0;
    log::warn("iff_schedule: progress " + std::to_string(progress) + " clamped to " + std::to_string(clamped));
    progress = clamped;
  }
  if (progress == 1.0) return cfg.p_end;
  return cfg.p_start + (cfg.p_end - cfg.p_start) * progress;
}

int iff_count(int channels, double p) { return static_cast<int>(std::floor(channels * p + 1e-9)); }

template <typename T>
std::vector<unsigned char> iff_select(const BasicTensor<T>& x, double p, IffScore score) {
  if (!(p >= 0.0 && p <= 0.5)) throw ConfigError("iff: filter fraction " + std::to_string(p) + " outside [0, 0.5]");
  if (x.rank() != 4) throw ShapeError("iff: expected [N,C,H,W], got " + to_string(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  const int k = iff_count(c, p);
  std::vector<unsigned char> keep(static_cast<std::size_t>(n) * c, 1);
  if (k == 0) return keep;
  std::vector<double> s(static_cast<std::size_t>(c));
  std::vector<int> order(static_cast<std::size_t>(c));
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* plane = x.ptr() + (static_cast<std::int64_t>(b) * c + ch) * hw;
      double acc = 0;
      for (std::int64_t i = 0; i < hw; ++i) acc += score == IffScore::abs_mean ? std::abs(plane[i]) : plane[i];
      s[static_cast<std::size_t>(ch)] = acc / static_cast<double>(hw);
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b2) { return s[a] < s[b2]; });
    for (int i = 0; i < k; ++i) keep[static_cast<std::size_t>(b) * c + order[static_cast<std::size_t>(i)]] = 0;
  }
  return keep;
}

template <typename T>
BasicTensor<T> iff_filter(const BasicTensor<T>& x, double p, IffScore score) {
  const auto keep = iff_select(x, p, score);
  BasicTensor<T> y = x;
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) std::fill_n(y.ptr() + static_cast<std::int64_t>(i) * hw, hw, T(0));
  }
  return y;
}

template <typename T>
Var iff_filter(Graph<T>& g, Var x, double p, IffScore score, IffTape* tape) {
  std::vector<unsigned char> keep;
  if (tape && tape->mode == IffTape::Mode::replay) {
    if (tape->cursor >= tape->masks.size()) throw ShapeError("iff: replay tape exhausted");
    keep = tape->masks[tape->cursor++];
  } else {
    keep = iff_select(g.value(x), p, score);
    if (tape && tape->mode == IffTape::Mode::record) tape->masks.push_back(keep);
  }
  if (std::all_of(keep.begin(), keep.end(), [](unsigned char v) { return v != 0; })) return x;
  return ops::mask_channels(g, x, keep);
}

template std::vector<unsigned char> iff_select<float>(const Tensor&, double, IffScore);
template std::vector<unsigned char> iff_select<double>(const TensorD&, double, IffScore);
template Tensor iff_filter<float>(const Tensor&, double, IffScore);
template TensorD iff_filter<double>(const TensorD&, double, IffScore);
template Var iff_filter<float>(Graph<float>&, Var, double, IffScore, IffTape*);
template Var iff_filter<double>(Graph<double>&, Var, double, IffScore, IffTape*);

}  // namespace yolod
