#include "yolod/eos.hpp"

#include <cmath>
#include <string>

#include "yolod/errors.hpp"
#include "yolod/ops.hpp"

namespace yolod {

void EosConfig::validate() const {
  if (!(scale >= 1.0)) throw ConfigError("eos.scale must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("eos.alpha must be > 0");
}

double sigmoid(double t) { return t >= 0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t)); }

double decode_xy(double t, double scale, double alpha, double c) {
  const double factor = alpha / scale;
  return scale * sigmoid(t * factor) - (scale - 1) / 2 + c;
}

double baseline_decode_xy(double t, double scale, double c) { return scale * sigmoid(t) - (scale - 1) / 2 + c; }

double xy_slope(double t, double scale, double alpha) {
  const double s = sigmoid(t * (alpha / scale));
  return alpha * s * (1 - s);
}

double baseline_xy_slope(double t, double scale) {
  const double s = sigmoid(t);
  return scale * s * (1 - s);
}

std::array<double, 2> decode_wh(double tw, double th, double anchor_w, double anchor_h) {
  const double sw = 2 * sigmoid(tw), sh = 2 * sigmoid(th);
  return {sw * sw * anchor_w, sh * sh * anchor_h};
}

template <typename T>
Var decode_xy(Graph<T>& g, Var t, double scale, double alpha) {
  const double factor = alpha / scale;
  Var u = factor == 1.0 ? t : ops::mul_scalar(g, t, factor);
  return ops::add_scalar(g, ops::mul_scalar(g, ops::sigmoid(g, u), scale), -(scale - 1) / 2);
}

template <typename T>
Var decode_wh(Graph<T>& g, Var t, Var anchor) {
  return ops::mul(g, ops::square(g, ops::mul_scalar(g, ops::sigmoid(g, t), 2.0)), anchor);
}

template <typename T>
std::vector<Candidate> decode_all(const BasicTensor<T>& raw, int image, const LevelSpec& level, int num_classes,
                                  const EosConfig& eos) {
  const int per = 5 + num_classes;
  if (raw.rank() != 4 || raw.dim(1) != kAnchorsPerLevel * per) {
    throw ShapeError("decode_all: raw output " + to_string(raw.shape()) + " does not match " +
                     std::to_string(kAnchorsPerLevel) + " anchors x (5+" + std::to_string(num_classes) + ")");
  }
  if (image < 0 || image >= raw.dim(0)) throw ShapeError("decode_all: image index out of range");
  const int h = raw.dim(2), w = raw.dim(3);
  const double alpha = eos.effective_alpha();
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(kAnchorsPerLevel) * h * w);
  auto at = [&](int a, int ch, int y, int x) { return static_cast<double>(raw.at(image, a * per + ch, y, x)); };
  for (int a = 0; a < kAnchorsPerLevel; ++a) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        Candidate c;
        c.box.cx = decode_xy(at(a, 0, y, x), eos.scale, alpha, x) * level.stride;
        c.box.cy = decode_xy(at(a, 1, y, x), eos.scale, alpha, y) * level.stride;
        const auto wh = decode_wh(at(a, 2, y, x), at(a, 3, y, x), level.anchors[a][0], level.anchors[a][1]);
        c.box.w = wh[0];
        c.box.h = wh[1];
        c.obj = sigmoid(at(a, 4, y, x));
        c.cls.resize(static_cast<std::size_t>(num_classes));
        for (int k = 0; k < num_classes; ++k) c.cls[static_cast<std::size_t>(k)] = sigmoid(at(a, 5 + k, y, x));
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

template Var decode_xy<float>(Graph<float>&, Var, double, double);
template Var decode_xy<double>(Graph<double>&, Var, double, double);
template Var decode_wh<float>(Graph<float>&, Var, Var);
template Var decode_wh<double>(Graph<double>&, Var, Var);
template std::vector<Candidate> decode_all<float>(const Tensor&, int, const LevelSpec&, int, const EosConfig&);
template std::vector<Candidate> decode_all<double>(const TensorD&, int, const LevelSpec&, int, const EosConfig&);

}  // namespace yolod
