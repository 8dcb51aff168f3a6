#pragma once

// Box decoding. Centers use the slope-stabilized sigmoid
//   b = scale * sigmoid(t * alpha/scale) - (scale-1)/2 + c
// whose slope at t = 0 is alpha/4 whatever the scale; alpha = scale gives the
// plain grid-sensitivity decode. Sizes use (2*sigmoid(t))^2 * anchor.

#include <array>
#include <vector>

#include "yolod/box.hpp"
#include "yolod/graph.hpp"

namespace yolod {

struct EosConfig {
  bool enabled = true;
  double scale = 2.0;
  double alpha = 2.0;

  // With EOS disabled the slope follows the scale (alpha = scale).
  double effective_alpha() const { return enabled ? alpha : scale; }
  void validate() const;
};

double sigmoid(double t);

double decode_xy(double t, double scale, double alpha, double c);
double baseline_decode_xy(double t, double scale, double c);
double xy_slope(double t, double scale, double alpha);
double baseline_xy_slope(double t, double scale);
std::array<double, 2> decode_wh(double tw, double th, double anchor_w, double anchor_h);

// Graph forms on raw logits (cell offset c omitted).
template <typename T>
Var decode_xy(Graph<T>& g, Var t, double scale, double alpha);
template <typename T>
Var decode_wh(Graph<T>& g, Var t, Var anchor);

// One detection level: grid stride and its three anchors in pixels.
struct LevelSpec {
  double stride = 8;
  std::array<std::array<double, 2>, 3> anchors{};
};

inline constexpr int kAnchorsPerLevel = 3;

struct Candidate {
  Box box;        // pixels
  double obj = 0;
  std::vector<double> cls;  // per-class probabilities
};

// Decodes one image of a raw head output [N, 3*(5+nc), H, W]. Channel layout
// per anchor: t_x, t_y, t_w, t_h, t_obj, t_cls...
template <typename T>
std::vector<Candidate> decode_all(const BasicTensor<T>& raw, int image, const LevelSpec& level, int num_classes,
                                  const EosConfig& eos);

}  // namespace yolod
