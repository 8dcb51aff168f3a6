#include "yolod/anchors.hpp"

#include <algorithm>
#include <limits>

#include "yolod/errors.hpp"
#include "yolod/synth.hpp"

namespace yolod {

namespace {

using Wh = std::array<double, 2>;

double wh_iou(const Wh& a, const Wh& b) {
  const double inter = std::min(a[0], b[0]) * std::min(a[1], b[1]);
  return inter / (a[0] * a[1] + b[0] * b[1] - inter);
}

}  // namespace

std::array<LevelSpec, 3> kmeans_anchors(const std::vector<Wh>& sizes) {
  constexpr int k = 9;
  if (sizes.empty()) throw ConfigError("kmeans_anchors: no boxes");
  std::vector<Wh> pts = sizes;
  std::sort(pts.begin(), pts.end(), [](const Wh& a, const Wh& b) { return a[0] * a[1] < b[0] * b[1]; });
  std::vector<Wh> centers(k);
  for (int i = 0; i < k; ++i) centers[static_cast<std::size_t>(i)] = pts[(pts.size() - 1) * (2 * i + 1) / (2 * k)];
  std::vector<int> label(pts.size(), -1);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (std::size_t p = 0; p < pts.size(); ++p) {
      int best = 0;
      double best_iou = -1;
      for (int c = 0; c < k; ++c) {
        const double v = wh_iou(pts[p], centers[static_cast<std::size_t>(c)]);
        if (v > best_iou) best_iou = v, best = c;
      }
      changed = changed || label[p] != best;
      label[p] = best;
    }
    if (!changed) break;
    std::vector<Wh> sum(k, Wh{0, 0});
    std::vector<int> n(k, 0);
    for (std::size_t p = 0; p < pts.size(); ++p) {
      sum[static_cast<std::size_t>(label[p])][0] += pts[p][0];
      sum[static_cast<std::size_t>(label[p])][1] += pts[p][1];
      ++n[static_cast<std::size_t>(label[p])];
    }
    for (int c = 0; c < k; ++c) {
      if (n[static_cast<std::size_t>(c)] == 0) continue;
      centers[static_cast<std::size_t>(c)] = {sum[static_cast<std::size_t>(c)][0] / n[static_cast<std::size_t>(c)],
                                              sum[static_cast<std::size_t>(c)][1] / n[static_cast<std::size_t>(c)]};
    }
  }
  std::sort(centers.begin(), centers.end(), [](const Wh& a, const Wh& b) { return a[0] * a[1] < b[0] * b[1]; });
  std::array<LevelSpec, 3> levels;
  for (int l = 0; l < 3; ++l) {
    levels[static_cast<std::size_t>(l)].stride = 8 << l;
    for (int a = 0; a < 3; ++a) levels[static_cast<std::size_t>(l)].anchors[static_cast<std::size_t>(a)] = centers[static_cast<std::size_t>(3 * l + a)];
  }
  return levels;
}

const std::array<LevelSpec, 3>& synthetic_default_levels() {
  static const std::array<LevelSpec, 3> levels = [] {
    SyntheticSpec spec;
    std::vector<Wh> sizes;
    for (std::uint64_t i = 0; i < 512; ++i) {
      for (const Box& b : generate_annotation(spec, i).boxes) sizes.push_back({b.w, b.h});
    }
    return kmeans_anchors(sizes);
  }();
  return levels;
}

}  // namespace yolod
