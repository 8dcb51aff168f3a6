#pragma once

// Detection loss in the YOLOv5 convention: CIoU box term and class BCE over
// AMP positives, objectness BCE over every slot with IoU-valued targets.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "yolod/amp.hpp"
#include "yolod/box.hpp"
#include "yolod/graph.hpp"
#include "yolod/model_config.hpp"

namespace yolod {

struct LossWeights {
  double box = 0.05;
  double obj = 1.0;
  double cls = 0.5;
  std::array<double, 3> balance{4.0, 1.0, 0.4};  // objectness, per level
};

struct LossReport {
  double total = 0, box = 0, obj = 0, cls = 0;
  std::int64_t n_positives = 0;
  bool finite() const;
  std::string describe() const;
};

// Values the loss treats as constants (objectness targets, CIoU aspect
// weights). Recording them once and replaying keeps finite differences
// consistent with the analytic gradient.
struct LossTape {
  enum class Mode { live, record, replay };
  Mode mode = Mode::live;
  std::vector<std::vector<double>> values;
  std::size_t cursor = 0;
  void start_recording() { mode = Mode::record; values.clear(); cursor = 0; }
  void start_replay() { mode = Mode::replay; cursor = 0; }
};

template <typename T>
struct LossTerms {
  Var total, box, obj, cls;
  LossReport report;
};

// raw: the three head outputs [N, 3*(5+nc), H, W]; gts: per-image boxes in
// pixels. Throws NumericError carrying the report when a component is not
// finite.
template <typename T>
LossTerms<T> detection_loss(Graph<T>& g, const std::array<Var, 3>& raw, const std::vector<std::vector<Box>>& gts,
                            const ModelConfig& cfg, const LossWeights& weights = {}, LossTape* tape = nullptr);

// Complete IoU of predicted boxes (x, y, w, h vars of shape [K]) against
// constant targets [K, 4] in the same (cx, cy, w, h) units. The aspect
// weight is detached.
template <typename T>
Var ciou(Graph<T>& g, Var x, Var y, Var w, Var h, const BasicTensor<T>& target, LossTape* tape = nullptr);

// Positives per image for the given head output sizes.
std::vector<Assignment> assign_image(const std::vector<Box>& gts, const ModelConfig& cfg,
                                     const std::array<std::array<int, 2>, 3>& grid_hw);

}  // namespace yolod
