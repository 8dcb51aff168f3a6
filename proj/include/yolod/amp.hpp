#pragma once

// Adaptive Multi Positives: which grid cells around a ground truth's own cell
// are trained as positives, gated by the box size in grid units.

#include <vector>

#include "yolod/box.hpp"
#include "yolod/eos.hpp"

namespace yolod {

enum class AmpTier { center_only, yolov5, amp };
enum class AmpMode { literal, yolov5_consistent };

struct AmpConfig {
  bool enabled = true;
  AmpMode mode = AmpMode::yolov5_consistent;
  // Rule used at every size when AMP is disabled.
  AmpTier disabled_tier = AmpTier::center_only;
  double anchor_ratio = 4.0;
};

// Fractional position of a center inside its cell.
struct GridOffset {
  double x = 0, y = 0;
};

struct CellOffset {
  int dc = 0, dr = 0;
  auto operator<=>(const CellOffset&) const = default;
};

struct CenterCell {
  int col = 0, row = 0;
  GridOffset offset;
};

// col = floor(cx/stride) clamped into [0, grid_w); the offset is taken
// relative to the clamped cell.
CenterCell center_offset(double cx, double cy, double stride, int grid_w, int grid_h);

// min(w,h)/stride: < 1 center_only, [1,2) yolov5, >= 2 amp.
AmpTier size_gate(double w, double h, double stride);

// Sorted relative cells; always contains (0,0).
std::vector<CellOffset> amp_candidates(GridOffset offset, AmpTier tier, AmpMode mode);

struct Assignment {
  int level = 0, col = 0, row = 0, anchor = 0, gt = 0;
  bool operator==(const Assignment&) const = default;
};

struct LevelGrid {
  LevelSpec spec;
  int grid_w = 0, grid_h = 0;
};

// One entry per (gt, level, anchor passing the ratio filter, candidate cell
// inside the grid).
std::vector<Assignment> assign(const std::vector<Box>& gts, const std::vector<LevelGrid>& levels, const AmpConfig& cfg);

const char* to_string(AmpTier tier);

}  // namespace yolod
