#include "yolod/amp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "yolod/log.hpp"

namespace yolod {

CenterCell center_offset(double cx, double cy, double stride, int grid_w, int grid_h) {
  CenterCell c;
  c.col = std::clamp(static_cast<int>(std::floor(cx / stride)), 0, grid_w - 1);
  c.row = std::clamp(static_cast<int>(std::floor(cy / stride)), 0, grid_h - 1);
  c.offset = {cx / stride - c.col, cy / stride - c.row};
  return c;
}

AmpTier size_gate(double w, double h, double stride) {
  const double g = std::min(w, h) / stride;
  if (g < 1.0) return AmpTier::center_only;
  if (g < 2.0) return AmpTier::yolov5;
  return AmpTier::amp;
}

const char* to_string(AmpTier tier) {
  switch (tier) {
    case AmpTier::center_only: return "center_only";
    case AmpTier::yolov5: return "yolov5";
    case AmpTier::amp: return "amp";
  }
  return "?";
}

namespace {

// Nearer neighbor on one axis; none at exactly the middle.
int half_rule(double v) { return v < 0.5 ? -1 : v > 0.5 ? 1 : 0; }

std::vector<CellOffset> yolov5_cells(GridOffset o) {
  std::vector<CellOffset> cells{{0, 0}};
  if (const int dx = half_rule(o.x)) cells.push_back({dx, 0});
  if (const int dy = half_rule(o.y)) cells.push_back({0, dy});
  return cells;
}

std::vector<CellOffset> consistent_cells(GridOffset o) {
  std::vector<CellOffset> cells = yolov5_cells(o);
  const int dx = o.x < 0.35 ? -1 : o.x > 0.65 ? 1 : 0;
  const int dy = o.y < 0.35 ? -1 : o.y > 0.65 ? 1 : 0;
  if (dx && dy) cells.push_back({dx, dy});
  return cells;
}

// The eight published sets, point by point; each point is mapped to the cell
// containing it. Offsets outside all eight regions use the yolov5 rule.
std::vector<CellOffset> literal_cells(GridOffset o) {
  const double x = o.x, y = o.y;
  std::vector<std::array<double, 2>> pts;
  if (x < 0.35 && y < 0.35) {
    pts = {{x, y}, {x - 0.5, y}, {x, y - 0.5}, {x - 0.35, y - 0.35}};
  } else if (x >= 0.35 && x < 0.5 && y >= 0.35 && y < 0.5) {
    pts = {{x, y}, {x - 0.5, y}, {x, y - 0.5}};
  } else if (x >= 0.65 && y < 0.35) {
    pts = {{x, y}, {x + 0.5, y}, {x, y - 0.5}, {x + 0.35, y - 0.35}};
  } else if (x >= 0.5 && x < 0.65 && y >= 0.35 && y < 0.5) {
    pts = {{x, y}, {x - 0.5, y}, {x, y - 0.5}};
  } else if (x < 0.35 && y >= 0.65) {
    pts = {{x, y}, {x - 0.5, y}, {x, y + 0.5}, {x - 0.35, y + 0.35}};
  } else if (x >= 0.35 && x < 0.5 && y >= 0.5 && y < 0.65) {
    pts = {{x, y}, {x - 0.5, y}, {x, y + 0.5}};
  } else if (x >= 0.65 && y >= 0.65) {
    pts = {{x, y}, {x + 0.5, y}, {x, y + 0.5}, {x + 0.35, y + 0.35}};
  } else if (x >= 0.5 && x < 0.65 && y >= 0.5 && y < 0.65) {
    pts = {{x, y}, {x - 0.5, y}, {x, y + 0.5}};
  } else {
    return yolov5_cells(o);
  }
  std::vector<CellOffset> cells;
  for (const auto& p : pts) {
    cells.push_back({static_cast<int>(std::floor(p[0])), static_cast<int>(std::floor(p[1]))});
  }
  return cells;
}

}  // namespace

std::vector<CellOffset> amp_candidates(GridOffset offset, AmpTier tier, AmpMode mode) {
  std::vector<CellOffset> cells;
  switch (tier) {
    case AmpTier::center_only: cells = {{0, 0}}; break;
    case AmpTier::yolov5: cells = yolov5_cells(offset); break;
    case AmpTier::amp: cells = mode == AmpMode::literal ? literal_cells(offset) : consistent_cells(offset); break;
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  return cells;
}

std::vector<Assignment> assign(const std::vector<Box>& gts, const std::vector<LevelGrid>& levels, const AmpConfig& cfg) {
  std::vector<Assignment> out;
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    const Box& gt = gts[gi];
    if (!(gt.w > 0 && gt.h > 0)) {
      log::warn("assign: ground truth " + std::to_string(gi) + " has zero area; skipped");
      continue;
    }
    const std::size_t before = out.size();
    for (std::size_t li = 0; li < levels.size(); ++li) {
      const LevelGrid& lv = levels[li];
      const double stride = lv.spec.stride;
      const AmpTier tier = cfg.enabled ? size_gate(gt.w, gt.h, stride) : cfg.disabled_tier;
      const CenterCell cc = center_offset(gt.cx, gt.cy, stride, lv.grid_w, lv.grid_h);
      const auto cells = amp_candidates(cc.offset, tier, cfg.mode);
      for (int a = 0; a < kAnchorsPerLevel; ++a) {
        const double aw = lv.spec.anchors[static_cast<std::size_t>(a)][0];
        const double ah = lv.spec.anchors[static_cast<std::size_t>(a)][1];
        const double ratio = std::max({gt.w / aw, aw / gt.w, gt.h / ah, ah / gt.h});
        if (!(ratio < cfg.anchor_ratio)) continue;
        for (const CellOffset& d : cells) {
          const int col = cc.col + d.dc, row = cc.row + d.dr;
          if (col < 0 || row < 0 || col >= lv.grid_w || row >= lv.grid_h) continue;
          out.push_back({static_cast<int>(li), col, row, a, static_cast<int>(gi)});
        }
      }
    }
    if (out.size() == before) {
      log::warn("assign: ground truth " + std::to_string(gi) + " matched no anchor within ratio " +
                std::to_string(cfg.anchor_ratio));
    }
  }
  return out;
}

}  // namespace yolod
