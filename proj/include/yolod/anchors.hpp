#pragma once

#include <array>
#include <vector>

#include "yolod/eos.hpp"

namespace yolod {

// k-means over (w,h) with 1 - IoU (boxes aligned at the origin) as distance.
// Returns 9 anchors sorted by area, three per level from stride 8 to 32.
std::array<LevelSpec, 3> kmeans_anchors(const std::vector<std::array<double, 2>>& sizes);

// Anchors fitted to the default synthetic generator (computed once).
const std::array<LevelSpec, 3>& synthetic_default_levels();

}  // namespace yolod
