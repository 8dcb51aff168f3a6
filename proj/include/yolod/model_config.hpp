#pragma once

#include <array>
#include <string>

#include "yolod/amp.hpp"
#include "yolod/eos.hpp"
#include "yolod/iff.hpp"

namespace yolod {

enum class NeckKind { dfp, fpn_pan };
// Where IFF and SAM sit relative to the final CSP block of each head input.
enum class EnhanceOrder { iff_sam_csp, csp_iff_sam };

struct ModelConfig {
  std::array<int, 3> base_channels{64, 128, 256};
  double depth_mult = 1.0;
  double width_mult = 1.0;
  int num_classes = 2;
  std::array<LevelSpec, 3> levels = default_levels();
  int sam_kernel = 7;
  NeckKind neck = NeckKind::dfp;
  bool pan_tail = false;
  EnhanceOrder enhance_order = EnhanceOrder::iff_sam_csp;
  IffConfig iff;
  AmpConfig amp;
  EosConfig eos;

  // "s", "m" or "l" (case-insensitive); throws ConfigError otherwise.
  static ModelConfig preset(const std::string& name);
  static std::array<LevelSpec, 3> default_levels();

  // Nearest multiple of 8, at least 8.
  int width(int base) const;
  // Nearest integer, at least 1.
  int depth(int base) const;
  std::array<int, 3> channels() const { return {width(base_channels[0]), width(base_channels[1]), width(base_channels[2])}; }
  void validate() const;
};

}  // namespace yolod
