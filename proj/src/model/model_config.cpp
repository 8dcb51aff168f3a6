#include "yolod/model_config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "yolod/anchors.hpp"
#include "yolod/errors.hpp"

namespace yolod {

ModelConfig ModelConfig::preset(const std::string& name) {
  std::string n = name;
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  ModelConfig cfg;
  if (n == "l") {
    cfg.depth_mult = 1.0, cfg.width_mult = 1.0;
  } else if (n == "m") {
    cfg.depth_mult = 0.67, cfg.width_mult = 0.75;
  } else if (n == "s") {
    cfg.depth_mult = 0.3, cfg.width_mult = 0.5;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected s, m or l)");
  }
  return cfg;
}

std::array<LevelSpec, 3> ModelConfig::default_levels() { return synthetic_default_levels(); }

int ModelConfig::width(int base) const {
  return std::max(8, static_cast<int>(std::lround(base * width_mult / 8.0)) * 8);
}

int ModelConfig::depth(int base) const { return std::max(1, static_cast<int>(std::lround(base * depth_mult))); }

void ModelConfig::validate() const {
  if (!(depth_mult > 0) || !(width_mult > 0)) throw ConfigError("depth_mult and width_mult must be positive");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  for (int b : base_channels)
    if (b < 8) throw ConfigError("base channels must be >= 8");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    if (levels[l].stride != static_cast<double>(8 << l)) throw ConfigError("level strides are fixed at 8, 16, 32");
    for (const auto& a : levels[l].anchors)
      if (!(a[0] > 0 && a[1] > 0)) throw ConfigError("anchors must be positive");
  }
  if (!(iff.p_start >= 0 && iff.p_start <= 0.5 && iff.p_end >= 0 && iff.p_end <= 0.5)) {
    throw ConfigError("iff.p_start and iff.p_end must lie in [0, 0.5]");
  }
  if (iff.p_end > iff.p_start) throw ConfigError("iff.p_end must not exceed iff.p_start");
  if (!(amp.anchor_ratio > 1)) throw ConfigError("amp.anchor_ratio must be > 1");
  eos.validate();
}

}  // namespace yolod
