#pragma once

// Procedural stand-in for artificial-leather inspection images: a grainy
// multiplicative texture with small dark or bright blob defects.

#include <cstdint>
#include <string>
#include <vector>

#include "yolod/box.hpp"
#include "yolod/image.hpp"

namespace yolod {

enum DefectClass : int { black_spot = 0, white_spot = 1 };
inline constexpr int kNumDefectClasses = 2;

struct SyntheticSpec {
  int image_size = 160;
  double base_gray = 150.0;
  double grain_amplitude = 0.18;  // relative intensity swing of the texture
  double grain_scale = 6.0;       // pixels per lattice cell of the coarse grain
  int min_defects = 1;
  int max_defects = 4;
  double min_defect_size = 4.0;
  double max_defect_size = 20.0;
  std::uint64_t seed = 0;

  // Throws ConfigError when a field is out of range.
  void validate() const;
};

struct Annotation {
  std::string image;
  std::vector<Box> boxes;
  bool operator==(const Annotation&) const = default;
};

struct Sample {
  GrayImage image;
  Annotation annotation;
};

// Pure in (spec, index). The annotation name is left empty.
Sample generate_image(const SyntheticSpec& spec, std::uint64_t index);
// Same boxes as generate_image without rendering the texture.
Annotation generate_annotation(const SyntheticSpec& spec, std::uint64_t index);

// Margin around a box that the placement rule keeps free of other defects;
// the contrast check compares a box against this ring.
inline constexpr double kRingMargin = 3.0;

}  // namespace yolod
