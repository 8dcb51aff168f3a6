#pragma once

// On-disk dataset: images plus one `annotations.txt` with a line per image,
//   name cx,cy,w,h,class; cx,cy,w,h,class; ...
// Coordinates are pixel floats written in shortest round-trip form.

#include <filesystem>
#include <string>
#include <vector>

#include "yolod/image.hpp"
#include "yolod/synth.hpp"

namespace yolod {

struct Dataset {
  std::vector<GrayImage> images;
  std::vector<Annotation> annotations;  // annotations[i] describes images[i]

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  bool operator==(const Dataset&) const = default;
};

// Images named 000000.png, 000001.png, ... Generation runs in parallel over
// indices; the result does not depend on the thread count.
Dataset generate_dataset(const SyntheticSpec& spec, int count, const std::string& extension = ".png");

void write_dataset(const Dataset& data, const std::filesystem::path& dir);
// An existing directory without annotations.txt is an empty dataset.
Dataset load_dataset(const std::filesystem::path& dir);

std::string format_annotation_line(const Annotation& a);
// Throws FormatError carrying `line_no` on malformed input.
Annotation parse_annotation_line(const std::string& line, std::size_t line_no);

}  // namespace yolod
