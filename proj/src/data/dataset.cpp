#include "yolod/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "yolod/errors.hpp"

namespace yolod {

namespace fs = std::filesystem;

Dataset generate_dataset(const SyntheticSpec& spec, int count, const std::string& extension) {
  spec.validate();
  if (count < 0) throw ConfigError("dataset count must be >= 0");
  Dataset d;
  d.images.resize(static_cast<std::size_t>(count));
  d.annotations.resize(static_cast<std::size_t>(count));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    Sample s = generate_image(spec, static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "%06d", i);
    s.annotation.image = name + extension;
    d.images[static_cast<std::size_t>(i)] = std::move(s.image);
    d.annotations[static_cast<std::size_t>(i)] = std::move(s.annotation);
  }
  return d;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(std::string_view s, std::size_t line_no) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw FormatError("bad number '" + std::string(s) + "' in annotation", line_no);
  }
  return v;
}

}  // namespace

std::string format_annotation_line(const Annotation& a) {
  std::string out = a.image;
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    const Box& b = a.boxes[i];
    out += i == 0 ? " " : "; ";
    out += shortest(b.cx) + ',' + shortest(b.cy) + ',' + shortest(b.w) + ',' + shortest(b.h) + ',' +
           std::to_string(b.cls);
  }
  return out;
}

Annotation parse_annotation_line(const std::string& line, std::size_t line_no) {
  Annotation a;
  const auto space = line.find(' ');
  a.image = line.substr(0, space);
  if (a.image.empty()) throw FormatError("missing image name", line_no);
  if (space == std::string::npos) return a;
  std::string_view rest(line);
  rest.remove_prefix(space + 1);
  while (!rest.empty()) {
    const auto semi = rest.find(';');
    std::string_view item = rest.substr(0, semi);
    rest = semi == std::string_view::npos ? std::string_view{} : rest.substr(semi + 1);
    if (item.find_first_not_of(' ') == std::string_view::npos) continue;
    double f[5];
    for (int k = 0; k < 5; ++k) {
      const auto comma = item.find(',');
      if ((k < 4) == (comma == std::string_view::npos)) {
        throw FormatError("box needs exactly 5 fields cx,cy,w,h,class", line_no);
      }
      f[k] = parse_double(item.substr(0, comma), line_no);
      item = k < 4 ? item.substr(comma + 1) : std::string_view{};
    }
    const int cls = static_cast<int>(f[4]);
    if (cls != f[4] || cls < 0 || cls >= kNumDefectClasses) throw FormatError("bad class id", line_no);
    if (!(f[2] > 0 && f[3] > 0)) throw FormatError("box extents must be positive", line_no);
    a.boxes.push_back({f[0], f[1], f[2], f[3], cls});
  }
  return a;
}

void write_dataset(const Dataset& d, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
  std::ofstream ann(dir / "annotations.txt");
  if (!ann) throw IoError("cannot write " + (dir / "annotations.txt").string());
  for (std::size_t i = 0; i < d.size(); ++i) {
    write_image(d.images[i], dir / d.annotations[i].image);
    ann << format_annotation_line(d.annotations[i]) << '\n';
  }
  if (!ann) throw IoError("write failed: " + (dir / "annotations.txt").string());
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  Dataset d;
  const fs::path ann_path = dir / "annotations.txt";
  if (!fs::exists(ann_path)) return d;
  std::ifstream in(ann_path);
  if (!in) throw IoError("cannot read " + ann_path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    Annotation a = parse_annotation_line(line, line_no);
    const fs::path img_path = dir / a.image;
    if (!fs::exists(img_path)) {
      throw IoError("annotation line " + std::to_string(line_no) + " references missing image " + img_path.string());
    }
    GrayImage img = read_image(img_path);
    for (const Box& b : a.boxes) {
      if (b.x1() < 0 || b.y1() < 0 || b.x2() > img.width || b.y2() > img.height) {
        throw FormatError("box extends outside " + a.image, line_no);
      }
    }
    d.images.push_back(std::move(img));
    d.annotations.push_back(std::move(a));
  }
  return d;
}

}  // namespace yolod
