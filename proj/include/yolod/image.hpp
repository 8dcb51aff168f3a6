#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace yolod {

// 8-bit single-channel image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

GrayImage read_png(const std::filesystem::path& path);
void write_png(const GrayImage& img, const std::filesystem::path& path);
// Binary (P5) and ASCII (P2) graymaps with maxval <= 255 are accepted.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& img, const std::filesystem::path& path);

// Dispatches on the extension (.png or .pgm).
GrayImage read_image(const std::filesystem::path& path);
void write_image(const GrayImage& img, const std::filesystem::path& path);

}  // namespace yolod
