#include <png.h>

#include <fstream>
#include <sstream>

#include "yolod/errors.hpp"
#include "yolod/image.hpp"

namespace yolod {

namespace fs = std::filesystem;

GrayImage read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_GRAY;
  GrayImage out(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  return out;
}

void write_png(const GrayImage& src, const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(src.width);
  img.height = static_cast<png_uint_32>(src.height);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, src.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.get();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      if (!tok.empty()) return tok;
    } else if (c != EOF) {
      tok.push_back(static_cast<char>(c));
    }
  }
  return tok;
}

int pgm_int(std::istream& in, const fs::path& path) {
  const std::string tok = pgm_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used == tok.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("bad PGM header field '" + tok + "' in " + path.string());
}

}  // namespace

GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = pgm_token(in);
  if (magic != "P5" && magic != "P2") throw FormatError("not a PGM file: " + path.string());
  const int w = pgm_int(in, path), h = pgm_int(in, path), maxval = pgm_int(in, path);
  if (maxval > 255) throw FormatError("16-bit PGM not supported: " + path.string());
  GrayImage img(w, h);
  if (magic == "P5") {
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
      throw FormatError("truncated PGM data in " + path.string());
    }
  } else {
    for (auto& p : img.pixels) {
      int v = -1;
      if (!(in >> v) || v < 0 || v > maxval) throw FormatError("bad PGM sample in " + path.string());
      p = static_cast<std::uint8_t>(v);
    }
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  }
  return img;
}

void write_pgm(const GrayImage& img, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

GrayImage read_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("image file not found: " + path.string());
  const auto ext = path.extension().string();
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  throw FormatError("unsupported image extension '" + ext + "': " + path.string());
}

void write_image(const GrayImage& img, const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") return write_png(img, path);
  if (ext == ".pgm") return write_pgm(img, path);
  throw FormatError("unsupported image extension '" + ext + "': " + path.string());
}

}  // namespace yolod
