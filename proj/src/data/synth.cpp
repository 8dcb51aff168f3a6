#include "yolod/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "yolod/errors.hpp"
#include "yolod/log.hpp"

namespace yolod {

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
  if (image_size < 8) fail("image_size must be >= 8");
  if (min_defects < 0 || max_defects < min_defects) fail("n_defects range must satisfy 0 <= min <= max");
  if (!(min_defect_size >= 2.0) || max_defect_size < min_defect_size || max_defect_size > image_size / 4.0) {
    fail("defect_size range must lie within [2, image_size/4]");
  }
  if (!(base_gray > 0 && base_gray < 255)) fail("base_gray must be in (0,255)");
  if (!(grain_amplitude >= 0 && grain_amplitude < 1)) fail("grain_amplitude must be in [0,1)");
  if (!(grain_scale >= 1)) fail("grain_scale must be >= 1");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Library distributions are implementation-defined; this keeps images
// identical across standard libraries.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) : eng_(splitmix(seed ^ splitmix(stream))) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1)); }

 private:
  std::mt19937_64 eng_;
};

double smooth(double t) { return t * t * (3 - 2 * t); }

// Value noise on a lattice with `cell` px spacing, in [0,1].
std::vector<double> value_noise(int size, double cell, Rng& rng) {
  const int n = static_cast<int>(std::ceil(size / cell)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(n) * n);
  for (double& v : lattice) v = rng.uniform();
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    const double fy = y / cell;
    const int iy = static_cast<int>(fy);
    const double ty = smooth(fy - iy);
    for (int x = 0; x < size; ++x) {
      const double fx = x / cell;
      const int ix = static_cast<int>(fx);
      const double tx = smooth(fx - ix);
      auto l = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * n + a]; };
      const double top = l(ix, iy) + (l(ix + 1, iy) - l(ix, iy)) * tx;
      const double bot = l(ix, iy + 1) + (l(ix + 1, iy + 1) - l(ix, iy + 1)) * tx;
      out[static_cast<std::size_t>(y) * size + x] = top + (bot - top) * ty;
    }
  }
  return out;
}

struct Blob {
  Box box;
  double contrast;
};

bool clear_of(const Box& a, const std::vector<Blob>& placed) {
  for (const Blob& b : placed) {
    const double m = kRingMargin;
    const bool apart = a.x2() + m <= b.box.x1() - m || b.box.x2() + m <= a.x1() - m ||
                       a.y2() + m <= b.box.y1() - m || b.box.y2() + m <= a.y1() - m;
    if (!apart) return false;
  }
  return true;
}

// False when some defect found no free spot.
bool place(const SyntheticSpec& spec, int count, Rng& rng, std::vector<Blob>& out) {
  out.clear();
  const double size = spec.image_size;
  for (int i = 0; i < count; ++i) {
    const double d = rng.uniform(spec.min_defect_size, spec.max_defect_size);
    const double minor = std::max(2.0, d * rng.uniform(0.7, 1.0));
    const bool wide = rng.uniform() < 0.5;
    const double w = wide ? d : minor, h = wide ? minor : d;
    const int cls = rng.uniform() < 0.5 ? black_spot : white_spot;
    const double contrast = rng.uniform(45.0, 80.0);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const double cx = rng.uniform(w / 2 + 1, size - w / 2 - 1);
      const double cy = rng.uniform(h / 2 + 1, size - h / 2 - 1);
      const Box b{cx, cy, w, h, cls};
      if (clear_of(b, out)) {
        out.push_back({b, contrast});
        ok = true;
      }
    }
    if (!ok) return false;
  }
  return true;
}

}  // namespace

namespace {

std::vector<Blob> place_all(const SyntheticSpec& spec, std::uint64_t index, int count) {
  std::vector<Blob> blobs;
  for (;;) {
    Rng placement(splitmix(spec.seed + 1), index * 64 + static_cast<std::uint64_t>(count));
    if (place(spec, count, placement, blobs)) return blobs;
    log::warn("image " + std::to_string(index) + ": could not place " + std::to_string(count) +
              " defects after 100 tries each; regenerating with " + std::to_string(count - 1));
    --count;
  }
}

}  // namespace

Annotation generate_annotation(const SyntheticSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng(spec.seed, index);
  const int count = rng.integer(spec.min_defects, spec.max_defects);
  Annotation a;
  for (const Blob& b : place_all(spec, index, count)) a.boxes.push_back(b.box);
  return a;
}

Sample generate_image(const SyntheticSpec& spec, std::uint64_t index) {
  spec.validate();
  Rng rng(spec.seed, index);
  const int size = spec.image_size;
  const int count = rng.integer(spec.min_defects, spec.max_defects);

  const auto coarse = value_noise(size, spec.grain_scale, rng);
  const auto fine = value_noise(size, std::max(1.0, spec.grain_scale / 3), rng);
  std::vector<double> field(static_cast<std::size_t>(size) * size);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const double grain = 0.65 * coarse[i] + 0.35 * fine[i] - 0.5;
    field[i] = spec.base_gray * (1.0 + 2.0 * spec.grain_amplitude * grain);
  }

  const std::vector<Blob> blobs = place_all(spec, index, count);

  for (const Blob& b : blobs) {
    const double sign = b.box.cls == black_spot ? -1.0 : 1.0;
    const double ax = b.box.w / 2, ay = b.box.h / 2;
    const int x0 = static_cast<int>(std::floor(b.box.x1())), x1 = static_cast<int>(std::ceil(b.box.x2()));
    const int y0 = static_cast<int>(std::floor(b.box.y1())), y1 = static_cast<int>(std::ceil(b.box.y2()));
    for (int y = std::max(0, y0); y < std::min(size, y1); ++y) {
      for (int x = std::max(0, x0); x < std::min(size, x1); ++x) {
        const double dx = (x + 0.5 - b.box.cx) / ax, dy = (y + 0.5 - b.box.cy) / ay;
        const double r = std::sqrt(dx * dx + dy * dy);
        if (r >= 1.0) continue;
        const double fall = r < 0.6 ? 1.0 : smooth((1.0 - r) / 0.4);
        field[static_cast<std::size_t>(y) * size + x] += sign * b.contrast * fall;
      }
    }
  }

  Sample s;
  s.image = GrayImage(size, size);
  for (std::size_t i = 0; i < field.size(); ++i) {
    s.image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(field[i]), 0L, 255L));
  }
  for (const Blob& b : blobs) s.annotation.boxes.push_back(b.box);
  return s;
}

}  // namespace yolod
