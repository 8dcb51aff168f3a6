#include <algorithm>
#include <cstring>
#include <vector>

#include "yolod/kernels.hpp"

namespace yolod::kernels::fast {
namespace {

// Register tile: MR rows of A against NR columns of B.
constexpr int kMR = 8;
constexpr int kNR = 32;
constexpr int kKC = 256;
constexpr int kMC = 128;
constexpr int kNC = 4096;

// Packs op(A)[i0:i0+mc, p0:p0+kc] into row panels of kMR, k-major, zero padded.
void pack_a(bool trans, const float* a, int lda, int i0, int mc, int p0, int kc, float* out) {
  for (int ir = 0; ir < mc; ir += kMR) {
    const int mr = std::min(kMR, mc - ir);
    float* panel = out + static_cast<std::size_t>(ir) * kc;
    for (int p = 0; p < kc; ++p) {
      float* dst = panel + static_cast<std::size_t>(p) * kMR;
      for (int i = 0; i < mr; ++i) {
        const int row = i0 + ir + i, col = p0 + p;
        dst[i] = trans ? a[static_cast<std::size_t>(col) * lda + row] : a[static_cast<std::size_t>(row) * lda + col];
      }
      for (int i = mr; i < kMR; ++i) dst[i] = 0.f;
    }
  }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into column panels of kNR, k-major, zero padded.
void pack_b(bool trans, const float* b, int ldb, int p0, int kc, int j0, int nc, float* out) {
  const int panels = (nc + kNR - 1) / kNR;
#pragma omp parallel for schedule(static)
  for (int jp = 0; jp < panels; ++jp) {
    const int jr = jp * kNR;
    const int nr = std::min(kNR, nc - jr);
    float* panel = out + static_cast<std::size_t>(jr) * kc;
    for (int p = 0; p < kc; ++p) {
      float* dst = panel + static_cast<std::size_t>(p) * kNR;
      if (!trans && nr == kNR) {
        std::memcpy(dst, b + static_cast<std::size_t>(p0 + p) * ldb + j0 + jr, sizeof(float) * kNR);
        continue;
      }
      for (int j = 0; j < nr; ++j) {
        const int row = p0 + p, col = j0 + jr + j;
        dst[j] = trans ? b[static_cast<std::size_t>(col) * ldb + row] : b[static_cast<std::size_t>(row) * ldb + col];
      }
      for (int j = nr; j < kNR; ++j) dst[j] = 0.f;
    }
  }
}

void micro_kernel(int kc, const float* __restrict ap, const float* __restrict bp, float* c, int ldc, int mr, int nr,
                  bool overwrite) {
  float acc[kMR][kNR] = {};
  for (int p = 0; p < kc; ++p) {
    const float* brow = bp + static_cast<std::size_t>(p) * kNR;
    const float* acol = ap + static_cast<std::size_t>(p) * kMR;
    for (int i = 0; i < kMR; ++i) {
      const float av = acol[i];
#pragma omp simd
      for (int j = 0; j < kNR; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (int i = 0; i < mr; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * ldc;
    if (overwrite) {
      for (int j = 0; j < nr; ++j) crow[j] = acc[i][j];
    } else {
      for (int j = 0; j < nr; ++j) crow[j] += acc[i][j];
    }
  }
}

thread_local std::vector<float> t_pack_a;
thread_local std::vector<float> t_pack_b;
thread_local std::vector<float> t_col;

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a, int lda, const float* b, int ldb, float* c,
          int ldc, bool accumulate) {
  if (m <= 0 || n <= 0) return;
  if (k <= 0) {
    if (!accumulate)
      for (int i = 0; i < m; ++i) std::fill_n(c + static_cast<std::size_t>(i) * ldc, n, 0.f);
    return;
  }
  t_pack_a.resize(static_cast<std::size_t>(kMC + kMR) * kKC);
  t_pack_b.resize(static_cast<std::size_t>(kNC + kNR) * kKC);
  for (int jc = 0; jc < n; jc += kNC) {
    const int nc = std::min(kNC, n - jc);
    for (int pc = 0; pc < k; pc += kKC) {
      const int kc = std::min(kKC, k - pc);
      const bool overwrite = pc == 0 && !accumulate;
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, t_pack_b.data());
      for (int ic = 0; ic < m; ic += kMC) {
        const int mc = std::min(kMC, m - ic);
        pack_a(trans_a, a, lda, ic, mc, pc, kc, t_pack_a.data());
        const float* pa = t_pack_a.data();
        const float* pb = t_pack_b.data();
        const int panels = (nc + kNR - 1) / kNR;
#pragma omp parallel for schedule(static)
        for (int jp = 0; jp < panels; ++jp) {
          const int jr = jp * kNR;
          const int nr = std::min(kNR, nc - jr);
          for (int ir = 0; ir < mc; ir += kMR) {
            const int mr = std::min(kMR, mc - ir);
            micro_kernel(kc, pa + static_cast<std::size_t>(ir) * kc, pb + static_cast<std::size_t>(jr) * kc,
                         c + static_cast<std::size_t>(ic + ir) * ldc + jc + jr, ldc, mr, nr, overwrite);
          }
        }
      }
    }
  }
}

void im2col(const ConvGeometry& g, const float* x, float* col) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const int rows = g.patch();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int kx = r % k, ky = (r / k) % k, c = r / (k * k);
    const float* plane = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    float* dst = col + static_cast<std::size_t>(r) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const int iy = oy * g.stride - g.pad + ky;
      float* drow = dst + static_cast<std::size_t>(oy) * ow;
      if (iy < 0 || iy >= g.in_h) {
        std::fill_n(drow, ow, 0.f);
        continue;
      }
      const float* srow = plane + static_cast<std::size_t>(iy) * g.in_w;
      for (int ox = 0; ox < ow; ++ox) {
        const int ix = ox * g.stride - g.pad + kx;
        drow[ox] = (ix >= 0 && ix < g.in_w) ? srow[ix] : 0.f;
      }
    }
  }
}

void col2im(const ConvGeometry& g, const float* col, float* x) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  // One thread per input channel so each x element has a single writer.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.in_channels; ++c) {
    float* plane = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          float* xrow = plane + static_cast<std::size_t>(iy) * g.in_w;
          const float* srow = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) xrow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

namespace {
bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }
}  // namespace

void conv2d_forward(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* y) {
  const int hw = g.out_h() * g.out_w();
  const int patch = g.patch();
  const std::size_t in_size = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_size = static_cast<std::size_t>(g.out_channels) * hw;
  if (!is_pointwise(g)) t_col.resize(static_cast<std::size_t>(patch) * hw);
  for (int n = 0; n < g.batch; ++n) {
    const float* xn = x + n * in_size;
    float* yn = y + n * out_size;
    const float* col = xn;
    if (!is_pointwise(g)) {
      im2col(g, xn, t_col.data());
      col = t_col.data();
    }
    gemm(false, false, g.out_channels, hw, patch, w, patch, col, hw, yn, hw, false);
    if (bias) {
#pragma omp parallel for schedule(static)
      for (int co = 0; co < g.out_channels; ++co) {
        float* row = yn + static_cast<std::size_t>(co) * hw;
        const float b = bias[co];
        for (int i = 0; i < hw; ++i) row[i] += b;
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, const float* w, const float* gy, float* gx) {
  const int hw = g.out_h() * g.out_w();
  const int patch = g.patch();
  const std::size_t in_size = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_size = static_cast<std::size_t>(g.out_channels) * hw;
  if (!is_pointwise(g)) t_col.resize(static_cast<std::size_t>(patch) * hw);
  for (int n = 0; n < g.batch; ++n) {
    if (is_pointwise(g)) {
      gemm(true, false, patch, hw, g.out_channels, w, patch, gy + n * out_size, hw, gx + n * in_size, hw, true);
    } else {
      gemm(true, false, patch, hw, g.out_channels, w, patch, gy + n * out_size, hw, t_col.data(), hw, false);
      col2im(g, t_col.data(), gx + n * in_size);
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& g, const float* x, const float* gy, float* gw, float* gb) {
  const int hw = g.out_h() * g.out_w();
  const int patch = g.patch();
  const std::size_t in_size = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
  const std::size_t out_size = static_cast<std::size_t>(g.out_channels) * hw;
  if (!is_pointwise(g)) t_col.resize(static_cast<std::size_t>(patch) * hw);
  for (int n = 0; n < g.batch; ++n) {
    const float* col = x + n * in_size;
    if (!is_pointwise(g)) {
      im2col(g, x + n * in_size, t_col.data());
      col = t_col.data();
    }
    gemm(false, true, g.out_channels, patch, hw, gy + n * out_size, hw, col, hw, gw, patch, true);
  }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.out_channels; ++co) {
      double acc = 0.0;
      for (int n = 0; n < g.batch; ++n) {
        const float* row = gy + n * out_size + static_cast<std::size_t>(co) * hw;
        for (int i = 0; i < hw; ++i) acc += row[i];
      }
      gb[co] += static_cast<float>(acc);
    }
  }
}

}  // namespace yolod::kernels::fast
