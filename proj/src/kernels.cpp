#include "swwae/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace swwae::kernels {
namespace {

// 4 x 16 register tile held in GCC/Clang vector-extension registers.
using Lane = double __attribute__((vector_size(64)));
constexpr std::size_t kLaneWidth = sizeof(Lane) / sizeof(double);
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileLanes = 2;
constexpr std::size_t kTileCols = kTileLanes * kLaneWidth;

std::vector<double> transposed(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

template <std::size_t Rows>
void tile(std::size_t k, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc, bool accumulate) {
  Lane acc[Rows][kTileLanes] = {};
  for (std::size_t p = 0; p < k; ++p) {
    Lane bv[kTileLanes];
    for (std::size_t v = 0; v < kTileLanes; ++v) {
      std::memcpy(&bv[v], b + p * ldb + v * kLaneWidth, sizeof(Lane));
    }
    for (std::size_t r = 0; r < Rows; ++r) {
      const double av = a[r * lda + p];
      for (std::size_t v = 0; v < kTileLanes; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    for (std::size_t v = 0; v < kTileLanes; ++v) {
      double* dst = c + r * ldc + v * kLaneWidth;
      if (accumulate) {
        Lane cur;
        std::memcpy(&cur, dst, sizeof(Lane));
        acc[r][v] += cur;
      }
      std::memcpy(dst, &acc[r][v], sizeof(Lane));
    }
  }
}

// a: m x k, b: k x n, both untransposed and densely packed.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  const std::size_t full_cols = n - n % kTileCols;
  for (std::size_t j0 = 0; j0 < full_cols; j0 += kTileCols) {
    std::size_t i0 = 0;
    for (; i0 + kTileRows <= m; i0 += kTileRows) {
      tile<kTileRows>(k, a + i0 * k, k, b + j0, n, c + i0 * n + j0, n, accumulate);
    }
    const double* ar = a + i0 * k;
    double* cr = c + i0 * n + j0;
    switch (m - i0) {
      case 3: tile<3>(k, ar, k, b + j0, n, cr, n, accumulate); break;
      case 2: tile<2>(k, ar, k, b + j0, n, cr, n, accumulate); break;
      case 1: tile<1>(k, ar, k, b + j0, n, cr, n, accumulate); break;
      default: break;
    }
  }
  if (full_cols == n) return;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = full_cols; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const double* plane = x + ci * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        double* row = cols + ((ci * g.kernel + ki) * g.kernel + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - pad;
          double* out = row + y * ow;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + ow, 0.0);
            continue;
          }
          const double* src = plane + sy * w;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xo + kj) - pad;
            out[xo] = (sx < 0 || sx >= w) ? 0.0 : src[sx];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const auto h = static_cast<std::ptrdiff_t>(g.height);
  const auto w = static_cast<std::ptrdiff_t>(g.width);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  std::fill(x, x + g.in_channels * g.height * g.width, 0.0);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    double* plane = x + ci * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const double* row = cols + ((ci * g.kernel + ki) * g.kernel + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ki) - pad;
          if (sy < 0 || sy >= h) continue;
          double* dst = plane + sy * w;
          const double* src = row + y * ow;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xo + kj) - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[xo];
          }
        }
      }
    }
  }
}

// Direct convolution for layers with very few output channels, where the
// GEMM tile would run one row wide. Works on a zero-padded input copy.
void pad_input(const ConvGeometry& g, const double* x, double* xp) {
  const std::size_t hp = g.height + 2 * g.pad, wp = g.width + 2 * g.pad;
  std::fill(xp, xp + g.in_channels * hp * wp, 0.0);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t y = 0; y < g.height; ++y) {
      std::copy_n(x + (ci * g.height + y) * g.width, g.width,
                  xp + (ci * hp + y + g.pad) * wp + g.pad);
    }
  }
}

void direct_forward(const ConvGeometry& g, const double* xp, const double* weights,
                    const double* bias, double* y) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t hp = g.height + 2 * g.pad, wp = g.width + 2 * g.pad;
  const std::size_t kk = g.kernel * g.kernel;
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    double* out = y + o * oh * ow;
    std::fill(out, out + oh * ow, 0.0);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t ki = 0; ki < g.kernel; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
          const double wv = weights[(o * g.in_channels + ci) * kk + ki * g.kernel + kj];
          for (std::size_t r = 0; r < oh; ++r) {
            const double* src = xp + (ci * hp + r + ki) * wp + kj;
            double* dst = out + r * ow;
            for (std::size_t c = 0; c < ow; ++c) dst[c] += wv * src[c];
          }
        }
      }
    }
    for (std::size_t p = 0; p < oh * ow; ++p) out[p] += bias[o];
  }
}

void direct_backward(const ConvGeometry& g, const double* xp, const double* weights,
                     const double* gy, double* grad_xp, double* grad_w) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t hp = g.height + 2 * g.pad, wp = g.width + 2 * g.pad;
  const std::size_t kk = g.kernel * g.kernel;
  if (grad_xp) std::fill(grad_xp, grad_xp + g.in_channels * hp * wp, 0.0);
  std::vector<double> lanes(ow);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* go = gy + o * oh * ow;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      for (std::size_t ki = 0; ki < g.kernel; ++ki) {
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
          const std::size_t wi = (o * g.in_channels + ci) * kk + ki * g.kernel + kj;
          const double wv = weights[wi];
          // Column-wise partial sums keep the reduction vectorizable.
          std::fill(lanes.begin(), lanes.end(), 0.0);
          for (std::size_t r = 0; r < oh; ++r) {
            const std::size_t at = (ci * hp + r + ki) * wp + kj;
            const double* src = xp + at;
            const double* gr = go + r * ow;
            for (std::size_t c = 0; c < ow; ++c) lanes[c] += gr[c] * src[c];
            if (grad_xp) {
              double* dst = grad_xp + at;
              for (std::size_t c = 0; c < ow; ++c) dst[c] += wv * gr[c];
            }
          }
          double acc = 0.0;
          for (double v : lanes) acc += v;
          grad_w[wi] = acc;
        }
      }
    }
  }
}

bool use_direct(const ConvGeometry& g) { return g.out_channels < kTileRows; }

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, bool transpose_a,
          const double* b, bool transpose_b, double* c, bool accumulate) {
  std::vector<double> packed_a, packed_b;
  if (transpose_a) {
    packed_a = transposed(a, k, m);
    a = packed_a.data();
  }
  if (transpose_b) {
    packed_b = transposed(b, n, k);
    b = packed_b.data();
  }
  gemm_nn(m, n, k, a, b, c, accumulate);
}

void conv2d_forward(const ConvGeometry& g, const double* x, const double* weights,
                    const double* bias, double* y) {
  const std::size_t pixels = g.out_height() * g.out_width();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * pixels;
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);

  if (use_direct(g)) {
    const std::size_t padded = g.in_channels * (g.height + 2 * g.pad) * (g.width + 2 * g.pad);
#pragma omp parallel
    {
      std::vector<double> xp(padded);
#pragma omp for schedule(static)
      for (std::ptrdiff_t n = 0; n < batch; ++n) {
        pad_input(g, x + n * in_stride, xp.data());
        direct_forward(g, xp.data(), weights, bias, y + n * out_stride);
      }
    }
    return;
  }

#pragma omp parallel
  {
    std::vector<double> cols(g.patch_size() * pixels);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < batch; ++n) {
      im2col(g, x + n * in_stride, cols.data());
      double* out = y + n * out_stride;
      gemm_nn(g.out_channels, pixels, g.patch_size(), weights, cols.data(), out, false);
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        double* row = out + o * pixels;
        for (std::size_t p = 0; p < pixels; ++p) row[p] += bias[o];
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, const double* x, const double* weights,
                     const double* grad_y, double* grad_x, double* grad_weights,
                     double* grad_bias) {
  const std::size_t pixels = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  const std::size_t in_stride = g.in_channels * g.height * g.width;
  const std::size_t out_stride = g.out_channels * pixels;
  const std::size_t weight_count = g.out_channels * patch;
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);

  // Per-sample partial gradients, reduced below in sample order.
  std::vector<double> partial(g.batch * (weight_count + g.out_channels));
  const std::vector<double> weights_t = transposed(weights, g.out_channels, patch);
  // The weight gradient is computed as (patch x O) when O fills whole
  // register tiles and the patch size does not.
  const bool transpose_weight_grad = g.out_channels % kTileCols == 0 && patch % kTileCols != 0;

  if (use_direct(g)) {
    const std::size_t hp = g.height + 2 * g.pad, wp = g.width + 2 * g.pad;
#pragma omp parallel
    {
      std::vector<double> xp(g.in_channels * hp * wp);
      std::vector<double> grad_xp(grad_x ? xp.size() : 0);
#pragma omp for schedule(static)
      for (std::ptrdiff_t n = 0; n < batch; ++n) {
        const double* gy = grad_y + n * out_stride;
        double* pw = partial.data() + n * (weight_count + g.out_channels);
        pad_input(g, x + n * in_stride, xp.data());
        direct_backward(g, xp.data(), weights, gy, grad_x ? grad_xp.data() : nullptr, pw);
        for (std::size_t o = 0; o < g.out_channels; ++o) {
          double s = 0.0;
          for (std::size_t p = 0; p < pixels; ++p) s += gy[o * pixels + p];
          pw[weight_count + o] = s;
        }
        if (grad_x) {
          double* gx = grad_x + n * in_stride;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t r = 0; r < g.height; ++r) {
              std::copy_n(grad_xp.data() + (ci * hp + r + g.pad) * wp + g.pad, g.width,
                          gx + (ci * g.height + r) * g.width);
            }
          }
        }
      }
    }
  } else {
#pragma omp parallel
  {
    std::vector<double> cols(patch * pixels);
    std::vector<double> grad_cols(grad_x ? patch * pixels : 0);
    std::vector<double> grad_w_t(transpose_weight_grad ? weight_count : 0);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < batch; ++n) {
      const double* gy = grad_y + n * out_stride;
      double* pw = partial.data() + n * (weight_count + g.out_channels);
      double* pb = pw + weight_count;
      im2col(g, x + n * in_stride, cols.data());
      if (transpose_weight_grad) {
        gemm(patch, g.out_channels, pixels, cols.data(), false, gy, true, grad_w_t.data(), false);
        for (std::size_t o = 0; o < g.out_channels; ++o)
          for (std::size_t q = 0; q < patch; ++q) pw[o * patch + q] = grad_w_t[q * g.out_channels + o];
      } else {
        gemm(g.out_channels, patch, pixels, gy, false, cols.data(), true, pw, false);
      }
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        double s = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) s += gy[o * pixels + p];
        pb[o] = s;
      }
      if (grad_x) {
        gemm_nn(patch, pixels, g.out_channels, weights_t.data(), gy, grad_cols.data(), false);
        col2im(g, grad_cols.data(), grad_x + n * in_stride);
      }
    }
  }
  }

  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* pw = partial.data() + n * (weight_count + g.out_channels);
    for (std::size_t i = 0; i < weight_count; ++i) grad_weights[i] += pw[i];
    for (std::size_t o = 0; o < g.out_channels; ++o) grad_bias[o] += pw[weight_count + o];
  }
}

}  // namespace swwae::kernels
