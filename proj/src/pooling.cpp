#include "swwae/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace swwae {

namespace {

struct PlaneGeometry {
  std::size_t batch, channels, height, width, s;
  std::size_t out_h() const { return height / s; }
  std::size_t out_w() const { return width / s; }
  std::size_t planes() const { return batch * channels; }
};

PlaneGeometry pool_geometry(const Tensor& x, std::size_t s, const char* op) {
  if (x.rank() != 4) {
    throw std::invalid_argument(std::string(op) + " expects NCHW, got " + to_string(x.shape()));
  }
  if (s == 0 || x.dim(2) % s != 0 || x.dim(3) % s != 0) {
    throw std::invalid_argument(std::string(op) + ": spatial extents of " + to_string(x.shape()) +
                                " are not divisible by pool size " + std::to_string(s));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), s};
}

PlaneGeometry unpool_geometry(const PoolOutput& p) {
  return {p.what.dim(0), p.what.dim(1), p.what.dim(2) * p.size, p.what.dim(3) * p.size, p.size};
}

void require_mode(const PoolOutput& p, PoolMode mode, const char* op) {
  if (p.mode != mode) {
    throw std::invalid_argument(std::string(op) + ": pool output has the wrong mode");
  }
}

// Continuous cell position of a normalized coordinate, split into a base
// cell and a fractional offset towards base + 1.
struct Interp {
  std::size_t base;
  double frac;
};

Interp locate(double coord, std::size_t s) {
  if (s == 1) return {0, 0.0};
  const double u = (coord + 1.0) * 0.5 * static_cast<double>(s - 1);
  const auto base = std::min(static_cast<std::size_t>(std::floor(u)), s - 2);
  return {base, u - static_cast<double>(base)};
}

}  // namespace

double cell_coordinate(std::size_t i, std::size_t s) {
  if (s <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(s - 1);
}

// ---- hard ----

PoolOutput hard_pool(const Tensor& x, std::size_t s) {
  const auto g = pool_geometry(x, s, "hard_pool");
  const std::size_t oh = g.out_h(), ow = g.out_w();
  PoolOutput out{Tensor({g.batch, g.channels, oh, ow}), Tensor({g.batch, g.channels, oh, ow}),
                 PoolMode::hard, s, 0.0};
  const auto planes = static_cast<std::ptrdiff_t>(g.planes());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
    const double* in = x.data() + pl * g.height * g.width;
    double* what = out.what.data() + pl * oh * ow;
    double* where = out.where.data() + pl * oh * ow;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        std::size_t best = 0;
        double best_value = in[(r * s) * g.width + c * s];
        for (std::size_t i = 0; i < s; ++i) {
          for (std::size_t j = 0; j < s; ++j) {
            const double v = in[(r * s + i) * g.width + c * s + j];
            if (v > best_value) {
              best_value = v;
              best = i * s + j;
            }
          }
        }
        what[r * ow + c] = best_value;
        where[r * ow + c] = static_cast<double>(best);
      }
    }
  }
  return out;
}

namespace {

std::size_t switch_index(double value, std::size_t s) {
  if (!(value >= 0.0) || value >= static_cast<double>(s * s) || value != std::floor(value)) {
    throw std::invalid_argument("invalid switch index " + std::to_string(value) +
                                " for pool size " + std::to_string(s));
  }
  return static_cast<std::size_t>(value);
}

// Linear offsets (within the unpooled tensor) of every region's switch.
std::vector<std::size_t> switch_offsets(const PoolOutput& p) {
  const auto g = unpool_geometry(p);
  const std::size_t oh = p.what.dim(2), ow = p.what.dim(3), s = p.size;
  std::vector<std::size_t> offsets(p.what.size());
  for (std::size_t pl = 0; pl < g.planes(); ++pl) {
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c) {
        const std::size_t k = (pl * oh + r) * ow + c;
        const std::size_t idx = switch_index(p.where[k], s);
        offsets[k] = pl * g.height * g.width + (r * s + idx / s) * g.width + c * s + idx % s;
      }
    }
  }
  return offsets;
}

}  // namespace

Tensor hard_pool_backward(const PoolOutput& pooled, const Tensor& grad_what) {
  require_mode(pooled, PoolMode::hard, "hard_pool_backward");
  if (grad_what.shape() != pooled.what.shape()) {
    throw std::invalid_argument("hard_pool_backward: grad shape " + to_string(grad_what.shape()));
  }
  const auto g = unpool_geometry(pooled);
  Tensor grad_x({g.batch, g.channels, g.height, g.width});
  const auto offsets = switch_offsets(pooled);
  for (std::size_t k = 0; k < offsets.size(); ++k) grad_x[offsets[k]] += grad_what[k];
  return grad_x;
}

Tensor hard_unpool(const PoolOutput& pooled) {
  require_mode(pooled, PoolMode::hard, "hard_unpool");
  const auto g = unpool_geometry(pooled);
  Tensor out({g.batch, g.channels, g.height, g.width});
  const auto offsets = switch_offsets(pooled);
  for (std::size_t k = 0; k < offsets.size(); ++k) out[offsets[k]] = pooled.what[k];
  return out;
}

Tensor hard_unpool_backward(const PoolOutput& pooled, const Tensor& grad_x) {
  require_mode(pooled, PoolMode::hard, "hard_unpool_backward");
  const auto g = unpool_geometry(pooled);
  if (grad_x.shape() != Shape{g.batch, g.channels, g.height, g.width}) {
    throw std::invalid_argument("hard_unpool_backward: grad shape " + to_string(grad_x.shape()));
  }
  Tensor grad_what(pooled.what.shape());
  const auto offsets = switch_offsets(pooled);
  for (std::size_t k = 0; k < offsets.size(); ++k) grad_what[k] = grad_x[offsets[k]];
  return grad_what;
}

// ---- soft ----

namespace {

// Softmax(beta * z) weights of one region, written row-major into w.
void region_weights(const double* in, std::size_t width, std::size_t s, double beta, double* w) {
  double peak = -INFINITY;
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) peak = std::max(peak, beta * in[i * width + j]);
  double total = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      w[i * s + j] = std::exp(beta * in[i * width + j] - peak);
      total += w[i * s + j];
    }
  }
  for (std::size_t k = 0; k < s * s; ++k) w[k] /= total;
}

}  // namespace

PoolOutput soft_pool(const Tensor& x, std::size_t s, double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("soft_pool: beta must be finite and non-negative, got " +
                                std::to_string(beta));
  }
  const auto g = pool_geometry(x, s, "soft_pool");
  const std::size_t oh = g.out_h(), ow = g.out_w();
  PoolOutput out{Tensor({g.batch, g.channels, oh, ow}), Tensor({g.batch, 2 * g.channels, oh, ow}),
                 PoolMode::soft, s, beta};
  const auto planes = static_cast<std::ptrdiff_t>(g.planes());
#pragma omp parallel
  {
    std::vector<double> w(s * s);
#pragma omp for schedule(static)
    for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
      const std::size_t n = static_cast<std::size_t>(pl) / g.channels;
      const std::size_t ch = static_cast<std::size_t>(pl) % g.channels;
      const double* in = x.data() + pl * g.height * g.width;
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
          const double* region = in + (r * s) * g.width + c * s;
          region_weights(region, g.width, s, beta, w.data());
          double m = 0.0, px = 0.0, py = 0.0;
          for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < s; ++j) {
              const double wk = w[i * s + j];
              m += wk * region[i * g.width + j];
              px += wk * cell_coordinate(j, s);
              py += wk * cell_coordinate(i, s);
            }
          }
          out.what.at(n, ch, r, c) = m;
          // A convex combination of [-1, 1] values; clamp away rounding.
          out.where.at(n, 2 * ch, r, c) = std::clamp(px, -1.0, 1.0);
          out.where.at(n, 2 * ch + 1, r, c) = std::clamp(py, -1.0, 1.0);
        }
      }
    }
  }
  return out;
}

Tensor soft_pool_backward(const Tensor& x, const PoolOutput& pooled, const Tensor& grad_what,
                          const Tensor& grad_where) {
  require_mode(pooled, PoolMode::soft, "soft_pool_backward");
  const std::size_t s = pooled.size;
  const auto g = pool_geometry(x, s, "soft_pool_backward");
  if (grad_what.shape() != pooled.what.shape() ||
      (!grad_where.empty() && grad_where.shape() != pooled.where.shape())) {
    throw std::invalid_argument("soft_pool_backward: gradient shapes do not match pool output");
  }
  const double beta = pooled.beta;
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor grad_x(x.shape());
  const auto planes = static_cast<std::ptrdiff_t>(g.planes());
#pragma omp parallel
  {
    std::vector<double> w(s * s);
#pragma omp for schedule(static)
    for (std::ptrdiff_t pl = 0; pl < planes; ++pl) {
      const std::size_t n = static_cast<std::size_t>(pl) / g.channels;
      const std::size_t ch = static_cast<std::size_t>(pl) % g.channels;
      const double* in = x.data() + pl * g.height * g.width;
      double* gx = grad_x.data() + pl * g.height * g.width;
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
          const double* region = in + (r * s) * g.width + c * s;
          region_weights(region, g.width, s, beta, w.data());
          // Recompute the unclamped outputs so the derivative is exact.
          double m = 0.0, px = 0.0, py = 0.0;
          for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < s; ++j) {
              const double wk = w[i * s + j];
              m += wk * region[i * g.width + j];
              px += wk * cell_coordinate(j, s);
              py += wk * cell_coordinate(i, s);
            }
          }
          const double gm = grad_what.at(n, ch, r, c);
          const double gpx = grad_where.empty() ? 0.0 : grad_where.at(n, 2 * ch, r, c);
          const double gpy = grad_where.empty() ? 0.0 : grad_where.at(n, 2 * ch + 1, r, c);
          // d m / d z_k = w_k (1 + beta (z_k - m)); d p / d z_k = beta w_k (pos_k - p).
          for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < s; ++j) {
              const double wk = w[i * s + j];
              const double z = region[i * g.width + j];
              gx[(r * s + i) * g.width + c * s + j] +=
                  gm * wk * (1.0 + beta * (z - m)) +
                  beta * wk * (gpx * (cell_coordinate(j, s) - px) +
                               gpy * (cell_coordinate(i, s) - py));
            }
          }
        }
      }
    }
  }
  return grad_x;
}

namespace {

struct SoftRegion {
  Interp col, row;
};

SoftRegion soft_region(const PoolOutput& p, std::size_t n, std::size_t ch, std::size_t r,
                       std::size_t c) {
  const double px = p.where.at(n, 2 * ch, r, c);
  const double py = p.where.at(n, 2 * ch + 1, r, c);
  if (!(px >= -1.0 && px <= 1.0 && py >= -1.0 && py <= 1.0)) {
    throw std::invalid_argument("soft_unpool: where coordinate (" + std::to_string(px) + ", " +
                                std::to_string(py) + ") outside [-1, 1]");
  }
  return {locate(px, p.size), locate(py, p.size)};
}

void check_soft_where(const PoolOutput& p) {
  const Shape expected{p.what.dim(0), 2 * p.what.dim(1), p.what.dim(2), p.what.dim(3)};
  if (p.where.shape() != expected) {
    throw std::invalid_argument("soft where must have shape " + to_string(expected) + ", got " +
                                to_string(p.where.shape()));
  }
}

}  // namespace

Tensor soft_unpool(const PoolOutput& pooled) {
  require_mode(pooled, PoolMode::soft, "soft_unpool");
  check_soft_where(pooled);
  const auto g = unpool_geometry(pooled);
  const std::size_t s = pooled.size, oh = pooled.what.dim(2), ow = pooled.what.dim(3);
  Tensor out({g.batch, g.channels, g.height, g.width});
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ch = 0; ch < g.channels; ++ch)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          const auto reg = soft_region(pooled, n, ch, r, c);
          const double m = pooled.what.at(n, ch, r, c);
          const std::size_t y0 = r * s + reg.row.base, x0 = c * s + reg.col.base;
          if (s == 1) {
            out.at(n, ch, y0, x0) = m;
            continue;
          }
          const double fy = reg.row.frac, fx = reg.col.frac;
          out.at(n, ch, y0, x0) += m * (1.0 - fy) * (1.0 - fx);
          out.at(n, ch, y0, x0 + 1) += m * (1.0 - fy) * fx;
          out.at(n, ch, y0 + 1, x0) += m * fy * (1.0 - fx);
          out.at(n, ch, y0 + 1, x0 + 1) += m * fy * fx;
        }
  return out;
}

UnpoolGrads soft_unpool_backward(const PoolOutput& pooled, const Tensor& grad_x) {
  require_mode(pooled, PoolMode::soft, "soft_unpool_backward");
  check_soft_where(pooled);
  const auto g = unpool_geometry(pooled);
  if (grad_x.shape() != Shape{g.batch, g.channels, g.height, g.width}) {
    throw std::invalid_argument("soft_unpool_backward: grad shape " + to_string(grad_x.shape()));
  }
  const std::size_t s = pooled.size, oh = pooled.what.dim(2), ow = pooled.what.dim(3);
  UnpoolGrads out{Tensor(pooled.what.shape()), Tensor(pooled.where.shape())};
  // d(cell position)/d(coordinate)
  const double span = 0.5 * static_cast<double>(s - 1);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ch = 0; ch < g.channels; ++ch)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          const auto reg = soft_region(pooled, n, ch, r, c);
          const std::size_t y0 = r * s + reg.row.base, x0 = c * s + reg.col.base;
          if (s == 1) {
            out.grad_what.at(n, ch, r, c) = grad_x.at(n, ch, y0, x0);
            continue;
          }
          const double m = pooled.what.at(n, ch, r, c);
          const double fy = reg.row.frac, fx = reg.col.frac;
          const double g00 = grad_x.at(n, ch, y0, x0), g01 = grad_x.at(n, ch, y0, x0 + 1);
          const double g10 = grad_x.at(n, ch, y0 + 1, x0), g11 = grad_x.at(n, ch, y0 + 1, x0 + 1);
          out.grad_what.at(n, ch, r, c) = g00 * (1.0 - fy) * (1.0 - fx) + g01 * (1.0 - fy) * fx +
                                          g10 * fy * (1.0 - fx) + g11 * fy * fx;
          const double d_fx = (1.0 - fy) * (g01 - g00) + fy * (g11 - g10);
          const double d_fy = (1.0 - fx) * (g10 - g00) + fx * (g11 - g01);
          out.grad_where.at(n, 2 * ch, r, c) = m * d_fx * span;
          out.grad_where.at(n, 2 * ch + 1, r, c) = m * d_fy * span;
        }
  return out;
}

Tensor unpool(const PoolOutput& pooled) {
  return pooled.mode == PoolMode::hard ? hard_unpool(pooled) : soft_unpool(pooled);
}

UnpoolGrads unpool_backward(const PoolOutput& pooled, const Tensor& grad_x) {
  if (pooled.mode == PoolMode::hard) return {hard_unpool_backward(pooled, grad_x), Tensor()};
  return soft_unpool_backward(pooled, grad_x);
}

// ---- upsampling ----

Tensor upsample(const Tensor& what, std::size_t s) {
  if (what.rank() != 4 || s == 0) {
    throw std::invalid_argument("upsample expects NCHW and s >= 1, got " + to_string(what.shape()));
  }
  const std::size_t n = what.dim(0), c = what.dim(1), h = what.dim(2), w = what.dim(3);
  Tensor out({n, c, h * s, w * s});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h * s; ++y)
        for (std::size_t x = 0; x < w * s; ++x) out.at(i, ch, y, x) = what.at(i, ch, y / s, x / s);
  return out;
}

Tensor upsample_backward(const Tensor& grad_x, std::size_t s) {
  const auto g = pool_geometry(grad_x, s, "upsample_backward");
  Tensor grad({g.batch, g.channels, g.out_h(), g.out_w()});
  for (std::size_t i = 0; i < g.batch; ++i)
    for (std::size_t ch = 0; ch < g.channels; ++ch)
      for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x)
          grad.at(i, ch, y / s, x / s) += grad_x.at(i, ch, y, x);
  return grad;
}

}  // namespace swwae
