#include "swwae/reference.hpp"

#include <stdexcept>

namespace swwae::reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("reference::matmul: bad shapes " + to_string(a.shape()) +
                                " x " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

namespace {

// Input value at a padded coordinate, zero outside the image.
double padded(const Tensor& x, std::size_t n, std::size_t c, std::ptrdiff_t y,
              std::ptrdiff_t xx) {
  if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(x.dim(2)) ||
      xx >= static_cast<std::ptrdiff_t>(x.dim(3))) {
    return 0.0;
  }
  return x.at(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, std::size_t pad) {
  const std::size_t batch = x.dim(0), in_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t out_ch = weights.dim(0), k = weights.dim(2);
  const std::size_t oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
  const auto p = static_cast<std::ptrdiff_t>(pad);
  Tensor y({batch, out_ch, oh, ow});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double s = bias[o];
          for (std::size_t i = 0; i < in_ch; ++i)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx)
                s += weights.at(o, i, ky, kx) *
                     padded(x, n, i, static_cast<std::ptrdiff_t>(r + ky) - p,
                            static_cast<std::ptrdiff_t>(c + kx) - p);
          y.at(n, o, r, c) = s;
        }
  return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& weights, std::size_t pad,
                          const Tensor& grad_y) {
  const std::size_t batch = x.dim(0), in_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t out_ch = weights.dim(0), k = weights.dim(2);
  const std::size_t oh = grad_y.dim(2), ow = grad_y.dim(3);
  const auto p = static_cast<std::ptrdiff_t>(pad);
  ConvGrads g{Tensor(x.shape()), Tensor(weights.shape()), Tensor({out_ch})};
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          const double gy = grad_y.at(n, o, r, c);
          g.grad_bias[o] += gy;
          for (std::size_t i = 0; i < in_ch; ++i)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(r + ky) - p;
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(c + kx) - p;
                if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) ||
                    sx >= static_cast<std::ptrdiff_t>(w)) {
                  continue;
                }
                const auto uy = static_cast<std::size_t>(sy);
                const auto ux = static_cast<std::size_t>(sx);
                g.grad_weights.at(o, i, ky, kx) += gy * x.at(n, i, uy, ux);
                g.grad_x.at(n, i, uy, ux) += gy * weights.at(o, i, ky, kx);
              }
        }
  return g;
}

}  // namespace swwae::reference
