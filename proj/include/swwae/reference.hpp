#pragma once

#include "swwae/tensor.hpp"

// Serial, loop-for-loop implementations of the hot kernels. They are kept
// as oracles for the parallel versions and as the benchmark baseline; the
// model never calls them.

namespace swwae::reference {

/// Naive i-j-k triple loop.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Direct seven-loop convolution (n, o, y, x, i, ky, kx).
Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, std::size_t pad);

struct ConvGrads {
  Tensor grad_x;
  Tensor grad_weights;
  Tensor grad_bias;
};
ConvGrads conv2d_backward(const Tensor& x, const Tensor& weights, std::size_t pad,
                          const Tensor& grad_y);

}  // namespace swwae::reference
