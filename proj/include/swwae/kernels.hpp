#pragma once

#include <cstddef>

// Parallel compute kernels on raw row-major buffers. Work is split over
// independent samples or feature planes; any cross-sample reduction is
// done afterwards in sample order so results do not depend on the number
// of threads.

namespace swwae::kernels {

/// C (m x n) = op(A) * op(B), or C += op(A) * op(B) when `accumulate`.
/// op(A) is m x k and op(B) is k x n; a transposed operand is stored in
/// its untransposed shape (k x m, n x k). Every output element sums its k
/// products in ascending order before it is written or added to C.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, bool transpose_a,
          const double* b, bool transpose_b, double* c, bool accumulate);

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 1;
  std::size_t pad = 0;

  std::size_t out_height() const { return height + 2 * pad - kernel + 1; }
  std::size_t out_width() const { return width + 2 * pad - kernel + 1; }
  std::size_t patch_size() const { return in_channels * kernel * kernel; }
};

/// Stride-1 cross-correlation with zero padding, plus per-channel bias.
/// x: N x I x H x W, weights: O x I x k x k, bias: O, y: N x O x OH x OW.
void conv2d_forward(const ConvGeometry& g, const double* x, const double* weights,
                    const double* bias, double* y);

/// Overwrites grad_x (skipped when null) and adds into grad_weights and
/// grad_bias.
void conv2d_backward(const ConvGeometry& g, const double* x, const double* weights,
                     const double* grad_y, double* grad_x, double* grad_weights,
                     double* grad_bias);

}  // namespace swwae::kernels
