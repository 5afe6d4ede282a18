#pragma once

#include <cstddef>

#include "swwae/tensor.hpp"

namespace swwae {

enum class PoolMode { hard, soft };

/// Result of what-where pooling over non-overlapping s x s regions.
///
/// `what` is N x C x H/s x W/s. `where` depends on the mode:
///  - hard: N x C x H/s x W/s, the row-major index (0..s*s-1) of the max
///    inside its region, stored as a double;
///  - soft: N x 2C x H/s x W/s, channel 2c holding the horizontal and 2c+1
///    the vertical expected position of feature map c, each in [-1, 1].
struct PoolOutput {
  Tensor what;
  Tensor where;
  PoolMode mode = PoolMode::hard;
  std::size_t size = 1;
  double beta = 0.0;
};

/// Normalized coordinate of cell i among s cells: -1 + 2i/(s-1), or 0 for s = 1.
double cell_coordinate(std::size_t i, std::size_t s);

/// Max pooling with argmax switches; ties go to the smallest row-major index.
PoolOutput hard_pool(const Tensor& x, std::size_t s);
/// Routes grad_what to each region's switch position.
Tensor hard_pool_backward(const PoolOutput& pooled, const Tensor& grad_what);

/// Places each what at its switch position, zeros elsewhere.
Tensor hard_unpool(const PoolOutput& pooled);
Tensor hard_unpool_backward(const PoolOutput& pooled, const Tensor& grad_x);

/// Softmax-weighted mean value and mean position per region, weights
/// softmax(beta * z). beta = 0 is mean pooling; large beta approaches max.
PoolOutput soft_pool(const Tensor& x, std::size_t s, double beta);
/// Gradient w.r.t. x of <grad_what, what> + <grad_where, where>.
/// `grad_where` may be empty (treated as zero).
Tensor soft_pool_backward(const Tensor& x, const PoolOutput& pooled, const Tensor& grad_what,
                          const Tensor& grad_where);

/// Spreads each what bilinearly over the (at most four) cells around its
/// continuous where position.
Tensor soft_unpool(const PoolOutput& pooled);

struct UnpoolGrads {
  Tensor grad_what;
  Tensor grad_where;  // empty in hard mode
};
UnpoolGrads soft_unpool_backward(const PoolOutput& pooled, const Tensor& grad_x);

/// Mode dispatch for the two unpooling operators.
Tensor unpool(const PoolOutput& pooled);
UnpoolGrads unpool_backward(const PoolOutput& pooled, const Tensor& grad_x);

/// Copies each value over its whole s x s block (no where information).
Tensor upsample(const Tensor& what, std::size_t s);
Tensor upsample_backward(const Tensor& grad_x, std::size_t s);

}  // namespace swwae
