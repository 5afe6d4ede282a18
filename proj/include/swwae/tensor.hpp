#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace swwae {

/// Extents of a tensor in N, C, H, W order (1 to 4 entries, all positive).
using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles of rank 1..4.
///
/// A default-constructed tensor is empty (rank 0, no data) and is only
/// meaningful as a placeholder; every operation below rejects it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(std::initializer_list<std::size_t> shape, std::initializer_list<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Linear index of a rank-4 coordinate.
  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[offset(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[offset(n, c, h, w)];
  }

  /// Same values under a new shape of equal element count.
  Tensor reshaped(Shape shape) const;
  void fill(double value);

  /// Bitwise equality of shape and values.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class BinaryOp { add, sub, mul };
enum class ReduceOp { sum, mean, max };

Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op);
inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, BinaryOp::mul); }

Tensor scaled(const Tensor& a, double factor);
/// y += alpha * x, shapes must match.
void axpy(double alpha, const Tensor& x, Tensor& y);

/// Rank-2 product (m x k) * (k x n). Each output element accumulates its
/// k terms in ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Zero-pads the two spatial axes of an NCHW tensor.
Tensor pad2d(const Tensor& x, std::size_t pad);
/// Inverse of pad2d: drops `pad` border cells on each spatial side.
Tensor crop2d(const Tensor& x, std::size_t pad);

/// Reduces over `axes` (removed from the result). Reducing every axis yields
/// shape {1}.
Tensor reduce(const Tensor& x, std::vector<std::size_t> axes, ReduceOp op);
double sum(const Tensor& x);
double max_abs(const Tensor& x);
bool all_finite(const Tensor& x);

bool allclose(const Tensor& a, const Tensor& b, double rtol, double atol);

}  // namespace swwae
