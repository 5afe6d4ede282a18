#include "swwae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "swwae/kernels.hpp"

namespace swwae {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw std::invalid_argument("tensor rank must be 1..4, got shape " + to_string(shape));
  }
  for (auto e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive: " + to_string(shape));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.empty()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor of shape " + to_string(shape_) + " needs " +
                                std::to_string(shape_size(shape_)) + " values, got " +
                                std::to_string(data_.size()));
  }
}

Tensor::Tensor(std::initializer_list<std::size_t> shape, std::initializer_list<double> values)
    : Tensor(Shape(shape), std::vector<double>(values)) {}

Tensor Tensor::reshaped(Shape shape) const {
  validate_shape(shape);
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " +
                                to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ &&
         (a.data_.empty() ||
          std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0);
}

Tensor elementwise(const Tensor& a, const Tensor& b, BinaryOp op) {
  require_same_shape(a, b, "elementwise");
  Tensor out(a.shape());
  const std::size_t n = a.size();
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
      break;
  }
  return out;
}

Tensor scaled(const Tensor& a, double factor) {
  Tensor out = a;
  for (auto& v : out.values()) v *= factor;
  return out;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul needs rank-2 operands, got " + to_string(a.shape()) +
                                " and " + to_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul inner extents differ: " + to_string(a.shape()) + " x " +
                                to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  kernels::gemm(a.dim(0), b.dim(1), a.dim(1), a.data(), false, b.data(), false, c.data(), false);
  return c;
}

Tensor pad2d(const Tensor& x, std::size_t pad) {
  if (x.rank() != 4) throw std::invalid_argument("pad2d needs NCHW, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c, h + 2 * pad, w + 2 * pad});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(x.data() + x.offset(i, j, y, 0), w, &out.at(i, j, y + pad, pad));
  return out;
}

Tensor crop2d(const Tensor& x, std::size_t pad) {
  if (x.rank() != 4 || x.dim(2) <= 2 * pad || x.dim(3) <= 2 * pad) {
    throw std::invalid_argument("crop2d: cannot remove " + std::to_string(pad) +
                                " border cells from " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2) - 2 * pad, w = x.dim(3) - 2 * pad;
  Tensor out({n, c, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(x.data() + x.offset(i, j, y + pad, pad), w, &out.at(i, j, y, 0));
  return out;
}

Tensor reduce(const Tensor& x, std::vector<std::size_t> axes, ReduceOp op) {
  if (x.empty()) throw std::invalid_argument("reduce of an empty tensor");
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (auto a : axes) {
    if (a >= x.rank()) {
      throw std::invalid_argument("reduce axis " + std::to_string(a) + " invalid for shape " +
                                  to_string(x.shape()));
    }
  }
  std::vector<bool> reduced(x.rank(), false);
  for (auto a : axes) reduced[a] = true;

  Shape out_shape;
  for (std::size_t d = 0; d < x.rank(); ++d)
    if (!reduced[d]) out_shape.push_back(x.dim(d));
  if (out_shape.empty()) out_shape.push_back(1);

  const double init = op == ReduceOp::max ? -std::numeric_limits<double>::infinity() : 0.0;
  Tensor out(out_shape, init);
  std::size_t count = 1;
  for (auto a : axes) count *= x.dim(a);

  // Walk the input in row-major order; each output cell accumulates its
  // inputs in that order.
  std::vector<std::size_t> index(x.rank(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < x.rank(); ++d)
      if (!reduced[d]) o = o * x.dim(d) + index[d];
    if (op == ReduceOp::max) {
      out[o] = std::max(out[o], x[i]);
    } else {
      out[o] += x[i];
    }
    for (std::size_t d = x.rank(); d-- > 0;) {
      if (++index[d] < x.dim(d)) break;
      index[d] = 0;
    }
  }
  if (op == ReduceOp::mean) {
    for (auto& v : out.values()) v /= static_cast<double>(count);
  }
  return out;
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

double max_abs(const Tensor& x) {
  double m = 0.0;
  for (double v : x.values()) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(const Tensor& x) {
  return std::all_of(x.values().begin(), x.values().end(),
                     [](double v) { return std::isfinite(v); });
}

bool allclose(const Tensor& a, const Tensor& b, double rtol, double atol) {
  require_same_shape(a, b, "allclose");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(std::abs(a[i] - b[i]) <= atol + rtol * std::abs(b[i]))) return false;
  }
  return true;
}

}  // namespace swwae
