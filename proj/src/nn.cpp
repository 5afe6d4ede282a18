#include "swwae/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "swwae/kernels.hpp"

namespace swwae {

namespace {

kernels::ConvGeometry geometry(const Conv2d& layer, const Tensor& x) {
  if (x.rank() != 4) {
    throw std::invalid_argument("conv2d expects NCHW input, got " + to_string(x.shape()));
  }
  if (x.dim(1) != layer.in_channels()) {
    throw std::invalid_argument("conv2d expects " + std::to_string(layer.in_channels()) +
                                " input channels, got " + to_string(x.shape()));
  }
  const std::size_t k = layer.kernel();
  if (x.dim(2) + 2 * layer.pad < k || x.dim(3) + 2 * layer.pad < k) {
    throw std::invalid_argument("conv2d input " + to_string(x.shape()) + " smaller than kernel " +
                                std::to_string(k));
  }
  return {x.dim(0), x.dim(1), layer.out_channels(), x.dim(2), x.dim(3), k, layer.pad};
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (auto& v : t.values()) v = uniform(rng, -bound, bound);
}

}  // namespace

// ---- Conv2d ----

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t pad_)
    : weights({out_channels, in_channels, kernel, kernel}),
      bias({out_channels}),
      grad_weights({out_channels, in_channels, kernel, kernel}),
      grad_bias({out_channels}),
      pad(pad_) {}

void Conv2d::init(Rng& rng) {
  const double fan_in = static_cast<double>(in_channels() * kernel() * kernel());
  fill_uniform(weights, rng, std::sqrt(2.0 / fan_in));
  bias.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x) const {
  const auto g = geometry(*this, x);
  Tensor y({g.batch, g.out_channels, g.out_height(), g.out_width()});
  kernels::conv2d_forward(g, x.data(), weights.data(), bias.data(), y.data());
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& grad_out, bool want_grad_x) {
  const auto g = geometry(*this, x);
  if (grad_out.shape() != Shape{g.batch, g.out_channels, g.out_height(), g.out_width()}) {
    throw std::invalid_argument("conv2d backward: grad shape " + to_string(grad_out.shape()) +
                                " does not match output");
  }
  Tensor grad_x;
  if (want_grad_x) grad_x = Tensor(x.shape());
  kernels::conv2d_backward(g, x.data(), weights.data(), grad_out.data(),
                           want_grad_x ? grad_x.data() : nullptr, grad_weights.data(),
                           grad_bias.data());
  return grad_x;
}

void Conv2d::zero_grad() {
  grad_weights.fill(0.0);
  grad_bias.fill(0.0);
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weights, &grad_weights});
  out.push_back({prefix + ".bias", &bias, &grad_bias});
}

// ---- FullyConnected ----

FullyConnected::FullyConnected(std::size_t in, std::size_t out)
    : weights({out, in}), bias({out}), grad_weights({out, in}), grad_bias({out}) {}

void FullyConnected::init(Rng& rng) {
  fill_uniform(weights, rng, std::sqrt(2.0 / static_cast<double>(weights.dim(1))));
  bias.fill(0.0);
}

Tensor FullyConnected::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != weights.dim(1)) {
    throw std::invalid_argument("fully_connected expects N x " + std::to_string(weights.dim(1)) +
                                ", got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), out = weights.dim(0);
  Tensor y({n, out});
  kernels::gemm(n, out, weights.dim(1), x.data(), false, weights.data(), true, y.data(), false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < out; ++j) y[i * out + j] += bias[j];
  return y;
}

Tensor FullyConnected::backward(const Tensor& x, const Tensor& grad_out, bool want_grad_x) {
  const std::size_t n = x.dim(0), in = weights.dim(1), out = weights.dim(0);
  if (grad_out.shape() != Shape{n, out}) {
    throw std::invalid_argument("fully_connected backward: grad shape " +
                                to_string(grad_out.shape()));
  }
  kernels::gemm(out, in, n, grad_out.data(), true, x.data(), false, grad_weights.data(), true);
  for (std::size_t j = 0; j < out; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += grad_out[i * out + j];
    grad_bias[j] += s;
  }
  if (!want_grad_x) return {};
  Tensor grad_x({n, in});
  kernels::gemm(n, in, out, grad_out.data(), false, weights.data(), false, grad_x.data(), false);
  return grad_x;
}

void FullyConnected::zero_grad() {
  grad_weights.fill(0.0);
  grad_bias.fill(0.0);
}

void FullyConnected::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weights, &grad_weights});
  out.push_back({prefix + ".bias", &bias, &grad_bias});
}

// ---- BatchNorm2d ----

BatchNorm2d::BatchNorm2d(std::size_t channels, double epsilon_, double momentum_)
    : scale({channels}, 1.0),
      shift({channels}),
      grad_scale({channels}),
      grad_shift({channels}),
      running_mean({channels}),
      running_var({channels}, 1.0),
      epsilon(epsilon_),
      momentum(momentum_) {}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != scale.size()) {
    throw std::invalid_argument("batchnorm expects N x " + std::to_string(scale.size()) +
                                " x H x W, got " + to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t count = n * plane;
  if (mode == Mode::train && count < 2) {
    throw std::invalid_argument("batchnorm in train mode needs batch*H*W >= 2, got " +
                                to_string(x.shape()));
  }
  last_mode_ = mode;
  normalized_ = Tensor(x.shape());
  inv_std_.assign(c, 0.0);
  Tensor y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + x.offset(i, ch, 0, 0);
        for (std::size_t j = 0; j < plane; ++j) mean += p[j];
      }
      mean /= static_cast<double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + x.offset(i, ch, 0, 0);
        for (std::size_t j = 0; j < plane; ++j) var += (p[j] - mean) * (p[j] - mean);
      }
      var /= static_cast<double>(count);
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var;
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double inv_std = 1.0 / std::sqrt(var + epsilon);
    inv_std_[ch] = inv_std;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = x.offset(i, ch, 0, 0);
      for (std::size_t j = 0; j < plane; ++j) {
        const double xh = (x[base + j] - mean) * inv_std;
        normalized_[base + j] = xh;
        y[base + j] = scale[ch] * xh + shift[ch];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  if (grad_out.shape() != normalized_.shape()) {
    throw std::invalid_argument("batchnorm backward without matching forward");
  }
  const std::size_t n = grad_out.dim(0), c = grad_out.dim(1);
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(n * plane);
  Tensor grad_x(grad_out.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = grad_out.offset(i, ch, 0, 0);
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += grad_out[base + j];
        sum_dy_xh += grad_out[base + j] * normalized_[base + j];
      }
    }
    grad_scale[ch] += sum_dy_xh;
    grad_shift[ch] += sum_dy;
    const double g = scale[ch] * inv_std_[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = grad_out.offset(i, ch, 0, 0);
      for (std::size_t j = 0; j < plane; ++j) {
        if (last_mode_ == Mode::train) {
          grad_x[base + j] =
              g * (grad_out[base + j] - sum_dy / count - normalized_[base + j] * sum_dy_xh / count);
        } else {
          grad_x[base + j] = g * grad_out[base + j];
        }
      }
    }
  }
  return grad_x;
}

void BatchNorm2d::zero_grad() {
  grad_scale.fill(0.0);
  grad_shift.fill(0.0);
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".scale", &scale, &grad_scale});
  out.push_back({prefix + ".shift", &shift, &grad_shift});
  out.push_back({prefix + ".running_mean", &running_mean, nullptr});
  out.push_back({prefix + ".running_var", &running_var, nullptr});
}

// ---- Dropout ----

Dropout::Dropout(double q_) : q(q_) {
  if (!(q >= 0.0 && q < 1.0)) {
    throw std::invalid_argument("dropout probability must be in [0, 1), got " +
                                std::to_string(q));
  }
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) {
  if (mode == Mode::eval || q == 0.0) {
    mask = Tensor();
    return x;
  }
  mask = Tensor(x.shape());
  const double keep_scale = 1.0 / (1.0 - q);
  for (auto& m : mask.values()) m = uniform01(rng) < q ? 0.0 : keep_scale;
  return mul(x, mask);
}

Tensor Dropout::apply_mask(const Tensor& x) const { return mask.empty() ? x : mul(x, mask); }

Tensor Dropout::backward(const Tensor& grad_out) const { return apply_mask(grad_out); }

// ---- activations and losses ----

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  if (x.shape() != grad_out.shape()) {
    throw std::invalid_argument("relu_backward: shape mismatch " + to_string(x.shape()) + " vs " +
                                to_string(grad_out.shape()));
  }
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

LossGrad softmax_nll(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<bool>& mask) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("softmax_nll expects N x classes logits, got " +
                                to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (mask.size() != n) throw std::invalid_argument("softmax_nll: mask length differs from batch");
  LossGrad out{0.0, Tensor(logits.shape())};
  const auto active = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (active == 0) return out;
  if (labels.size() != n) throw std::invalid_argument("softmax_nll: labels missing for batch");

  const double inv = 1.0 / static_cast<double>(active);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::invalid_argument("softmax_nll: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = logits.data() + i * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - peak);
    const double log_z = peak + std::log(z);
    out.loss += (log_z - row[label]) * inv;
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(row[j] - log_z);
      out.grad[i * classes + j] = (p - (static_cast<int>(j) == label ? 1.0 : 0.0)) * inv;
    }
  }
  return out;
}

LossGrad l2_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("l2_loss: shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  const double inv = 1.0 / static_cast<double>(a.size());
  LossGrad out{0.0, Tensor(a.shape())};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    out.loss += d * d;
    out.grad[i] = 2.0 * inv * d;
  }
  out.loss *= inv;
  return out;
}

LossGrad l1_penalty(const Tensor& x, double weight) {
  LossGrad out{0.0, Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.loss += std::abs(x[i]);
    out.grad[i] = x[i] > 0.0 ? weight : (x[i] < 0.0 ? -weight : 0.0);
  }
  out.loss *= weight;
  return out;
}

Tensor flatten(const Tensor& x) {
  const std::size_t n = x.dim(0);
  return x.reshaped({n, x.size() / n});
}

}  // namespace swwae
