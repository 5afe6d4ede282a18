#pragma once

#include <string>
#include <vector>

#include "swwae/rng.hpp"
#include "swwae/tensor.hpp"

namespace swwae {

enum class Mode { train, eval };

/// A named parameter (or, with a null grad, a non-trainable buffer such as
/// batchnorm running statistics).
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

/// Loss value together with its gradient w.r.t. the first argument.
struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

/// Stride-1 convolution, square kernel, zero padding.
struct Conv2d {
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t pad);

  /// Uniform in +-sqrt(2 / fan_in), zero bias.
  void init(Rng& rng);
  Tensor forward(const Tensor& x) const;
  /// Returns grad w.r.t. x (empty when !want_grad_x); accumulates parameter grads.
  Tensor backward(const Tensor& x, const Tensor& grad_out, bool want_grad_x = true);
  void zero_grad();
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t kernel() const { return weights.dim(2); }

  Tensor weights, bias, grad_weights, grad_bias;
  std::size_t pad = 0;
};

/// y = x W^T + b on N x in inputs.
struct FullyConnected {
  FullyConnected() = default;
  FullyConnected(std::size_t in, std::size_t out);

  void init(Rng& rng);
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_out, bool want_grad_x = true);
  void zero_grad();
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor weights, bias, grad_weights, grad_bias;
};

/// Per-feature-map normalization over (batch, height, width).
struct BatchNorm2d {
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, double epsilon = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, Mode mode);
  /// Uses the statistics cached by the last forward call.
  Tensor backward(const Tensor& grad_out);
  void zero_grad();
  void collect(const std::string& prefix, std::vector<ParamRef>& out);

  Tensor scale, shift, grad_scale, grad_shift;
  Tensor running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

 private:
  Mode last_mode_ = Mode::eval;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

/// Inverted dropout: survivors are scaled by 1/(1-q) at train time.
struct Dropout {
  explicit Dropout(double q = 0.0);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng);
  /// Reapplies the mask from the last train-mode forward.
  Tensor apply_mask(const Tensor& x) const;
  Tensor backward(const Tensor& grad_out) const;

  double q = 0.0;
  Tensor mask;  // empty means identity
};

Tensor relu(const Tensor& x);
/// Passes grad where x > 0; zero elsewhere, including x == 0.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

/// Mean over masked rows of -log softmax(logits)[label]. An empty mask gives
/// zero loss and zero gradient.
LossGrad softmax_nll(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<bool>& mask);

/// Mean squared difference (1/N) sum (a-b)^2; grad is w.r.t. a.
LossGrad l2_loss(const Tensor& a, const Tensor& b);

/// weight * sum |x|, with sign(0) = 0.
LossGrad l1_penalty(const Tensor& x, double weight);

/// Flattens N x C x H x W to N x (C*H*W).
Tensor flatten(const Tensor& x);

}  // namespace swwae
