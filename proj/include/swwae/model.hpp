#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swwae/archdsl.hpp"
#include "swwae/nn.hpp"
#include "swwae/pooling.hpp"
#include "swwae/rng.hpp"
#include "swwae/tensor.hpp"

namespace swwae {

enum class Modality { supervised, unsupervised, semi };
enum class UnpoolMode { where, upsample };

/// Loss weights and architectural switches.
///
/// The three lambdas are the nominal weights; `modality` masks them (see
/// effective_weights), so switching modality never loses the configured
/// values.
struct SwwaeConfig {
  double lambda_nll = 1.0;
  double lambda_rec = 0.0;
  double lambda_mid = 0.0;
  Modality modality = Modality::semi;
  PoolMode pool_mode = PoolMode::hard;
  double beta = 1.0;
  UnpoolMode unpool_mode = UnpoolMode::where;
  double dropout_fc = 0.0;
  double dropout_conv = 0.0;
  double l1_weight = 0.0;
  bool batchnorm = false;
  bool batchnorm_decoder = false;
  bool build_decoder = true;

  void validate() const;
};

struct LossWeights {
  double nll = 0.0, rec = 0.0, mid = 0.0;
};
LossWeights effective_weights(const SwwaeConfig& config);

/// Returns `config` with the modality replaced; everything else untouched.
SwwaeConfig set_modality(SwwaeConfig config, Modality modality);

std::string to_string(Modality modality);
Modality parse_modality(const std::string& text);

struct LossBreakdown {
  double nll = 0.0;
  double rec = 0.0;
  double mid = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

struct ConvBlockCache {
  Tensor input;
  Tensor pre_activation;  // conv (+ batchnorm) output
  Tensor activation;      // after ReLU (and dropout)
};

/// Everything the loss and backward pass need from one forward pass.
struct ForwardTrace {
  /// x_m: input of encoder stage m; stage_inputs[0] is the batch itself.
  std::vector<Tensor> stage_inputs;
  /// Output of the last stage, fed to both the head and the decoder.
  Tensor top;
  /// One entry per pooling stage, in encoder order.
  std::vector<PoolOutput> wheres;
  /// x~_m: output of decoder stage m (empty when the decoder did not run).
  std::vector<Tensor> decoded;
  Tensor logits;  // empty for heads-less architectures
  Tensor reconstruction;

  std::vector<std::vector<ConvBlockCache>> encoder_blocks;
  std::vector<Tensor> pool_inputs;
  std::vector<std::vector<ConvBlockCache>> decoder_blocks;
  std::vector<Tensor> decoder_stage_inputs;
  std::vector<Tensor> unpooled;
  /// fc inputs (after dropout), then the pre-activations of hidden fc layers.
  std::vector<Tensor> head_inputs;

  std::vector<int> labels;
  std::vector<bool> mask;
  Mode mode = Mode::train;
  bool decoder_ran = false;
  LossBreakdown losses;
};

struct InputShape {
  std::size_t channels = 1, height = 1, width = 1;
};

class SwwaeModel {
 public:
  SwwaeModel(ArchSpec arch, InputShape input, SwwaeConfig config, std::uint64_t seed);

  /// Runs encoder, head and (when any reconstruction weight is active, or
  /// `force_decoder`) the decoder, then evaluates the joint loss. Terms
  /// whose weight is zero are not evaluated and report 0.
  ForwardTrace forward(const Tensor& images, const std::vector<int>& labels,
                       const std::vector<bool>& mask, Mode mode, bool force_decoder = false);

  /// Zeroes and then fills every parameter gradient with d L_total.
  void backward(ForwardTrace& trace);

  /// Eval-mode reconstruction x~.
  Tensor reconstruct(const Tensor& images);
  /// Eval-mode logits only.
  Tensor predict(const Tensor& images);

  /// Parameters in declaration order (encoder, head, decoder); includes
  /// non-trainable buffers with a null grad.
  std::vector<ParamRef> parameters();
  /// Parameters the optimizer should update (respects freeze_encoder).
  std::vector<ParamRef> trainable_parameters();
  void zero_grad();

  /// Frozen encoder: runs in eval mode and receives no gradient.
  void freeze_encoder(bool frozen) { encoder_frozen_ = frozen; }
  bool encoder_frozen() const { return encoder_frozen_; }

  const ArchSpec& arch() const { return arch_; }
  const InputShape& input_shape() const { return input_; }
  const SwwaeConfig& config() const { return config_; }
  SwwaeConfig& config() { return config_; }
  std::uint64_t seed() const { return seed_; }
  bool has_decoder() const { return !decoder_.empty(); }
  bool has_head() const { return !head_.empty(); }
  std::size_t num_stages() const { return encoder_.size(); }

 private:
  struct ConvBlock {
    Conv2d conv;
    BatchNorm2d bn;
    bool use_bn = false;
    bool relu = true;
    Dropout dropout;
  };
  struct EncoderStage {
    std::vector<ConvBlock> convs;
    std::size_t pool = 0;
  };
  struct DecoderStage {
    std::size_t unpool = 0;
    std::vector<ConvBlock> convs;
  };

  Tensor run_block(ConvBlock& block, const Tensor& x, Mode mode, ConvBlockCache& cache);
  Tensor block_backward(ConvBlock& block, const ConvBlockCache& cache, const Tensor& grad,
                        bool want_grad_x);
  static void collect_block(ConvBlock& block, const std::string& name, std::vector<ParamRef>& out);
  Tensor head_forward(const Tensor& top, Mode mode, ForwardTrace& trace);
  void check_input(const Tensor& images) const;

  ArchSpec arch_;
  InputShape input_;
  SwwaeConfig config_;
  std::uint64_t seed_;
  Rng dropout_rng_;
  bool encoder_frozen_ = false;

  std::vector<EncoderStage> encoder_;
  std::vector<FullyConnected> head_;
  std::vector<Dropout> head_dropout_;
  std::vector<DecoderStage> decoder_;  // decoder_[m] mirrors encoder_[m]
};

}  // namespace swwae
