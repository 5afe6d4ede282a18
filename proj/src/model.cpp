#include "swwae/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace swwae {

void SwwaeConfig::validate() const {
  for (double v : {lambda_nll, lambda_rec, lambda_mid, l1_weight}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
  if (!std::isfinite(beta) || beta < 0.0) {
    throw std::invalid_argument("beta must be finite and non-negative");
  }
  for (double q : {dropout_fc, dropout_conv}) {
    if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
  }
}

LossWeights effective_weights(const SwwaeConfig& config) {
  switch (config.modality) {
    case Modality::supervised:
      return {config.lambda_nll, 0.0, 0.0};
    case Modality::unsupervised:
      return {0.0, config.lambda_rec, config.lambda_mid};
    case Modality::semi:
      break;
  }
  return {config.lambda_nll, config.lambda_rec, config.lambda_mid};
}

SwwaeConfig set_modality(SwwaeConfig config, Modality modality) {
  config.modality = modality;
  return config;
}

std::string to_string(Modality modality) {
  switch (modality) {
    case Modality::supervised:
      return "supervised";
    case Modality::unsupervised:
      return "unsupervised";
    case Modality::semi:
      break;
  }
  return "semi";
}

Modality parse_modality(const std::string& text) {
  if (text == "supervised") return Modality::supervised;
  if (text == "unsupervised") return Modality::unsupervised;
  if (text == "semi") return Modality::semi;
  throw std::invalid_argument("unknown modality '" + text + "'");
}

namespace {

void add_into(Tensor& acc, const Tensor& g) {
  if (acc.empty()) {
    acc = g;
  } else {
    axpy(1.0, g, acc);
  }
}

bool any_of(const std::vector<bool>& mask) {
  return std::find(mask.begin(), mask.end(), true) != mask.end();
}

PoolOutput with_what(const PoolOutput& pooled, const Tensor& what) {
  PoolOutput out = pooled;
  out.what = what;
  return out;
}

}  // namespace

SwwaeModel::SwwaeModel(ArchSpec arch, InputShape input, SwwaeConfig config, std::uint64_t seed)
    : arch_(std::move(arch)),
      input_(input),
      config_(config),
      seed_(seed),
      dropout_rng_(make_rng(seed, 3)) {
  config_.validate();
  if (arch_.input_channels != input_.channels) {
    throw std::invalid_argument("architecture expects " + std::to_string(arch_.input_channels) +
                                " input channels, data has " + std::to_string(input_.channels));
  }
  const ShapeTrace shapes = propagate_shapes(arch_, input_.height, input_.width);

  // Encoder and head draw from one stream and the decoder from another, so
  // a decoder-free model shares its encoder weights with the full model.
  Rng init_rng = make_rng(seed, 1);
  Rng decoder_rng = make_rng(seed, 2);

  const auto stages = encoder_stages(arch_);
  for (const auto& stage : stages) {
    EncoderStage enc;
    enc.pool = stage.pool;
    std::size_t channels = stage.in_channels;
    for (const auto& conv : stage.convs) {
      ConvBlock block{Conv2d(channels, conv.maps, conv.kernel, (conv.kernel - 1) / 2),
                      BatchNorm2d(conv.maps), config_.batchnorm, true,
                      Dropout(config_.dropout_conv)};
      block.conv.init(init_rng);
      enc.convs.push_back(std::move(block));
      channels = conv.maps;
    }
    encoder_.push_back(std::move(enc));
  }

  std::size_t in = shapes.head_inputs;
  for (std::size_t units : fc_units(arch_)) {
    FullyConnected fc(in, units);
    fc.init(init_rng);
    head_.push_back(std::move(fc));
    head_dropout_.emplace_back(config_.dropout_fc);
    in = units;
  }

  if (!config_.build_decoder) return;
  decoder_.resize(stages.size());
  for (std::size_t m = stages.size(); m-- > 0;) {
    const auto& stage = stages[m];
    DecoderStage& dec = decoder_[m];
    dec.unpool = stage.pool;
    std::vector<std::size_t> channels{stage.in_channels};
    for (const auto& conv : stage.convs) channels.push_back(conv.maps);
    for (std::size_t j = stage.convs.size(); j-- > 0;) {
      const bool output_layer = m == 0 && j == 0;
      const std::size_t k = stage.convs[j].kernel;
      ConvBlock block{Conv2d(channels[j + 1], channels[j], k, (k - 1) / 2),
                      BatchNorm2d(channels[j]), config_.batchnorm_decoder && !output_layer,
                      !output_layer, Dropout(0.0)};
      block.conv.init(decoder_rng);
      dec.convs.push_back(std::move(block));
    }
  }
}

void SwwaeModel::check_input(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != input_.channels || images.dim(2) != input_.height ||
      images.dim(3) != input_.width) {
    throw std::invalid_argument("model expects N x " + std::to_string(input_.channels) + " x " +
                                std::to_string(input_.height) + " x " +
                                std::to_string(input_.width) + " images, got " +
                                to_string(images.shape()));
  }
}

Tensor SwwaeModel::run_block(ConvBlock& block, const Tensor& x, Mode mode, ConvBlockCache& cache) {
  cache.input = x;
  Tensor y = block.conv.forward(x);
  if (block.use_bn) y = block.bn.forward(y, mode);
  cache.pre_activation = y;
  if (block.relu) y = relu(y);
  y = block.dropout.forward(y, mode, dropout_rng_);
  cache.activation = y;
  return y;
}

Tensor SwwaeModel::block_backward(ConvBlock& block, const ConvBlockCache& cache,
                                  const Tensor& grad, bool want_grad_x) {
  Tensor g = block.dropout.backward(grad);
  if (block.relu) g = relu_backward(cache.pre_activation, g);
  if (block.use_bn) g = block.bn.backward(g);
  return block.conv.backward(cache.input, g, want_grad_x);
}

Tensor SwwaeModel::head_forward(const Tensor& top, Mode mode, ForwardTrace& trace) {
  Tensor h = flatten(top);
  trace.head_inputs.clear();
  std::vector<Tensor> outputs;
  for (std::size_t i = 0; i < head_.size(); ++i) {
    Tensor x = head_dropout_[i].forward(h, mode, dropout_rng_);
    trace.head_inputs.push_back(x);
    h = head_[i].forward(x);
    if (i + 1 < head_.size()) {
      outputs.push_back(h);
      h = relu(h);
    }
  }
  // Pre-activation outputs of the hidden fc layers follow the fc inputs.
  for (auto& o : outputs) trace.head_inputs.push_back(std::move(o));
  return h;
}

ForwardTrace SwwaeModel::forward(const Tensor& images, const std::vector<int>& labels,
                                 const std::vector<bool>& mask, Mode mode, bool force_decoder) {
  check_input(images);
  const std::size_t batch = images.dim(0);
  // An empty mask marks the whole batch unlabeled.
  if (!mask.empty() && mask.size() != batch) {
    throw std::invalid_argument("mask length differs from batch size");
  }
  if (any_of(mask) && labels.size() != batch) {
    throw std::invalid_argument("labels required for a nonempty mask");
  }

  ForwardTrace trace;
  trace.labels = labels;
  trace.mask = mask;
  trace.mode = mode;
  const LossWeights w = effective_weights(config_);
  const Mode encoder_mode = encoder_frozen_ ? Mode::eval : mode;

  Tensor a = images;
  trace.encoder_blocks.resize(encoder_.size());
  for (std::size_t m = 0; m < encoder_.size(); ++m) {
    trace.stage_inputs.push_back(a);
    auto& stage = encoder_[m];
    trace.encoder_blocks[m].resize(stage.convs.size());
    for (std::size_t j = 0; j < stage.convs.size(); ++j) {
      a = run_block(stage.convs[j], a, encoder_mode, trace.encoder_blocks[m][j]);
    }
    if (stage.pool) {
      trace.pool_inputs.push_back(a);
      PoolOutput pooled = config_.pool_mode == PoolMode::hard
                              ? hard_pool(a, stage.pool)
                              : soft_pool(a, stage.pool, config_.beta);
      a = pooled.what;
      trace.wheres.push_back(std::move(pooled));
    }
  }
  trace.top = a;

  if (has_head()) trace.logits = head_forward(trace.top, mode, trace);

  const bool run_decoder = has_decoder() && (w.rec > 0.0 || w.mid > 0.0 || force_decoder);
  if (run_decoder) {
    trace.decoder_ran = true;
    const std::size_t stages = encoder_.size();
    trace.decoded.resize(stages);
    trace.decoder_stage_inputs.resize(stages);
    trace.unpooled.resize(stages);
    trace.decoder_blocks.resize(stages);
    std::size_t pool_index = trace.wheres.size();
    Tensor d = trace.top;
    for (std::size_t m = stages; m-- > 0;) {
      auto& dec = decoder_[m];
      trace.decoder_stage_inputs[m] = d;
      if (dec.unpool) {
        --pool_index;
        d = config_.unpool_mode == UnpoolMode::upsample
                ? upsample(d, dec.unpool)
                : unpool(with_what(trace.wheres[pool_index], d));
        trace.unpooled[m] = d;
      }
      trace.decoder_blocks[m].resize(dec.convs.size());
      for (std::size_t j = 0; j < dec.convs.size(); ++j) {
        d = run_block(dec.convs[j], d, mode, trace.decoder_blocks[m][j]);
      }
      trace.decoded[m] = d;
    }
    trace.reconstruction = trace.decoded[0];
  }

  LossBreakdown& losses = trace.losses;
  if (has_head() && w.nll > 0.0 && any_of(mask)) {
    losses.nll = softmax_nll(trace.logits, labels, mask).loss;
  } else if (!has_head() && w.nll > 0.0 && any_of(mask)) {
    throw std::invalid_argument("classification loss requested but the architecture has no fc head");
  }
  if (trace.decoder_ran && w.rec > 0.0) {
    losses.rec = l2_loss(trace.decoded[0], trace.stage_inputs[0]).loss;
  }
  if (trace.decoder_ran && w.mid > 0.0) {
    for (std::size_t m = 1; m < trace.decoded.size(); ++m) {
      losses.mid += l2_loss(trace.decoded[m], trace.stage_inputs[m]).loss;
    }
  }
  if (config_.l1_weight > 0.0) {
    for (std::size_t m = 1; m < trace.stage_inputs.size(); ++m) {
      losses.l1 += l1_penalty(trace.stage_inputs[m], config_.l1_weight).loss;
    }
    losses.l1 += l1_penalty(trace.top, config_.l1_weight).loss;
  }
  losses.total = w.nll * losses.nll + w.rec * losses.rec + w.mid * losses.mid + losses.l1;
  return trace;
}

void SwwaeModel::backward(ForwardTrace& trace) {
  if (trace.stage_inputs.size() != encoder_.size() ||
      (trace.decoder_ran && trace.decoded.size() != decoder_.size())) {
    throw std::invalid_argument("backward: trace was not produced by this model");
  }
  zero_grad();
  const LossWeights w = effective_weights(config_);
  const std::size_t stages = encoder_.size();
  // grads[m] is d L / d x_m; grads[stages] belongs to the top what.
  std::vector<Tensor> grads(stages + 1);

  if (has_head() && w.nll > 0.0 && any_of(trace.mask)) {
    Tensor g = scaled(softmax_nll(trace.logits, trace.labels, trace.mask).grad, w.nll);
    const std::size_t fcs = head_.size();
    for (std::size_t i = fcs; i-- > 0;) {
      if (i + 1 < fcs) g = relu_backward(trace.head_inputs[fcs + i], g);
      g = head_[i].backward(trace.head_inputs[i], g, true);
      g = head_dropout_[i].backward(g);
    }
    add_into(grads[stages], g.reshaped(trace.top.shape()));
  }

  std::vector<Tensor> where_grads(stages);
  if (trace.decoder_ran && (w.rec > 0.0 || w.mid > 0.0)) {
    std::size_t pool_index = 0;
    Tensor carried;  // d L / d x~_m flowing down from stage m-1
    for (std::size_t m = 0; m < stages; ++m) {
      Tensor g = m == 0 ? Tensor(trace.decoded[0].shape()) : carried;
      if (m == 0 && w.rec > 0.0) {
        axpy(w.rec, l2_loss(trace.decoded[0], trace.stage_inputs[0]).grad, g);
      }
      if (m > 0 && w.mid > 0.0) {
        const LossGrad mid = l2_loss(trace.decoded[m], trace.stage_inputs[m]);
        axpy(w.mid, mid.grad, g);
        add_into(grads[m], scaled(mid.grad, -w.mid));
      }
      auto& dec = decoder_[m];
      for (std::size_t j = dec.convs.size(); j-- > 0;) {
        g = block_backward(dec.convs[j], trace.decoder_blocks[m][j], g, true);
      }
      if (dec.unpool) {
        if (config_.unpool_mode == UnpoolMode::upsample) {
          g = upsample_backward(g, dec.unpool);
        } else {
          auto ug = unpool_backward(
              with_what(trace.wheres[pool_index], trace.decoder_stage_inputs[m]), g);
          g = std::move(ug.grad_what);
          where_grads[m] = std::move(ug.grad_where);
        }
        ++pool_index;
      }
      carried = std::move(g);
    }
    add_into(grads[stages], carried);
  }

  if (config_.l1_weight > 0.0) {
    for (std::size_t m = 1; m < stages; ++m) {
      add_into(grads[m], l1_penalty(trace.stage_inputs[m], config_.l1_weight).grad);
    }
    add_into(grads[stages], l1_penalty(trace.top, config_.l1_weight).grad);
  }

  if (encoder_frozen_) return;
  std::size_t pool_index = trace.wheres.size();
  for (std::size_t m = stages; m-- > 0;) {
    auto& stage = encoder_[m];
    const Tensor& out = m + 1 < stages ? trace.stage_inputs[m + 1] : trace.top;
    Tensor g = grads[m + 1].empty() ? Tensor(out.shape()) : std::move(grads[m + 1]);
    if (stage.pool) {
      --pool_index;
      const PoolOutput& pooled = trace.wheres[pool_index];
      g = pooled.mode == PoolMode::hard
              ? hard_pool_backward(pooled, g)
              : soft_pool_backward(trace.pool_inputs[pool_index], pooled, g, where_grads[m]);
    }
    for (std::size_t j = stage.convs.size(); j-- > 0;) {
      const bool want_grad_x = m > 0 || j > 0;
      g = block_backward(stage.convs[j], trace.encoder_blocks[m][j], g, want_grad_x);
    }
    if (m > 0) add_into(grads[m], g);
  }
}

Tensor SwwaeModel::reconstruct(const Tensor& images) {
  if (!has_decoder()) throw std::logic_error("reconstruct: model was built without a decoder");
  const std::vector<bool> mask(images.rank() == 4 ? images.dim(0) : 0, false);
  return forward(images, {}, mask, Mode::eval, true).reconstruction;
}

Tensor SwwaeModel::predict(const Tensor& images) {
  if (!has_head()) throw std::logic_error("predict: architecture has no fc head");
  check_input(images);
  Tensor a = images;
  ConvBlockCache scratch;
  for (auto& stage : encoder_) {
    for (auto& block : stage.convs) a = run_block(block, a, Mode::eval, scratch);
    if (stage.pool) {
      a = config_.pool_mode == PoolMode::hard ? hard_pool(a, stage.pool).what
                                              : soft_pool(a, stage.pool, config_.beta).what;
    }
  }
  ForwardTrace unused;
  return head_forward(a, Mode::eval, unused);
}

void SwwaeModel::collect_block(ConvBlock& block, const std::string& name,
                               std::vector<ParamRef>& out) {
  if (!block.use_bn) {
    block.conv.collect(name, out);
    return;
  }
  // Batchnorm cancels a conv bias, so it stays at zero and is not trained.
  out.push_back({name + ".weight", &block.conv.weights, &block.conv.grad_weights});
  block.bn.collect(name + ".bn", out);
}

std::vector<ParamRef> SwwaeModel::parameters() {
  std::vector<ParamRef> params;
  for (std::size_t m = 0; m < encoder_.size(); ++m) {
    for (std::size_t j = 0; j < encoder_[m].convs.size(); ++j) {
      auto& block = encoder_[m].convs[j];
      collect_block(block, "enc" + std::to_string(m) + ".conv" + std::to_string(j), params);
    }
  }
  for (std::size_t i = 0; i < head_.size(); ++i) head_[i].collect("fc" + std::to_string(i), params);
  for (std::size_t m = decoder_.size(); m-- > 0;) {
    for (std::size_t j = 0; j < decoder_[m].convs.size(); ++j) {
      auto& block = decoder_[m].convs[j];
      collect_block(block, "dec" + std::to_string(m) + ".conv" + std::to_string(j), params);
    }
  }
  return params;
}

std::vector<ParamRef> SwwaeModel::trainable_parameters() {
  std::vector<ParamRef> out;
  for (auto& p : parameters()) {
    if (!p.grad) continue;
    if (encoder_frozen_ && p.name.rfind("enc", 0) == 0) continue;
    out.push_back(p);
  }
  return out;
}

void SwwaeModel::zero_grad() {
  for (auto& p : parameters()) {
    if (p.grad) p.grad->fill(0.0);
  }
}

}  // namespace swwae
