#include "swwae/archdsl.hpp"

#include <cctype>
#include <sstream>

namespace swwae {

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  std::vector<LayerSpec> parse() {
    if (text_.empty()) throw ArchParseError("empty architecture", 0);
    std::vector<LayerSpec> layers;
    while (true) {
      layers.push_back(token());
      if (pos_ == text_.size()) break;
      expect('-');
    }
    return layers;
  }

 private:
  LayerSpec token() {
    if (peek() == '(') {
      ++pos_;
      const std::size_t maps_at = pos_;
      const std::size_t maps = number();
      expect(')');
      const std::size_t kernel_at = pos_;
      const std::size_t kernel = number();
      expect('c');
      if (maps == 0) throw ArchParseError("convolution needs at least one feature map", maps_at);
      if (kernel == 0 || kernel % 2 == 0) {
        throw ArchParseError("convolution kernel must be odd, got " + std::to_string(kernel),
                             kernel_at);
      }
      return ConvSpec{maps, kernel};
    }
    const std::size_t value_at = pos_;
    const std::size_t value = number();
    if (value == 0) throw ArchParseError("layer size must be positive", value_at);
    if (peek() == 'p') {
      ++pos_;
      return PoolSpec{value};
    }
    if (peek() == 'f') {
      ++pos_;
      expect('c');
      return FcSpec{value};
    }
    throw ArchParseError(unexpected("'p' or 'fc'"), pos_);
  }

  std::size_t number() {
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(text_[pos_] - '0');
      if (value > 1'000'000) throw ArchParseError("number too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ArchParseError(unexpected("a number"), pos_);
    return value;
  }

  void expect(char c) {
    if (peek() != c) throw ArchParseError(unexpected(std::string("'") + c + "'"), pos_);
    ++pos_;
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  std::string unexpected(const std::string& wanted) const {
    if (pos_ >= text_.size()) return "expected " + wanted + " but input ended";
    return "expected " + wanted + ", found '" + std::string(1, text_[pos_]) + "'";
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool is_fc(const LayerSpec& layer) { return std::holds_alternative<FcSpec>(layer); }

}  // namespace

ArchSpec parse_architecture(std::string_view text, std::size_t input_channels) {
  if (input_channels == 0) throw std::invalid_argument("input channels must be positive");
  ArchSpec spec;
  spec.encoder = Parser(text).parse();
  bool seen_fc = false;
  std::size_t offset = 0;
  for (const auto& layer : spec.encoder) {
    if (is_fc(layer)) {
      seen_fc = true;
    } else if (seen_fc) {
      throw ArchParseError("convolution or pooling after a fully connected layer", offset);
    }
    offset += format_layer(layer).size() + 1;
  }
  spec.input_channels = input_channels;
  spec.decoder = mirror_decoder(spec.encoder, input_channels);
  return spec;
}

std::vector<DecoderSpec> mirror_decoder(const std::vector<LayerSpec>& encoder,
                                        std::size_t input_channels) {
  std::vector<DecoderSpec> decoder;
  std::size_t channels = input_channels;
  for (const auto& layer : encoder) {
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      decoder.push_back(DeconvSpec{conv->maps, channels, conv->kernel});
      channels = conv->maps;
    } else if (const auto* pool = std::get_if<PoolSpec>(&layer)) {
      decoder.push_back(UnpoolSpec{pool->size});
    }
  }
  return {decoder.rbegin(), decoder.rend()};
}

std::string format_layer(const LayerSpec& layer) {
  if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
    return "(" + std::to_string(conv->maps) + ")" + std::to_string(conv->kernel) + "c";
  }
  if (const auto* pool = std::get_if<PoolSpec>(&layer)) return std::to_string(pool->size) + "p";
  return std::to_string(std::get<FcSpec>(layer).units) + "fc";
}

std::string format_architecture(const ArchSpec& spec) {
  if (spec.encoder.empty()) throw std::invalid_argument("cannot format an empty architecture");
  std::ostringstream os;
  for (std::size_t i = 0; i < spec.encoder.size(); ++i) {
    if (i) os << '-';
    os << format_layer(spec.encoder[i]);
  }
  return os.str();
}

std::vector<StageSpec> encoder_stages(const ArchSpec& spec) {
  std::vector<StageSpec> stages;
  StageSpec current;
  std::size_t channels = spec.input_channels;
  current.in_channels = channels;
  for (const auto& layer : spec.encoder) {
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      current.convs.push_back(*conv);
      channels = conv->maps;
    } else if (const auto* pool = std::get_if<PoolSpec>(&layer)) {
      current.pool = pool->size;
      current.out_channels = channels;
      stages.push_back(current);
      current = StageSpec{};
      current.in_channels = channels;
    }
  }
  if (!current.convs.empty()) {
    current.out_channels = channels;
    stages.push_back(current);
  }
  return stages;
}

std::vector<std::size_t> fc_units(const ArchSpec& spec) {
  std::vector<std::size_t> units;
  for (const auto& layer : spec.encoder) {
    if (const auto* fc = std::get_if<FcSpec>(&layer)) units.push_back(fc->units);
  }
  return units;
}

std::size_t pooling_factor(const ArchSpec& spec) {
  std::size_t factor = 1;
  for (const auto& layer : spec.encoder) {
    if (const auto* pool = std::get_if<PoolSpec>(&layer)) factor *= pool->size;
  }
  return factor;
}

ShapeTrace propagate_shapes(const ArchSpec& spec, std::size_t height, std::size_t width) {
  ShapeTrace trace;
  SpatialShape shape{spec.input_channels, height, width};
  for (const auto& layer : spec.encoder) {
    if (const auto* conv = std::get_if<ConvSpec>(&layer)) {
      // Same padding keeps the extent.
      shape.channels = conv->maps;
    } else if (const auto* pool = std::get_if<PoolSpec>(&layer)) {
      if (shape.height % pool->size != 0 || shape.width % pool->size != 0) {
        throw std::invalid_argument("pool " + std::to_string(pool->size) + " does not divide " +
                                    std::to_string(shape.height) + "x" +
                                    std::to_string(shape.width));
      }
      shape.height /= pool->size;
      shape.width /= pool->size;
    } else {
      break;
    }
    trace.encoder.push_back(shape);
  }
  trace.top = shape;
  trace.head_inputs = shape.channels * shape.height * shape.width;
  for (const auto& layer : spec.decoder) {
    if (const auto* unpool = std::get_if<UnpoolSpec>(&layer)) {
      shape.height *= unpool->size;
      shape.width *= unpool->size;
    } else {
      const auto& deconv = std::get<DeconvSpec>(layer);
      if (deconv.in_channels != shape.channels) {
        throw std::logic_error("decoder channel mismatch");
      }
      shape.channels = deconv.out_channels;
    }
    trace.decoder.push_back(shape);
  }
  trace.reconstruction = shape;
  return trace;
}

}  // namespace swwae
