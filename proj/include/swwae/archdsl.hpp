#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace swwae {

// Architecture strings such as "(16)5c-(32)3c-2p-10fc":
//   spec  := token ("-" token)*
//   token := "(" int ")" int "c"   convolution: feature maps, odd kernel
//          | int "p"               non-overlapping pooling
//          | int "fc"              fully connected units

struct ConvSpec {
  std::size_t maps = 0;
  std::size_t kernel = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};
struct PoolSpec {
  std::size_t size = 0;
  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};
struct FcSpec {
  std::size_t units = 0;
  friend bool operator==(const FcSpec&, const FcSpec&) = default;
};
using LayerSpec = std::variant<ConvSpec, PoolSpec, FcSpec>;

/// Decoder counterparts: unpooling, and a same-padded reconstruction
/// convolution mapping `in_channels` back to `out_channels`.
struct UnpoolSpec {
  std::size_t size = 0;
  friend bool operator==(const UnpoolSpec&, const UnpoolSpec&) = default;
};
struct DeconvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  friend bool operator==(const DeconvSpec&, const DeconvSpec&) = default;
};
using DecoderSpec = std::variant<UnpoolSpec, DeconvSpec>;

struct ArchSpec {
  std::vector<LayerSpec> encoder;
  std::vector<DecoderSpec> decoder;
  std::size_t input_channels = 1;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

class ArchParseError : public std::invalid_argument {
 public:
  ArchParseError(const std::string& message, std::size_t offset)
      : std::invalid_argument(message + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Parses and validates an architecture string and derives its decoder.
ArchSpec parse_architecture(std::string_view text, std::size_t input_channels = 1);

/// Mirrors the conv/pool prefix: reversed order, Pool(s) -> Unpool(s),
/// Conv(m, k) -> Deconv(m -> that conv's input channels, k).
std::vector<DecoderSpec> mirror_decoder(const std::vector<LayerSpec>& encoder,
                                        std::size_t input_channels);

std::string format_architecture(const ArchSpec& spec);
std::string format_layer(const LayerSpec& layer);

/// One what-where stage: a run of convolutions closed by a pool (or by
/// the end of the conv/pool prefix).
struct StageSpec {
  std::vector<ConvSpec> convs;
  std::size_t pool = 0;  // 0: no pooling
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};
std::vector<StageSpec> encoder_stages(const ArchSpec& spec);
std::vector<std::size_t> fc_units(const ArchSpec& spec);

/// Product of all pool sizes; input extents must be multiples of it.
std::size_t pooling_factor(const ArchSpec& spec);

struct SpatialShape {
  std::size_t channels = 0, height = 0, width = 0;
  friend bool operator==(const SpatialShape&, const SpatialShape&) = default;
};

/// Symbolic shape propagation through encoder and decoder.
struct ShapeTrace {
  std::vector<SpatialShape> encoder;  // after each conv/pool layer
  SpatialShape top;                   // input to the fully connected head
  std::size_t head_inputs = 0;
  std::vector<SpatialShape> decoder;  // after each decoder layer
  SpatialShape reconstruction;
};
ShapeTrace propagate_shapes(const ArchSpec& spec, std::size_t height, std::size_t width);

}  // namespace swwae
