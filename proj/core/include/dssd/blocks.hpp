#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "dssd/graph.hpp"
#include "dssd/pyramid_spec.hpp"

namespace dssd {

/// Seeded parameter initializer. Conv and deconv weights use fan-in scaled
/// normals (gain 2 before a relu, gain 1 for linear heads); biases and BN
/// shifts start at zero, BN scales at one.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  ConvParams conv(int out_c, int in_c, int kernel, bool bias, double gain = 2.0);
  /// Deconv weights are laid out (in_c, out_c, k, k).
  ConvParams deconv(int in_c, int out_c, int kernel, int stride, bool bias);
  BnParams bn(int channels) { return BnParams::identity(channels); }

 private:
  void fill_normal(Tensor& t, double stddev);
  std::mt19937_64 rng_;
};

// --- graph fragments ---------------------------------------------------------

/// conv (no bias) -> BN [-> relu]. Returns the last node.
int add_conv_bn(NetworkGraph& g, Initializer& init, const std::string& prefix, int input,
                int in_c, int out_c, int kernel, int stride, int pad, int dilation, bool relu);

/// Basic two-conv residual block used by the backbone and extra layers.
/// A 1x1 projection replaces the identity skip when channels or stride change.
int add_residual_block(NetworkGraph& g, Initializer& init, const std::string& prefix, int input,
                       int in_c, int out_c, int stride, int dilation);

struct BackboneTaps {
  int level1 = -1;      // first pyramid level (stride 8)
  int last_stage = -1;  // output of the final stage
};

/// Tiny residual backbone: stem (conv, pool, strided conv) then three
/// residual stages. The first stage feeds level 1; the last stage feeds
/// level 2. With `dilated_last_stage` the last stage's strided convs run at
/// stride 1 and its 3x3 convs at dilation 2, with identical parameter shapes.
BackboneTaps add_backbone(NetworkGraph& g, Initializer& init, int input, const PyramidSpec& spec);

struct HeadNodes {
  int feature = -1;  // input of the heads (after the prediction module)
  int cls = -1;
  int box = -1;
};

/// Prediction module variants:
///   a: heads directly on the feature map;
///   b: bottleneck residual block with a 1x1 projection skip;
///   c: bottleneck residual block with identity skip;
///   d: two sequential variant-c blocks.
/// Heads are 3x3 convs emitting boxes*num_classes and boxes*4 maps.
HeadNodes add_prediction_module(NetworkGraph& g, Initializer& init, const std::string& prefix,
                                int feature, PmVariant variant, int channels, int num_classes,
                                int boxes_per_location);

/// Deconvolution module. Coarse path: deconv -> 3x3 conv -> BN. Skip path:
/// 3x3 conv -> BN -> relu -> 3x3 conv -> BN. The paths are combined
/// element-wise and passed through a relu. Both paths emit `out_c` channels
/// at `skip_size`. Throws ShapeError when no deconv geometry maps
/// `coarse_size` onto `skip_size`.
int add_deconv_module(NetworkGraph& g, Initializer& init, const std::string& prefix, int coarse,
                      int skip, int coarse_c, int skip_c, int out_c, int coarse_size,
                      int skip_size, Combine combine);

// --- standalone builders -----------------------------------------------------

/// Backbone on its own. Nodes "backbone.conv3.out" and "backbone.conv5.out"
/// are the level-1 and last-stage taps.
NetworkGraph build_backbone(const PyramidSpec& spec, std::uint64_t seed);

/// One-input graph (input "x") with a single prediction head.
NetworkGraph build_prediction_module(PmVariant variant, int in_channels, int num_classes,
                                     int boxes_per_location, std::uint64_t seed);

/// Two-input graph (inputs "coarse", "skip"); the last node is the output.
NetworkGraph build_deconv_module(int coarse_channels, int skip_channels, int out_channels,
                                 Combine combine, std::uint64_t seed, int coarse_size = 4,
                                 int skip_size = 8);

/// SSD: backbone, extra layers, and a prediction module plus heads on every
/// pyramid level.
NetworkGraph assemble_ssd(const PyramidSpec& spec, std::uint64_t seed);

/// DSSD built around a trained SSD graph: the encoder and the coarsest
/// level's head are copied from `ssd`; the other levels predict from new
/// deconvolution-module outputs with freshly initialized heads.
NetworkGraph assemble_dssd(const NetworkGraph& ssd, const PyramidSpec& spec, std::uint64_t seed);

/// True for parameters introduced by assemble_dssd (decoder and new heads).
bool is_decoder_param(std::string_view name);

}  // namespace dssd
