#include "dssd/blocks.hpp"

#include <cmath>

#include "dssd/errors.hpp"

namespace dssd {

void Initializer::fill_normal(Tensor& t, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& v : t.data()) v = static_cast<float>(dist(rng_));
}

ConvParams Initializer::conv(int out_c, int in_c, int kernel, bool bias, double gain) {
  ConvParams p;
  p.weights = Tensor(Shape{out_c, in_c, kernel, kernel});
  fill_normal(p.weights, std::sqrt(gain / (static_cast<double>(in_c) * kernel * kernel)));
  if (bias) p.bias = Tensor::vector(out_c);
  return p;
}

ConvParams Initializer::deconv(int in_c, int out_c, int kernel, int stride, bool bias) {
  ConvParams p;
  p.weights = Tensor(Shape{in_c, out_c, kernel, kernel});
  const double fan_in =
      std::max(1.0, static_cast<double>(in_c) * kernel * kernel / (stride * stride));
  fill_normal(p.weights, std::sqrt(2.0 / fan_in));
  if (bias) p.bias = Tensor::vector(out_c);
  p.stride = stride;
  return p;
}

int add_conv_bn(NetworkGraph& g, Initializer& init, const std::string& prefix, int input,
                int in_c, int out_c, int kernel, int stride, int pad, int dilation, bool relu) {
  ConvParams p = init.conv(out_c, in_c, kernel, false);
  p.stride = stride;
  p.pad = pad;
  p.dilation = dilation;
  int x = g.add_conv(prefix + ".conv", input, std::move(p));
  x = g.add_batchnorm(prefix + ".bn", x, init.bn(out_c));
  if (relu) x = g.add_relu(prefix + ".relu", x);
  return x;
}

int add_residual_block(NetworkGraph& g, Initializer& init, const std::string& prefix, int input,
                       int in_c, int out_c, int stride, int dilation) {
  int branch = add_conv_bn(g, init, prefix + ".a", input, in_c, out_c, 3, stride, dilation,
                           dilation, true);
  branch = add_conv_bn(g, init, prefix + ".b", branch, out_c, out_c, 3, 1, dilation, dilation,
                       false);
  int skip = input;
  if (in_c != out_c || stride != 1) {
    skip = add_conv_bn(g, init, prefix + ".proj", input, in_c, out_c, 1, stride, 0, 1, false);
  }
  const int sum = g.add_eltwise(prefix + ".sum", branch, skip, Combine::kSum);
  return g.add_relu(prefix + ".out", sum);
}

namespace {

// Residual stage whose strides can be removed (dilation 2) without changing
// any parameter shape.
int add_stage(NetworkGraph& g, Initializer& init, const std::string& prefix, int input, int in_c,
              int out_c, bool dilated) {
  const int stride = dilated ? 1 : 2;
  const int dilation = dilated ? 2 : 1;
  int branch = add_conv_bn(g, init, prefix + ".a", input, in_c, out_c, 3, stride, dilation,
                           dilation, true);
  branch = add_conv_bn(g, init, prefix + ".b", branch, out_c, out_c, 3, 1, dilation, dilation,
                       false);
  const int skip =
      add_conv_bn(g, init, prefix + ".proj", input, in_c, out_c, 1, stride, 0, 1, false);
  const int sum = g.add_eltwise(prefix + ".sum", branch, skip, Combine::kSum);
  return g.add_relu(prefix + ".out", sum);
}

int bottleneck_width(int channels) { return std::max(1, channels / 4); }

int add_bottleneck(NetworkGraph& g, Initializer& init, const std::string& prefix, int input,
                   int channels, bool projection) {
  const int mid = bottleneck_width(channels);
  int x = add_conv_bn(g, init, prefix + ".a", input, channels, mid, 1, 1, 0, 1, true);
  x = add_conv_bn(g, init, prefix + ".b", x, mid, mid, 1, 1, 0, 1, true);
  x = add_conv_bn(g, init, prefix + ".c", x, mid, channels, 1, 1, 0, 1, false);
  int skip = input;
  if (projection) {
    skip = add_conv_bn(g, init, prefix + ".proj", input, channels, channels, 1, 1, 0, 1, false);
  }
  const int sum = g.add_eltwise(prefix + ".sum", x, skip, Combine::kSum);
  return g.add_relu(prefix + ".out", sum);
}

// Extra layer between two pyramid levels of the encoder.
int add_extra_layer(NetworkGraph& g, Initializer& init, const std::string& prefix, int input,
                    int in_c, int out_c, int from, int to) {
  if (from == 3 && to == 1) {
    return add_conv_bn(g, init, prefix, input, in_c, out_c, 3, 1, 0, 1, true);
  }
  if (from == 2 * to || from == 2 * to - 1) {
    return add_residual_block(g, init, prefix, input, in_c, out_c, 2, 1);
  }
  throw SpecError("no extra layer maps " + std::to_string(from) + " -> " + std::to_string(to));
}

std::string level_name(const char* stem, int level) { return stem + std::to_string(level); }

struct Encoder {
  std::vector<int> features;
};

Encoder add_encoder(NetworkGraph& g, Initializer& init, int input, const PyramidSpec& spec) {
  Encoder e;
  const BackboneTaps taps = add_backbone(g, init, input, spec);
  e.features = {taps.level1, taps.last_stage};
  for (std::size_t i = 2; i < spec.levels.size(); ++i) {
    e.features.push_back(add_extra_layer(g, init, level_name("extra", static_cast<int>(i)),
                                         e.features.back(), spec.levels[i - 1].channels,
                                         spec.levels[i].channels, spec.levels[i - 1].size,
                                         spec.levels[i].size));
  }
  return e;
}

void check_level_sizes(const NetworkGraph& g, const std::vector<int>& features,
                       const PyramidSpec& spec) {
  const auto shapes = g.infer_shapes(Shape{1, 3, spec.input_size, spec.input_size});
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Shape& s = shapes[features[i]];
    if (s.h != spec.levels[i].size || s.w != spec.levels[i].size) {
      throw SpecError("spec " + spec.name + ": level " + std::to_string(i) + " expects size " +
                      std::to_string(spec.levels[i].size) + " but the network produces " +
                      std::to_string(s.h));
    }
  }
}

void add_level_head(NetworkGraph& g, Initializer& init, const std::string& pm_prefix,
                    const std::string& head_prefix, int level, int feature,
                    const PyramidSpec& spec) {
  const int boxes = spec.boxes_per_location();
  const int channels = spec.levels[level].channels;
  int x = feature;
  switch (spec.pm_variant) {
    case PmVariant::kA:
      break;
    case PmVariant::kB:
      x = add_bottleneck(g, init, pm_prefix + ".res1", x, channels, true);
      break;
    case PmVariant::kC:
      x = add_bottleneck(g, init, pm_prefix + ".res1", x, channels, false);
      break;
    case PmVariant::kD:
      x = add_bottleneck(g, init, pm_prefix + ".res1", x, channels, false);
      x = add_bottleneck(g, init, pm_prefix + ".res2", x, channels, false);
      break;
  }
  ConvParams cls = init.conv(boxes * spec.num_classes, channels, 3, true, 1.0);
  cls.pad = 1;
  ConvParams box = init.conv(boxes * 4, channels, 3, true, 1.0);
  box.pad = 1;
  const int cls_node = g.add_conv(head_prefix + ".cls", x, std::move(cls));
  const int box_node = g.add_conv(head_prefix + ".box", x, std::move(box));
  g.add_head(PredictionHead{level, spec.levels[level].size, x, cls_node, box_node});
}

}  // namespace

BackboneTaps add_backbone(NetworkGraph& g, Initializer& init, int input, const PyramidSpec& spec) {
  spec.validate();
  const int c0 = spec.stem_channels;
  int x = add_conv_bn(g, init, "backbone.stem1", input, 3, c0, 3, 1, 1, 1, true);
  x = g.add_maxpool("backbone.pool", x, 2, 2);
  x = add_conv_bn(g, init, "backbone.stem2", x, c0, 2 * c0, 3, 2, 1, 1, true);
  BackboneTaps taps;
  taps.level1 = add_stage(g, init, "backbone.conv3", x, 2 * c0, spec.levels[0].channels, false);
  x = add_stage(g, init, "backbone.conv4", taps.level1, spec.levels[0].channels,
                spec.levels[1].channels, false);
  taps.last_stage = add_stage(g, init, "backbone.conv5", x, spec.levels[1].channels,
                              spec.levels[1].channels, spec.dilated_last_stage);
  const auto shapes = g.infer_shapes(Shape{1, 3, spec.input_size, spec.input_size});
  if (shapes[taps.level1].h != spec.levels[0].size) {
    throw SpecError("spec " + spec.name + ": input " + std::to_string(spec.input_size) +
                    " gives a first level of " + std::to_string(shapes[taps.level1].h) +
                    ", expected " + std::to_string(spec.levels[0].size));
  }
  return taps;
}

HeadNodes add_prediction_module(NetworkGraph& g, Initializer& init, const std::string& prefix,
                                int feature, PmVariant variant, int channels, int num_classes,
                                int boxes_per_location) {
  if (channels <= 0) throw SpecError("prediction module: channels must be positive");
  PyramidSpec one;
  one.levels = {{1, channels}};
  one.pm_variant = variant;
  one.num_classes = num_classes;
  one.aspect_ratios.assign(static_cast<std::size_t>(std::max(0, boxes_per_location - 2) / 2), 1.0);
  if (one.boxes_per_location() != boxes_per_location) {
    throw SpecError("prediction module: boxes per location must be 2 + 2k");
  }
  const std::size_t before = g.heads().size();
  add_level_head(g, init, prefix + ".pm", prefix + ".head", 0, feature, one);
  const PredictionHead& h = g.heads()[before];
  return HeadNodes{h.feature_node, h.class_node, h.box_node};
}

int add_deconv_module(NetworkGraph& g, Initializer& init, const std::string& prefix, int coarse,
                      int skip, int coarse_c, int skip_c, int out_c, int coarse_size,
                      int skip_size, Combine combine) {
  int kernel = 0;
  int stride = 2;
  int pad = 0;
  if (skip_size == 2 * coarse_size) {
    kernel = 2;
  } else if (skip_size == 2 * coarse_size - 1) {
    kernel = 3;
    pad = 1;
  } else if (coarse_size == 1) {
    kernel = skip_size;
    stride = 1;
  } else {
    throw ShapeError("deconv module: cannot upsample " + std::to_string(coarse_size) + " to " +
                     std::to_string(skip_size));
  }
  ConvParams up = init.deconv(coarse_c, out_c, kernel, stride, true);
  up.pad = pad;
  int a = g.add_deconv(prefix + ".deconv", coarse, std::move(up));
  a = add_conv_bn(g, init, prefix + ".up", a, out_c, out_c, 3, 1, 1, 1, false);
  int b = add_conv_bn(g, init, prefix + ".skip1", skip, skip_c, out_c, 3, 1, 1, 1, true);
  b = add_conv_bn(g, init, prefix + ".skip2", b, out_c, out_c, 3, 1, 1, 1, false);
  const int combined = g.add_eltwise(prefix + ".combine", a, b, combine);
  return g.add_relu(prefix + ".out", combined);
}

NetworkGraph build_backbone(const PyramidSpec& spec, std::uint64_t seed) {
  NetworkGraph g;
  Initializer init(seed);
  add_backbone(g, init, g.add_input("data", 3), spec);
  return g;
}

NetworkGraph build_prediction_module(PmVariant variant, int in_channels, int num_classes,
                                     int boxes_per_location, std::uint64_t seed) {
  NetworkGraph g;
  Initializer init(seed);
  add_prediction_module(g, init, "pm", g.add_input("x", in_channels), variant, in_channels,
                        num_classes, boxes_per_location);
  return g;
}

NetworkGraph build_deconv_module(int coarse_channels, int skip_channels, int out_channels,
                                 Combine combine, std::uint64_t seed, int coarse_size,
                                 int skip_size) {
  NetworkGraph g;
  Initializer init(seed);
  const int coarse = g.add_input("coarse", coarse_channels);
  const int skip = g.add_input("skip", skip_channels);
  add_deconv_module(g, init, "dm", coarse, skip, coarse_channels, skip_channels, out_channels,
                    coarse_size, skip_size, combine);
  return g;
}

NetworkGraph assemble_ssd(const PyramidSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkGraph g;
  Initializer init(seed);
  const Encoder e = add_encoder(g, init, g.add_input("data", 3), spec);
  check_level_sizes(g, e.features, spec);
  for (std::size_t i = 0; i < e.features.size(); ++i) {
    const int level = static_cast<int>(i);
    add_level_head(g, init, level_name("pm", level), level_name("head", level), level,
                   e.features[i], spec);
  }
  return g;
}

NetworkGraph assemble_dssd(const NetworkGraph& ssd, const PyramidSpec& spec, std::uint64_t seed) {
  spec.validate();
  NetworkGraph g;
  Initializer init(seed);
  const Encoder e = add_encoder(g, init, g.add_input("data", 3), spec);
  check_level_sizes(g, e.features, spec);
  const int last = static_cast<int>(e.features.size()) - 1;

  std::vector<int> decoded(e.features.size(), -1);
  decoded[last] = e.features[last];
  for (int i = last - 1; i >= 0; --i) {
    decoded[i] = add_deconv_module(
        g, init, level_name("decoder.dm", i), decoded[i + 1], e.features[i],
        spec.levels[i + 1].channels, spec.levels[i].channels, spec.levels[i].channels,
        spec.levels[i + 1].size, spec.levels[i].size, spec.dm_combine);
  }
  for (int i = 0; i < last; ++i) {
    add_level_head(g, init, level_name("dssd.pm", i), level_name("dssd.head", i), i, decoded[i],
                   spec);
  }
  // The coarsest level keeps its SSD head and names.
  add_level_head(g, init, level_name("pm", last), level_name("head", last), last, decoded[last],
                 spec);

  g.for_each_param([&](ParamView p) {
    if (is_decoder_param(p.name)) return;
    if (!ssd.has_param(p.name)) {
      throw SpecError("assemble_dssd: SSD graph lacks parameter " + p.name);
    }
    const Tensor& src = ssd.param(p.name);
    if (src.shape() != p.value.shape()) {
      throw SpecError("assemble_dssd: shape mismatch for " + p.name);
    }
    std::copy(src.data().begin(), src.data().end(), p.value.data().begin());
  });
  return g;
}

bool is_decoder_param(std::string_view name) {
  return name.starts_with("decoder.") || name.starts_with("dssd.");
}

}  // namespace dssd
