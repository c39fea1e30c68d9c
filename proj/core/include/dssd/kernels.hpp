#pragma once

#include <cstdint>
#include <vector>

#include "dssd/tensor.hpp"

namespace dssd {

/// Convolution parameters shared by conv2d and deconv2d.
///
/// conv2d weights are (out_c, in_c, k, k). deconv2d reuses the layout of the
/// convolution it transposes: weights are (in_c, out_c, k, k), so a deconv
/// and a conv built from the same ConvParams are adjoint to each other.
/// An empty bias means no bias term.
struct ConvParams {
  Tensor weights;
  Tensor bias;
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  int kernel() const { return weights.h(); }
  int extent() const { return dilation * (kernel() - 1) + 1; }
  bool has_bias() const { return !bias.empty(); }
};

struct BnParams {
  Tensor scale;
  Tensor shift;
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-5f;
  float momentum = 0.1f;

  int channels() const { return scale.n(); }

  static BnParams identity(int channels);
};

enum class BnMode { kTrain, kInfer };
enum class Combine { kSum, kProd };

// --- convolution -----------------------------------------------------------

int conv_output_size(int in, int kernel, int stride, int pad, int dilation);
int deconv_output_size(int in, int kernel, int stride, int pad, int dilation);

Tensor conv2d(const Tensor& input, const ConvParams& p);
Tensor deconv2d(const Tensor& input, const ConvParams& p);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;  // empty when the layer has no bias
};

/// Gradients of conv2d given the upstream gradient `grad_out`.
/// `want_input` false skips the input gradient (first layer, frozen producer).
ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out,
                          bool want_input = true, bool want_params = true);
ConvGrads deconv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out,
                            bool want_input = true, bool want_params = true);

// --- batch normalization ----------------------------------------------------

/// Per-channel statistics captured in the forward pass for backward.
struct BnCache {
  BnMode mode = BnMode::kInfer;
  std::vector<double> mean;
  std::vector<double> inv_std;
};

/// y = scale * (x - mean) / sqrt(var + eps) + shift.
/// Train mode uses batch statistics (biased variance) and moves the running
/// statistics by `momentum`; infer mode uses the running statistics.
Tensor batchnorm(const Tensor& input, BnParams& p, BnMode mode, BnCache* cache = nullptr);
/// Infer-mode only; never touches running statistics.
Tensor batchnorm_infer(const Tensor& input, const BnParams& p);

struct BnGrads {
  Tensor input;
  Tensor scale;
  Tensor shift;
};

BnGrads batchnorm_backward(const Tensor& input, const BnParams& p, const BnCache& cache,
                           const Tensor& grad_out);

// --- pointwise and pooling ---------------------------------------------------

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

struct PoolResult {
  Tensor output;
  std::vector<std::uint32_t> argmax;  // flat input offset per output element
};

/// Max pooling without padding. Ties go to the first element in row-major
/// window order.
PoolResult maxpool2d(const Tensor& input, int kernel, int stride);
Tensor maxpool2d_backward(const Shape& input_shape, const PoolResult& forward,
                          const Tensor& grad_out);

Tensor eltwise(const Tensor& a, const Tensor& b, Combine mode);

struct EltwiseGrads {
  Tensor a;
  Tensor b;
};

EltwiseGrads eltwise_backward(const Tensor& a, const Tensor& b, Combine mode,
                              const Tensor& grad_out);

}  // namespace dssd
