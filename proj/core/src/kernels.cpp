#include "dssd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dssd/errors.hpp"
#include "dssd/parallel.hpp"

namespace dssd {
namespace {

struct Geometry {
  int channels;
  int height;
  int width;
  int kernel;
  int stride;
  int pad;
  int dilation;
  int out_h;
  int out_w;

  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

// Unfolds one (C,H,W) image into a (C*K*K, OH*OW) matrix. Out-of-image taps
// read as zero.
void im2col(const float* image, const Geometry& g, float* col) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int kh = 0; kh < g.kernel; ++kh) {
      for (int kw = 0; kw < g.kernel; ++kw) {
        float* row = col + static_cast<std::size_t>((c * g.kernel + kh) * g.kernel + kw) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + kh * g.dilation;
          float* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = image + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kw * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds columns back into a (C,H,W) buffer.
void col2im(const double* col, const Geometry& g, double* image) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int kh = 0; kh < g.kernel; ++kh) {
      for (int kw = 0; kw < g.kernel; ++kw) {
        const double* row =
            col + static_cast<std::size_t>((c * g.kernel + kh) * g.kernel + kw) * cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + kh * g.dilation;
          if (iy < 0 || iy >= g.height) continue;
          double* dst = image + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          const double* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kw * g.dilation;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// out[m, :] = sum_k a[m, k] * b[k, :]   (a: M x K, b: K x N), double accumulation.
void matmul_rows(const float* a, const float* b, int m_rows, int k_dim, int n_cols,
                 double* out) {
  parallel_for(0, m_rows, [&](std::ptrdiff_t m) {
    double* acc = out + m * n_cols;
    std::fill(acc, acc + n_cols, 0.0);
    const float* arow = a + m * k_dim;
    for (int k = 0; k < k_dim; ++k) {
      const double w = arow[k];
      const float* brow = b + static_cast<std::size_t>(k) * n_cols;
      for (int j = 0; j < n_cols; ++j) acc[j] += w * brow[j];
    }
  });
}

// out[k, :] = sum_m a[m, k] * b[m, :]   (a: M x K, b: M x N).
void matmul_transposed_lhs(const float* a, const float* b, int m_rows, int k_dim, int n_cols,
                           double* out) {
  parallel_for(0, k_dim, [&](std::ptrdiff_t k) {
    double* acc = out + k * n_cols;
    std::fill(acc, acc + n_cols, 0.0);
    for (int m = 0; m < m_rows; ++m) {
      const double w = a[static_cast<std::size_t>(m) * k_dim + k];
      const float* brow = b + static_cast<std::size_t>(m) * n_cols;
      for (int j = 0; j < n_cols; ++j) acc[j] += w * brow[j];
    }
  });
}

// out[m, k] += sum_j a[m, j] * b[k, j]   (a: M x N, b: K x N).
void accumulate_outer(const float* a, const float* b, int m_rows, int k_dim, int n_cols,
                      double* out) {
  parallel_for(0, m_rows, [&](std::ptrdiff_t m) {
    const float* arow = a + m * n_cols;
    for (int k = 0; k < k_dim; ++k) {
      const float* brow = b + static_cast<std::size_t>(k) * n_cols;
      double dot = 0.0;
      for (int j = 0; j < n_cols; ++j) dot += static_cast<double>(arow[j]) * brow[j];
      out[m * k_dim + k] += dot;
    }
  });
}

Tensor to_tensor(Shape shape, const std::vector<double>& values) {
  std::vector<float> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
  return Tensor(shape, std::move(out));
}

void check_conv_params(const ConvParams& p, const char* op) {
  const Shape& ws = p.weights.shape();
  if (ws.n <= 0 || ws.c <= 0 || ws.h < 1 || ws.h != ws.w) {
    throw ShapeError(std::string(op) + ": weights must be (a, b, k, k) with k >= 1, got " +
                     ws.str());
  }
  if (p.stride < 1 || p.dilation < 1 || p.pad < 0) {
    throw ShapeError(std::string(op) + ": stride and dilation must be >= 1, pad >= 0");
  }
}

void check_bias(const ConvParams& p, int channels, const char* op) {
  if (p.has_bias() && static_cast<int>(p.bias.size()) != channels) {
    throw ShapeError(std::string(op) + ": bias length " + std::to_string(p.bias.size()) +
                     " does not match " + std::to_string(channels) + " output channels");
  }
}

Geometry conv_geometry(const Tensor& input, const ConvParams& p) {
  check_conv_params(p, "conv2d");
  if (input.c() != p.weights.c()) {
    throw ShapeError("conv2d: input has " + std::to_string(input.c()) +
                     " channels, weights expect " + std::to_string(p.weights.c()));
  }
  check_bias(p, p.weights.n(), "conv2d");
  const int extent = p.extent();
  if (extent > input.h() + 2 * p.pad || extent > input.w() + 2 * p.pad) {
    throw ShapeError("conv2d: effective kernel extent " + std::to_string(extent) +
                     " exceeds padded input " + input.shape().str());
  }
  return Geometry{input.c(),
                  input.h(),
                  input.w(),
                  p.kernel(),
                  p.stride,
                  p.pad,
                  p.dilation,
                  conv_output_size(input.h(), p.kernel(), p.stride, p.pad, p.dilation),
                  conv_output_size(input.w(), p.kernel(), p.stride, p.pad, p.dilation)};
}

// Geometry of the deconv *output* image viewed as the input of the adjoint conv.
Geometry deconv_geometry(const Tensor& input, const ConvParams& p) {
  check_conv_params(p, "deconv2d");
  if (input.c() != p.weights.n()) {
    throw ShapeError("deconv2d: input has " + std::to_string(input.c()) +
                     " channels, weights expect " + std::to_string(p.weights.n()));
  }
  check_bias(p, p.weights.c(), "deconv2d");
  const int oh = deconv_output_size(input.h(), p.kernel(), p.stride, p.pad, p.dilation);
  const int ow = deconv_output_size(input.w(), p.kernel(), p.stride, p.pad, p.dilation);
  if (oh < 1 || ow < 1) {
    throw ShapeError("deconv2d: padding leaves no output for input " + input.shape().str());
  }
  return Geometry{p.weights.c(), oh,        ow,         p.kernel(), p.stride,
                  p.pad,         p.dilation, input.h(), input.w()};
}

}  // namespace

BnParams BnParams::identity(int channels) {
  BnParams p;
  p.scale = Tensor::vector(channels, 1.0f);
  p.shift = Tensor::vector(channels, 0.0f);
  p.running_mean = Tensor::vector(channels, 0.0f);
  p.running_var = Tensor::vector(channels, 1.0f);
  return p;
}

int conv_output_size(int in, int kernel, int stride, int pad, int dilation) {
  const int extent = dilation * (kernel - 1) + 1;
  return (in + 2 * pad - extent) / stride + 1;
}

int deconv_output_size(int in, int kernel, int stride, int pad, int dilation) {
  return (in - 1) * stride - 2 * pad + dilation * (kernel - 1) + 1;
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
  const Geometry g = conv_geometry(input, p);
  const int out_c = p.weights.n();
  const int rows = g.rows();
  const int cols = g.cols();
  Tensor out(Shape{input.n(), out_c, g.out_h, g.out_w});
  std::vector<float> col(static_cast<std::size_t>(rows) * cols);
  std::vector<double> acc(static_cast<std::size_t>(out_c) * cols);
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  for (int n = 0; n < input.n(); ++n) {
    im2col(input.ptr() + n * in_stride, g, col.data());
    matmul_rows(p.weights.ptr(), col.data(), out_c, rows, cols, acc.data());
    float* dst = out.ptr() + static_cast<std::size_t>(n) * out_c * cols;
    for (int o = 0; o < out_c; ++o) {
      const double b = p.has_bias() ? p.bias[o] : 0.0;
      for (int j = 0; j < cols; ++j) {
        dst[o * cols + j] = static_cast<float>(acc[static_cast<std::size_t>(o) * cols + j] + b);
      }
    }
  }
  out.check_finite("conv2d output");
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out,
                          bool want_input, bool want_params) {
  const Geometry g = conv_geometry(input, p);
  const int out_c = p.weights.n();
  if (grad_out.shape() != Shape{input.n(), out_c, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward: gradient shape " + grad_out.shape().str());
  }
  const int rows = g.rows();
  const int cols = g.cols();
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_stride = static_cast<std::size_t>(out_c) * cols;

  ConvGrads grads;
  std::vector<double> dw;
  std::vector<double> db;
  if (want_params) {
    dw.assign(static_cast<std::size_t>(out_c) * rows, 0.0);
    if (p.has_bias()) db.assign(out_c, 0.0);
  }
  std::vector<float> col(static_cast<std::size_t>(rows) * cols);
  std::vector<double> dcol;
  std::vector<double> dx;
  if (want_input) {
    grads.input = Tensor(input.shape());
    dcol.resize(static_cast<std::size_t>(rows) * cols);
    dx.resize(in_stride);
  }
  for (int n = 0; n < input.n(); ++n) {
    const float* dy = grad_out.ptr() + n * out_stride;
    if (want_params) {
      im2col(input.ptr() + n * in_stride, g, col.data());
      accumulate_outer(dy, col.data(), out_c, rows, cols, dw.data());
      for (int o = 0; o < static_cast<int>(db.size()); ++o) {
        for (int j = 0; j < cols; ++j) db[o] += dy[o * cols + j];
      }
    }
    if (want_input) {
      matmul_transposed_lhs(p.weights.ptr(), dy, out_c, rows, cols, dcol.data());
      std::fill(dx.begin(), dx.end(), 0.0);
      col2im(dcol.data(), g, dx.data());
      float* dst = grads.input.ptr() + n * in_stride;
      for (std::size_t i = 0; i < in_stride; ++i) dst[i] = static_cast<float>(dx[i]);
    }
  }
  if (want_params) {
    grads.weights = to_tensor(p.weights.shape(), dw);
    if (p.has_bias()) grads.bias = to_tensor(p.bias.shape(), db);
  }
  return grads;
}

Tensor deconv2d(const Tensor& input, const ConvParams& p) {
  const Geometry g = deconv_geometry(input, p);
  const int in_c = input.c();
  const int rows = g.rows();
  const int cols = g.cols();  // input spatial positions
  Tensor out(Shape{input.n(), g.channels, g.height, g.width});
  std::vector<double> col(static_cast<std::size_t>(rows) * cols);
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  std::vector<double> image(static_cast<std::size_t>(g.channels) * plane);
  for (int n = 0; n < input.n(); ++n) {
    const float* x = input.ptr() + static_cast<std::size_t>(n) * in_c * cols;
    matmul_transposed_lhs(p.weights.ptr(), x, in_c, rows, cols, col.data());
    std::fill(image.begin(), image.end(), 0.0);
    col2im(col.data(), g, image.data());
    float* dst = out.ptr() + static_cast<std::size_t>(n) * g.channels * plane;
    for (int c = 0; c < g.channels; ++c) {
      const double b = p.has_bias() ? p.bias[c] : 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        dst[c * plane + i] = static_cast<float>(image[c * plane + i] + b);
      }
    }
  }
  out.check_finite("deconv2d output");
  return out;
}

ConvGrads deconv2d_backward(const Tensor& input, const ConvParams& p, const Tensor& grad_out,
                            bool want_input, bool want_params) {
  const Geometry g = deconv_geometry(input, p);
  if (grad_out.shape() != Shape{input.n(), g.channels, g.height, g.width}) {
    throw ShapeError("deconv2d_backward: gradient shape " + grad_out.shape().str());
  }
  const int in_c = input.c();
  const int rows = g.rows();
  const int cols = g.cols();
  const std::size_t out_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t in_stride = static_cast<std::size_t>(in_c) * cols;

  ConvGrads grads;
  std::vector<double> dw;
  std::vector<double> db;
  if (want_params) {
    dw.assign(static_cast<std::size_t>(in_c) * rows, 0.0);
    if (p.has_bias()) db.assign(g.channels, 0.0);
  }
  std::vector<double> dx;
  if (want_input) {
    grads.input = Tensor(input.shape());
    dx.resize(in_stride);
  }
  std::vector<float> col(static_cast<std::size_t>(rows) * cols);
  const std::size_t plane = static_cast<std::size_t>(g.height) * g.width;
  for (int n = 0; n < input.n(); ++n) {
    const float* dy = grad_out.ptr() + n * out_stride;
    im2col(dy, g, col.data());
    if (want_params) {
      accumulate_outer(input.ptr() + n * in_stride, col.data(), in_c, rows, cols, dw.data());
      for (int c = 0; c < static_cast<int>(db.size()); ++c) {
        for (std::size_t i = 0; i < plane; ++i) db[c] += dy[c * plane + i];
      }
    }
    if (want_input) {
      matmul_rows(p.weights.ptr(), col.data(), in_c, rows, cols, dx.data());
      float* dst = grads.input.ptr() + n * in_stride;
      for (std::size_t i = 0; i < in_stride; ++i) dst[i] = static_cast<float>(dx[i]);
    }
  }
  if (want_params) {
    grads.weights = to_tensor(p.weights.shape(), dw);
    if (p.has_bias()) grads.bias = to_tensor(p.bias.shape(), db);
  }
  return grads;
}

namespace {

void check_bn(const Tensor& input, const BnParams& p) {
  const int c = p.channels();
  if (input.c() != c || static_cast<int>(p.shift.size()) != c ||
      static_cast<int>(p.running_mean.size()) != c || static_cast<int>(p.running_var.size()) != c) {
    throw ShapeError("batchnorm: input has " + std::to_string(input.c()) +
                     " channels, parameters have " + std::to_string(c));
  }
  if (!(p.epsilon > 0.0f)) throw SpecError("batchnorm: epsilon must be positive");
}

}  // namespace

Tensor batchnorm(const Tensor& input, BnParams& p, BnMode mode, BnCache* cache) {
  check_bn(input, p);
  const int channels = input.c();
  const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
  const double count = static_cast<double>(input.n()) * plane;
  std::vector<double> mean(channels);
  std::vector<double> inv_std(channels);
  if (mode == BnMode::kTrain) {
    if (count < 1) throw ShapeError("batchnorm: empty batch");
    for (int c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (int n = 0; n < input.n(); ++n) {
        const float* x = input.ptr() + input.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) sum += x[i];
      }
      const double mu = sum / count;
      double sq = 0.0;
      for (int n = 0; n < input.n(); ++n) {
        const float* x = input.ptr() + input.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) sq += (x[i] - mu) * (x[i] - mu);
      }
      const double var = sq / count;
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + p.epsilon);
      const double m = p.momentum;
      p.running_mean[c] = static_cast<float>((1.0 - m) * p.running_mean[c] + m * mu);
      p.running_var[c] = static_cast<float>((1.0 - m) * p.running_var[c] + m * var);
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      if (p.running_var[c] < 0.0f) throw NumericError("batchnorm: negative running variance");
      mean[c] = p.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(p.running_var[c]) + p.epsilon);
    }
  }
  Tensor out(input.shape());
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < channels; ++c) {
      const float* x = input.ptr() + input.offset(n, c, 0, 0);
      float* y = out.ptr() + out.offset(n, c, 0, 0);
      const double a = p.scale[c] * inv_std[c];
      const double b = p.shift[c];
      for (std::size_t i = 0; i < plane; ++i) {
        y[i] = static_cast<float>(a * (x[i] - mean[c]) + b);
      }
    }
  }
  out.check_finite("batchnorm output");
  if (cache != nullptr) {
    cache->mode = mode;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& input, const BnParams& p) {
  BnParams copy = p;
  return batchnorm(input, copy, BnMode::kInfer);
}

BnGrads batchnorm_backward(const Tensor& input, const BnParams& p, const BnCache& cache,
                           const Tensor& grad_out) {
  check_bn(input, p);
  if (grad_out.shape() != input.shape()) {
    throw ShapeError("batchnorm_backward: gradient shape " + grad_out.shape().str());
  }
  const int channels = input.c();
  const std::size_t plane = static_cast<std::size_t>(input.h()) * input.w();
  const double count = static_cast<double>(input.n()) * plane;
  BnGrads grads{Tensor(input.shape()), Tensor::vector(channels), Tensor::vector(channels)};
  for (int c = 0; c < channels; ++c) {
    const double mu = cache.mean[c];
    const double is = cache.inv_std[c];
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int n = 0; n < input.n(); ++n) {
      const float* x = input.ptr() + input.offset(n, c, 0, 0);
      const float* dy = grad_out.ptr() + grad_out.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mu) * is;
      }
    }
    grads.scale[c] = static_cast<float>(sum_dy_xhat);
    grads.shift[c] = static_cast<float>(sum_dy);
    const double gamma = p.scale[c];
    for (int n = 0; n < input.n(); ++n) {
      const float* x = input.ptr() + input.offset(n, c, 0, 0);
      const float* dy = grad_out.ptr() + grad_out.offset(n, c, 0, 0);
      float* dx = grads.input.ptr() + grads.input.offset(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.mode == BnMode::kTrain) {
          const double xhat = (x[i] - mu) * is;
          dx[i] = static_cast<float>(gamma * is / count *
                                     (count * dy[i] - sum_dy - xhat * sum_dy_xhat));
        } else {
          dx[i] = static_cast<float>(gamma * is * dy[i]);
        }
      }
    }
  }
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  const auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (grad_out.shape() != input.shape()) {
    throw ShapeError("relu_backward: gradient shape " + grad_out.shape().str());
  }
  Tensor dx(input.shape());
  const auto x = input.data();
  const auto dy = grad_out.data();
  auto out = dx.data();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? dy[i] : 0.0f;
  return dx;
}

PoolResult maxpool2d(const Tensor& input, int kernel, int stride) {
  if (kernel < 1 || stride < 1 || kernel > input.h() || kernel > input.w()) {
    throw ShapeError("maxpool2d: window " + std::to_string(kernel) + " invalid for input " +
                     input.shape().str());
  }
  const int oh = (input.h() - kernel) / stride + 1;
  const int ow = (input.w() - kernel) / stride + 1;
  PoolResult r{Tensor(Shape{input.n(), input.c(), oh, ow}), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x, ++o) {
          std::size_t best = input.offset(n, c, y * stride, x * stride);
          for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
              const std::size_t idx = input.offset(n, c, y * stride + ky, x * stride + kx);
              if (input[idx] > input[best]) best = idx;
            }
          }
          r.output[o] = input[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Shape& input_shape, const PoolResult& forward,
                          const Tensor& grad_out) {
  if (grad_out.shape() != forward.output.shape()) {
    throw ShapeError("maxpool2d_backward: gradient shape " + grad_out.shape().str());
  }
  Tensor dx(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[forward.argmax[o]] += grad_out[o];
  return dx;
}

Tensor eltwise(const Tensor& a, const Tensor& b, Combine mode) {
  if (a.shape() != b.shape()) {
    throw ShapeError("eltwise: shapes " + a.shape().str() + " and " + b.shape().str() +
                     " differ");
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = mode == Combine::kSum ? a[i] + b[i] : a[i] * b[i];
  }
  out.check_finite("eltwise output");
  return out;
}

EltwiseGrads eltwise_backward(const Tensor& a, const Tensor& b, Combine mode,
                              const Tensor& grad_out) {
  if (a.shape() != b.shape() || grad_out.shape() != a.shape()) {
    throw ShapeError("eltwise_backward: shape mismatch");
  }
  if (mode == Combine::kSum) return {grad_out, grad_out};
  EltwiseGrads g{Tensor(a.shape()), Tensor(a.shape())};
  for (std::size_t i = 0; i < a.size(); ++i) {
    g.a[i] = grad_out[i] * b[i];
    g.b[i] = grad_out[i] * a[i];
  }
  return g;
}

}  // namespace dssd
