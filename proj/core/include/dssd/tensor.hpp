#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dssd {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NCHW float tensor with an optional gradient buffer of the same shape.
///
/// One-dimensional parameters (biases, batch-norm vectors) use shape (c,1,1,1).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor vector(int length, float fill = 0.0f) {
    return Tensor(Shape{length, 1, 1, 1}, fill);
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  float at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  bool has_grad() const { return !grad_.empty(); }
  /// Allocates a zeroed gradient buffer if none exists.
  std::span<float> grad();
  std::span<const float> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  void fill(float value);
  /// Throws NumericError naming `what` if any value is NaN or infinite.
  void check_finite(std::string_view what) const;

 private:
  Shape shape_;
  std::vector<float> data_;
  std::vector<float> grad_;
};

bool all_finite(std::span<const float> values);

}  // namespace dssd
