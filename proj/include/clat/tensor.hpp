#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clat/rng.hpp"

namespace clat {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 tensor. The single numeric carrier for inputs,
/// activations, gradients and parameters. Invariant: data().size() equals
/// the product of the shape dimensions.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);          // zero-filled
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float value);
  /// Uniform entries in [lo, hi), drawn in row-major order.
  static Tensor uniform(Shape shape, float lo, float hi, Rng& rng);

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Reinterprets the flat data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  /// Bitwise equality of shape and payload.
  bool bit_equal(const Tensor& other) const;

private:
  Shape shape_;
  std::vector<float> data_;
};

// Elementwise helpers used by the attack loops. All operate in place on
// `t` unless they return a new tensor.
void clamp_(Tensor& t, float lo, float hi);
Tensor sign(const Tensor& t);                       // sign(0) == 0
void axpy_(Tensor& y, float a, const Tensor& x);    // y += a*x
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);

/// Euclidean norm of all elements, accumulated in double.
double l2_norm_value(const Tensor& t);
/// Per-sample Euclidean norms of a [N, ...] tensor.
std::vector<double> batch_l2_norms(const Tensor& t);

}  // namespace clat
