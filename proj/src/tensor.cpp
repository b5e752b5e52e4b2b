#include "clat/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "clat/error.hpp"

namespace clat {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (const int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (const int d : shape_) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape_));
  }
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

Tensor Tensor::uniform(Shape shape, float lo, float hi, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (const float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

void clamp_(Tensor& t, float lo, float hi) {
  float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (p[i] < lo) p[i] = lo;
    if (p[i] > hi) p[i] = hi;
  }
}

Tensor sign(const Tensor& t) {
  Tensor out(t.shape());
  const float* p = t.data();
  float* q = out.data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    q[i] = p[i] > 0.0f ? 1.0f : (p[i] < 0.0f ? -1.0f : 0.0f);
  }
  return out;
}

void axpy_(Tensor& y, float a, const Tensor& x) {
  if (!y.same_shape(x)) {
    throw ShapeError("axpy shapes differ: " + shape_str(y.shape()) + " vs " + shape_str(x.shape()));
  }
  float* yp = y.data();
  const float* xp = x.data();
  for (int64_t i = 0; i < y.numel(); ++i) yp[i] += a * xp[i];
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("add shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = a;
  axpy_(out, 1.0f, b);
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("sub shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = a;
  axpy_(out, -1.0f, b);
  return out;
}

double l2_norm_value(const Tensor& t) {
  double acc = 0.0;
  const float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) acc += static_cast<double>(p[i]) * p[i];
  return std::sqrt(acc);
}

std::vector<double> batch_l2_norms(const Tensor& t) {
  if (t.rank() < 1) throw ShapeError("batch norms need a batched tensor");
  const int n = t.dim(0);
  const int64_t per = t.numel() / n;
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  const float* p = t.data();
  for (int s = 0; s < n; ++s) {
    double acc = 0.0;
    const float* row = p + static_cast<int64_t>(s) * per;
    for (int64_t i = 0; i < per; ++i) acc += static_cast<double>(row[i]) * row[i];
    out[static_cast<size_t>(s)] = std::sqrt(acc);
  }
  return out;
}

}  // namespace clat
