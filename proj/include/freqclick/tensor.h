#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "freqclick/errors.h"

namespace freqclick {

// Semantic tag of a tensor axis.
enum class Axis : std::uint8_t { kNone, kB, kH, kW, kC };

const char* axis_name(Axis a);

// Ordered list of positive extents with optional semantic tags.
//
// Rank-3 shapes default to (H, W, C) and rank-4 shapes to (B, H, W, C);
// other ranks are untagged unless tags are given explicitly.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);
  Shape(std::vector<std::size_t> dims, std::vector<Axis> tags);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  const std::vector<Axis>& tags() const { return tags_; }
  std::size_t numel() const;

  // Position of the axis carrying `tag`, or throws ShapeError.
  std::size_t axis_index(Axis tag) const;
  bool has_axis(Axis tag) const;

  std::vector<std::size_t> strides() const;
  std::string str() const;

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

 private:
  void validate() const;

  std::vector<std::size_t> dims_;
  std::vector<Axis> tags_;
};

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};

enum class DType : std::uint8_t { kReal32, kReal64, kComplex64, kComplex128 };

const char* dtype_name(DType d);
DType parse_dtype(const std::string& s);
std::size_t dtype_size(DType d);

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::kReal32;
  else if constexpr (std::is_same_v<T, double>) return DType::kReal64;
  else if constexpr (std::is_same_v<T, std::complex<float>>) return DType::kComplex64;
  else {
    static_assert(std::is_same_v<T, std::complex<double>>, "unsupported tensor scalar");
    return DType::kComplex128;
  }
}

// Dense row-major array. Plain value type: copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T{1}); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t rank() const { return shape_.rank(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; index count must equal rank.
  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  // Same data under a new shape with equal element count.
  Tensor reshaped(Shape s) const;

  bool all_finite() const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> ones_like(const Tensor<T>& x) {
  return Tensor<T>::ones(x.shape());
}

enum class BinaryOp : std::uint8_t { kAdd, kSub, kMul, kDiv, kMax, kMin };
enum class UnaryOp : std::uint8_t { kNeg, kExp, kLog, kRelu, kSquare, kSqrt, kAbs };

// Shape of the broadcast of `a` and `b`. Ranks must match; each axis pair
// must be equal or contain a 1.
Shape broadcast_shape(const Shape& a, const Shape& b);

// Materialize `x` expanded to `target` (which must be a broadcast of x.shape()).
template <typename T>
Tensor<T> expand_to(const Tensor<T>& x, const Shape& target);

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kMul, a, b);
}

// Reduce a broadcast result back onto `target` by summing expanded axes.
// Summation runs in ascending row-major order of the source.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& x, const Shape& target);

// Sum of all elements in ascending index order.
template <typename T>
T sum(const Tensor<T>& x);

// log-softmax / softmax over the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x);
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

// y = x . W + b over the last axis of x.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> real_part(const Tensor<std::complex<T>>& z);
template <typename T>
Tensor<T> imag_part(const Tensor<std::complex<T>>& z);
template <typename T>
Tensor<std::complex<T>> to_complex(const Tensor<T>& x);

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// Cast between real precisions.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = static_cast<To>(x[i]);
  return Tensor<To>(x.shape(), std::move(out));
}

}  // namespace freqclick
