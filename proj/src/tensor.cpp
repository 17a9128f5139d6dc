#include "freqclick/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "freqclick/rng.h"

namespace freqclick {

const char* axis_name(Axis a) {
  switch (a) {
    case Axis::kB: return "B";
    case Axis::kH: return "H";
    case Axis::kW: return "W";
    case Axis::kC: return "C";
    case Axis::kNone: break;
  }
  return "-";
}

namespace {

std::vector<Axis> default_tags(std::size_t rank) {
  if (rank == 3) return {Axis::kH, Axis::kW, Axis::kC};
  if (rank == 4) return {Axis::kB, Axis::kH, Axis::kW, Axis::kC};
  return std::vector<Axis>(rank, Axis::kNone);
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), tags_(default_tags(dims_.size())) {
  validate();
}

Shape::Shape(std::vector<std::size_t> dims, std::vector<Axis> tags)
    : dims_(std::move(dims)), tags_(std::move(tags)) {
  if (tags_.size() != dims_.size()) throw ShapeError("axis tag count does not match rank");
  validate();
}

void Shape::validate() const {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor extents must be >= 1, got " + str());
  }
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (tags_[i] == Axis::kNone) continue;
    for (std::size_t j = i + 1; j < tags_.size(); ++j) {
      if (tags_[i] == tags_[j]) throw ShapeError("duplicate axis tag in shape " + str());
    }
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::size_t Shape::axis_index(Axis tag) const {
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (tags_[i] == tag) return i;
  }
  throw ShapeError(std::string("axis ") + axis_name(tag) + " not present in shape " + str());
}

bool Shape::has_axis(Axis tag) const {
  return std::find(tags_.begin(), tags_.end(), tag) != tags_.end();
}

std::vector<std::size_t> Shape::strides() const {
  std::vector<std::size_t> s(dims_.size(), 1);
  for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
  return s;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kReal32: return "real-32";
    case DType::kReal64: return "real-64";
    case DType::kComplex64: return "complex-64";
    case DType::kComplex128: return "complex-128";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  if (s == "real-32") return DType::kReal32;
  if (s == "real-64") return DType::kReal64;
  if (s == "complex-64") return DType::kComplex64;
  if (s == "complex-128") return DType::kComplex128;
  throw FormatError("unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kReal32: return 4;
    case DType::kReal64: return 8;
    case DType::kComplex64: return 8;
    case DType::kComplex128: return 16;
  }
  return 0;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape s) const {
  if (s.numel() != numel()) throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
  return Tensor(std::move(s), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const auto& v : data_) {
    if constexpr (is_complex<T>::value) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    } else {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template <typename T>
std::size_t Tensor<T>::offset(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.rank()) throw ShapeError("index rank mismatch for shape " + shape_.str());
  std::size_t off = 0;
  std::size_t i = 0;
  for (auto v : idx) {
    if (v >= shape_[i]) throw ShapeError("index out of range for shape " + shape_.str());
    off = off * shape_[i] + v;
    ++i;
  }
  return off;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.rank() != b.rank()) throw ShapeError("rank mismatch: " + a.str() + " vs " + b.str());
  std::vector<std::size_t> out(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a[i] == b[i] || b[i] == 1) out[i] = a[i];
    else if (a[i] == 1) out[i] = b[i];
    else throw ShapeError("shapes not broadcast-compatible: " + a.str() + " vs " + b.str());
  }
  return Shape(std::move(out), a.tags());
}

namespace {

// Offset into a (possibly broadcast) operand for each row-major output index.
std::vector<std::size_t> broadcast_offsets(const Shape& src, const Shape& out) {
  const auto rank = out.rank();
  const auto src_strides = src.strides();
  std::vector<std::size_t> eff(rank);
  for (std::size_t i = 0; i < rank; ++i) eff[i] = src[i] == 1 ? 0 : src_strides[i];
  std::vector<std::size_t> offs(out.numel());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t cur = 0;
  for (std::size_t n = 0; n < offs.size(); ++n) {
    offs[n] = cur;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      cur += eff[ax];
      if (idx[ax] < out[ax]) break;
      cur -= eff[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offs;
}

template <typename T>
T apply_binary(BinaryOp op, T x, T y) {
  switch (op) {
    case BinaryOp::kAdd: return x + y;
    case BinaryOp::kSub: return x - y;
    case BinaryOp::kMul: return x * y;
    case BinaryOp::kDiv: return x / y;
    case BinaryOp::kMax:
    case BinaryOp::kMin:
      if constexpr (is_complex<T>::value) {
        throw ContractError("max/min undefined for complex operands");
      } else {
        return op == BinaryOp::kMax ? std::max(x, y) : std::min(x, y);
      }
  }
  return x;
}

template <typename T>
T apply_unary(UnaryOp op, T x) {
  using std::abs;
  using std::exp;
  using std::log;
  using std::sqrt;
  switch (op) {
    case UnaryOp::kNeg: return -x;
    case UnaryOp::kExp: return exp(x);
    case UnaryOp::kLog: return log(x);
    case UnaryOp::kSquare: return x * x;
    case UnaryOp::kSqrt: return sqrt(x);
    case UnaryOp::kAbs: return T(abs(x));
    case UnaryOp::kRelu:
      if constexpr (is_complex<T>::value) {
        throw ContractError("relu undefined for complex operands");
      } else {
        return x > T(0) ? x : T(0);
      }
  }
  return x;
}

}  // namespace

template <typename T>
Tensor<T> expand_to(const Tensor<T>& x, const Shape& target) {
  if (broadcast_shape(target, x.shape()) != target) {
    throw ShapeError("cannot expand " + x.shape().str() + " to " + target.str());
  }
  const auto offs = broadcast_offsets(x.shape(), target);
  std::vector<T> out(target.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[offs[i]];
  return Tensor<T>(target, std::move(out));
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<T> out(out_shape.numel());
  if (a.shape() == out_shape && b.shape() == out_shape) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_binary(op, a[i], b[i]);
  } else {
    const auto oa = broadcast_offsets(a.shape(), out_shape);
    const auto ob = broadcast_offsets(b.shape(), out_shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_binary(op, a[oa[i]], b[ob[i]]);
  }
  return Tensor<T>(out_shape, std::move(out));
}

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_unary(op, a[i]);
  return Tensor<T>(a.shape(), std::move(out));
}

template <typename T>
Tensor<T> reduce_to(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  if (broadcast_shape(x.shape(), target) != x.shape()) {
    throw ShapeError("cannot reduce " + x.shape().str() + " onto " + target.str());
  }
  const auto offs = broadcast_offsets(target, x.shape());
  Tensor<T> out(target);
  for (std::size_t i = 0; i < x.numel(); ++i) out[offs[i]] += x[i];
  return out;
}

template <typename T>
T sum(const Tensor<T>& x) {
  T acc{};
  for (const auto& v : x.data()) acc += v;
  return acc;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const std::size_t k = x.shape()[x.rank() - 1];
  const std::size_t rows = x.numel() / k;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * k;
    T* o = out.data().data() + r * k;
    T m = in[0];
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, in[c]);
    T s = 0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(in[c] - m);
    const T lse = m + std::log(s);
    for (std::size_t c = 0; c < k; ++c) o[c] = in[c] - lse;
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  auto out = log_softmax(x);
  for (auto& v : out.vec()) v = std::exp(v);
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2) throw ShapeError("dense weight must be rank 2, got " + weight.shape().str());
  const std::size_t cin = weight.dim(0), cout = weight.dim(1);
  if (x.shape()[x.rank() - 1] != cin) {
    throw ShapeError("dense inner dims differ: " + x.shape().str() + " . " + weight.shape().str());
  }
  if (bias.numel() != cout) throw ShapeError("dense bias length must equal C_out");
  auto dims = x.shape().dims();
  dims.back() = cout;
  Tensor<T> y(Shape(dims, x.shape().tags()));
  const std::size_t rows = x.numel() / cin;
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y.data().data() + r * cout;
    for (std::size_t o = 0; o < cout; ++o) yr[o] = bias[o];
    const T* xr = x.data().data() + r * cin;
    for (std::size_t i = 0; i < cin; ++i) {
      const T xv = xr[i];
      const T* wr = weight.data().data() + i * cout;
      for (std::size_t o = 0; o < cout; ++o) yr[o] += xv * wr[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> real_part(const Tensor<std::complex<T>>& z) {
  std::vector<T> out(z.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i].real();
  return Tensor<T>(z.shape(), std::move(out));
}

template <typename T>
Tensor<T> imag_part(const Tensor<std::complex<T>>& z) {
  std::vector<T> out(z.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i].imag();
  return Tensor<T>(z.shape(), std::move(out));
}

template <typename T>
Tensor<std::complex<T>> to_complex(const Tensor<T>& x) {
  std::vector<std::complex<T>> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::complex<T>(x[i], T(0));
  return Tensor<std::complex<T>>(x.shape(), std::move(out));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

#define FREQCLICK_INSTANTIATE_ANY(T)                                            \
  template class Tensor<T>;                                                     \
  template Tensor<T> expand_to(const Tensor<T>&, const Shape&);                 \
  template Tensor<T> elementwise(BinaryOp, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> elementwise(UnaryOp, const Tensor<T>&);                    \
  template Tensor<T> reduce_to(const Tensor<T>&, const Shape&);                 \
  template T sum(const Tensor<T>&);                                             \
  template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);

#define FREQCLICK_INSTANTIATE_REAL(T)                                                    \
  template Tensor<T> log_softmax(const Tensor<T>&);                                      \
  template Tensor<T> softmax(const Tensor<T>&);                                          \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> real_part(const Tensor<std::complex<T>>&);                          \
  template Tensor<T> imag_part(const Tensor<std::complex<T>>&);                          \
  template Tensor<std::complex<T>> to_complex(const Tensor<T>&);

FREQCLICK_INSTANTIATE_ANY(float)
FREQCLICK_INSTANTIATE_ANY(double)
FREQCLICK_INSTANTIATE_ANY(std::complex<float>)
FREQCLICK_INSTANTIATE_ANY(std::complex<double>)
FREQCLICK_INSTANTIATE_REAL(float)
FREQCLICK_INSTANTIATE_REAL(double)
template class Tensor<int>;
template class Tensor<std::uint8_t>;

}  // namespace freqclick
