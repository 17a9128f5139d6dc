#include "freqclick/spectral.h"

#include <cmath>
#include <numbers>

namespace freqclick {

std::string axis_pair_name(AxisPair p) {
  return std::string("(") + axis_name(p.first) + "," + axis_name(p.second) + ")";
}

void validate_axes(const Shape& s, AxisPair p) {
  const bool supported = p == kAxesHW || p == kAxesHC || p == kAxesWC;
  if (!supported) throw ShapeError("unsupported axis pair " + axis_pair_name(p));
  if (s.rank() != 3 && s.rank() != 4) throw ShapeError("spectral ops expect [H,W,C] or [B,H,W,C], got " + s.str());
  s.axis_index(p.first);
  s.axis_index(p.second);
}

namespace {

// In-place direct DFT of every line along `axis`. sign = -1 forward, +1 inverse.
template <typename T>
void dft_axis(std::vector<std::complex<T>>& data, const Shape& shape, std::size_t axis, int sign) {
  const std::size_t n = shape[axis];
  if (n == 1) return;
  const std::size_t inner = shape.strides()[axis];
  const std::size_t outer = shape.numel() / (n * inner);
  std::vector<std::complex<T>> tw(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    tw[k] = std::complex<T>(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
  }
  std::vector<std::complex<T>> line(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      for (std::size_t t = 0; t < n; ++t) line[t] = data[base + t * inner];
      for (std::size_t u = 0; u < n; ++u) {
        std::complex<T> acc(0, 0);
        std::size_t k = 0;
        for (std::size_t t = 0; t < n; ++t) {
          acc += line[t] * tw[k];
          k += u;
          if (k >= n) k -= n;
        }
        data[base + u * inner] = acc;
      }
    }
  }
}

template <typename T>
Tensor<std::complex<T>> transform(Tensor<std::complex<T>> z, AxisPair axes, int sign) {
  validate_axes(z.shape(), axes);
  const std::size_t a1 = z.shape().axis_index(axes.first);
  const std::size_t a2 = z.shape().axis_index(axes.second);
  dft_axis(z.vec(), z.shape(), a1, sign);
  dft_axis(z.vec(), z.shape(), a2, sign);
  if (sign > 0) {
    const T norm = T(1) / static_cast<T>(z.shape()[a1] * z.shape()[a2]);
    for (auto& v : z.vec()) v *= norm;
  }
  return z;
}

// Complex filter aligned to the rank of `x`.
template <typename T>
Tensor<std::complex<T>> align_filter(Tensor<std::complex<T>> f, const Shape& x) {
  if (f.rank() == x.rank()) return f;
  if (f.rank() > x.rank()) throw ShapeError("filter rank exceeds input rank");
  std::vector<std::size_t> dims(x.rank() - f.rank(), 1);
  for (auto d : f.shape().dims()) dims.push_back(d);
  return f.reshaped(Shape(dims, x.tags()));
}

}  // namespace

template <typename T>
Tensor<std::complex<T>> dft2(const Tensor<T>& x, AxisPair axes) {
  return transform(to_complex(x), axes, -1);
}

template <typename T>
Tensor<std::complex<T>> dft2(const Tensor<std::complex<T>>& x, AxisPair axes) {
  return transform(x, axes, -1);
}

template <typename T>
Tensor<std::complex<T>> idft2(const Tensor<std::complex<T>>& spectrum, AxisPair axes) {
  return transform(spectrum, axes, +1);
}

Shape filter_shape(const Shape& x, AxisPair axes) {
  validate_axes(x, axes);
  std::vector<std::size_t> dims(x.rank(), 1);
  dims[x.axis_index(axes.first)] = x[x.axis_index(axes.first)];
  dims[x.axis_index(axes.second)] = x[x.axis_index(axes.second)];
  return Shape(dims, x.tags());
}

template <typename T>
SpectralFilter<T> SpectralFilter<T>::identity(const Shape& x, AxisPair axes) {
  SpectralFilter f;
  f.axes = axes;
  f.weights = Tensor<std::complex<T>>(filter_shape(x, axes), std::complex<T>(1, 0));
  return f;
}

template <typename T>
Tensor<T> spectral_branch(const Tensor<T>& x, AxisPair axes, const Tensor<std::complex<T>>& filter) {
  auto spec = dft2(x, axes);
  const auto f = align_filter(filter, x.shape());
  if (broadcast_shape(spec.shape(), f.shape()) != spec.shape()) {
    throw ShapeError("filter " + filter.shape().str() + " does not broadcast onto spectrum " + spec.shape().str());
  }
  return real_part(idft2(mul(spec, f), axes));
}

template <typename T>
Tensor<std::complex<T>> from_interleaved(const Tensor<T>& x) {
  const auto& d = x.shape().dims();
  if (d.empty() || d.back() != 2) throw ShapeError("interleaved complex data needs a trailing axis of 2");
  std::vector<std::size_t> dims(d.begin(), d.end() - 1);
  if (dims.empty()) dims.push_back(1);
  std::vector<std::complex<T>> out(x.numel() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {x[2 * i], x[2 * i + 1]};
  return Tensor<std::complex<T>>(Shape(dims), std::move(out));
}

template <typename T>
Tensor<T> to_interleaved(const Tensor<std::complex<T>>& z) {
  auto dims = z.shape().dims();
  dims.push_back(2);
  std::vector<T> out(z.numel() * 2);
  for (std::size_t i = 0; i < z.numel(); ++i) {
    out[2 * i] = z[i].real();
    out[2 * i + 1] = z[i].imag();
  }
  return Tensor<T>(Shape(dims), std::move(out));
}

namespace ag {

template <typename T>
Var<T> spectral_branch(Var<T> x, AxisPair axes, Var<T> filter) {
  const Shape xs = x.shape();
  validate_axes(xs, axes);
  const auto f = align_filter(from_interleaved(filter.value()), xs);
  auto spec = std::make_shared<Tensor<std::complex<T>>>(dft2(x.value(), axes));
  if (broadcast_shape(spec->shape(), f.shape()) != spec->shape()) {
    throw ShapeError("filter " + f.shape().str() + " does not broadcast onto spectrum " + spec->shape().str());
  }
  auto out = real_part(idft2(mul(*spec, f), axes));
  const bool rg = x.tape->requires_grad(x) || x.tape->requires_grad(filter);
  return x.tape->push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>& g) {
    // y = Re(A x) with A = M^-1 diag(f) M and M, M^-1 symmetric:
    //   dx = Re(M (f * M^-1 g)),  df = sum over broadcast of conj(X * M^-1 g).
    const auto back = idft2(to_complex(g), axes);
    if (t.requires_grad(x)) {
      const auto dx = real_part(dft2(mul(back, f), axes));
      auto& dst = t.grad_ref(x.id);
      for (std::size_t i = 0; i < dx.numel(); ++i) dst[i] += dx[i];
    }
    if (t.requires_grad(filter)) {
      auto prod = mul(*spec, back);
      for (auto& v : prod.vec()) v = std::conj(v);
      const auto df = reduce_to(prod, f.shape());
      auto& dst = t.grad_ref(filter.id);
      for (std::size_t i = 0; i < df.numel(); ++i) {
        dst[2 * i] += df[i].real();
        dst[2 * i + 1] += df[i].imag();
      }
    }
  });
}

template Var<float> spectral_branch(Var<float>, AxisPair, Var<float>);
template Var<double> spectral_branch(Var<double>, AxisPair, Var<double>);

}  // namespace ag

#define FREQCLICK_SPECTRAL_INSTANTIATE(T)                                                                  \
  template Tensor<std::complex<T>> dft2(const Tensor<T>&, AxisPair);                                       \
  template Tensor<std::complex<T>> dft2(const Tensor<std::complex<T>>&, AxisPair);                         \
  template Tensor<std::complex<T>> idft2(const Tensor<std::complex<T>>&, AxisPair);                        \
  template struct SpectralFilter<T>;                                                                       \
  template Tensor<T> spectral_branch(const Tensor<T>&, AxisPair, const Tensor<std::complex<T>>&);          \
  template Tensor<std::complex<T>> from_interleaved(const Tensor<T>&);                                     \
  template Tensor<T> to_interleaved(const Tensor<std::complex<T>>&);

FREQCLICK_SPECTRAL_INSTANTIATE(float)
FREQCLICK_SPECTRAL_INSTANTIATE(double)

}  // namespace freqclick
