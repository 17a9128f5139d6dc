#pragma once

#include <complex>

#include "freqclick/autograd.h"
#include "freqclick/tensor.h"

namespace freqclick {

// Pair of axes a 2D transform runs over: one of (H,W), (H,C), (W,C).
struct AxisPair {
  Axis first;
  Axis second;

  bool operator==(const AxisPair&) const = default;
};

inline constexpr AxisPair kAxesHW{Axis::kH, Axis::kW};
inline constexpr AxisPair kAxesHC{Axis::kH, Axis::kC};
inline constexpr AxisPair kAxesWC{Axis::kW, Axis::kC};

std::string axis_pair_name(AxisPair p);

// Throws ShapeError unless `p` is a supported pair present in `s`.
void validate_axes(const Shape& s, AxisPair p);

// Unnormalized forward 2D DFT over `axes` of a rank-3 [H,W,C] or rank-4
// [B,H,W,C] tensor:
//   F(u,v) = sum_a sum_b x(a,b) exp(-j 2pi (u a / D1 + v b / D2)).
// Evaluated as two direct O(N^2) passes, one per axis, summing in ascending
// index order.
template <typename T>
Tensor<std::complex<T>> dft2(const Tensor<T>& x, AxisPair axes);
template <typename T>
Tensor<std::complex<T>> dft2(const Tensor<std::complex<T>>& x, AxisPair axes);

// Inverse of dft2, carrying the 1/(D1*D2) factor.
template <typename T>
Tensor<std::complex<T>> idft2(const Tensor<std::complex<T>>& spectrum, AxisPair axes);

// Shape of a per-bin filter for inputs shaped `x`: the transformed extents,
// and 1 on every other axis (so it broadcasts over them).
Shape filter_shape(const Shape& x, AxisPair axes);

// Learnable complex filter applied bin-wise to a spectrum.
template <typename T>
struct SpectralFilter {
  AxisPair axes;
  Tensor<std::complex<T>> weights;
  bool trainable = true;

  // All-ones filter (identity branch) sized for inputs of shape `x`.
  static SpectralFilter identity(const Shape& x, AxisPair axes);
};

// real(idft2(filter * dft2(x))). `filter` must broadcast onto the spectrum.
template <typename T>
Tensor<T> spectral_branch(const Tensor<T>& x, AxisPair axes, const Tensor<std::complex<T>>& filter);

// Interleaved-real view of complex data: [..., 2] <-> complex [...].
template <typename T>
Tensor<std::complex<T>> from_interleaved(const Tensor<T>& x);
template <typename T>
Tensor<T> to_interleaved(const Tensor<std::complex<T>>& z);

namespace ag {

// Differentiable spectral branch. `filter` holds interleaved (re, im) pairs,
// i.e. its shape is the complex filter shape with a trailing axis of 2. The
// complex shape may have lower rank than x; it is aligned to x's trailing axes.
template <typename T>
Var<T> spectral_branch(Var<T> x, AxisPair axes, Var<T> filter);

}  // namespace ag

}  // namespace freqclick
