#include <gtest/gtest.h>

#include "freqclick/spectral.h"
#include "oracles.h"

using namespace freqclick;

namespace {

const AxisPair kPairs[3] = {kAxesHW, kAxesHC, kAxesWC};

int axis_pos(Axis a) { return a == Axis::kH ? 0 : a == Axis::kW ? 1 : 2; }

Tensor<double> random_hwc(Rng& rng, std::size_t max_extent = 8) {
  const std::size_t h = 1 + rng.below(max_extent), w = 1 + rng.below(max_extent), c = 1 + rng.below(max_extent);
  return oracle::random_tensor(Shape{h, w, c}, rng);
}

}  // namespace

TEST(Spectral, Dft2MatchesDoubleSumOracle) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(seed);
    const auto x = random_hwc(rng, 7);
    for (auto p : kPairs) {
      const auto fast = dft2(x, p);
      const auto ref = oracle::naive_dft2(to_complex(x), axis_pos(p.first), axis_pos(p.second), false);
      EXPECT_LT(max_abs_diff(fast, ref), 1e-10) << axis_pair_name(p) << " seed " << seed;
    }
  }
}

TEST(Spectral, Idft2MatchesOracleOnComplexInput) {
  Rng rng(42);
  const auto re = random_hwc(rng, 6);
  const auto im = oracle::random_tensor(re.shape(), rng);
  Tensor<std::complex<double>> z(re.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] = {re[i], im[i]};
  for (auto p : kPairs) {
    const auto ref = oracle::naive_dft2(z, axis_pos(p.first), axis_pos(p.second), true);
    EXPECT_LT(max_abs_diff(idft2(z, p), ref), 1e-12);
  }
}

TEST(Spectral, RoundTripAndBatchAxis) {
  Rng rng(7);
  const auto x = oracle::random_tensor(Shape{2, 5, 6, 3}, rng);
  for (auto p : kPairs) {
    EXPECT_LT(max_abs_diff(real_part(idft2(dft2(x, p), p)), x), 1e-12);
    // Each batch item transforms independently.
    const auto f = dft2(x, p);
    Tensor<double> first(Shape{5, 6, 3}, std::vector<double>(x.vec().begin(), x.vec().begin() + 90));
    const auto f0 = dft2(first, p);
    for (std::size_t i = 0; i < 90; ++i) EXPECT_LT(std::abs(f[i] - f0[i]), 1e-12);
  }
}

TEST(Spectral, ParsevalAndLinearity) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto x = random_hwc(rng);
    const auto y = oracle::random_tensor(x.shape(), rng);
    const double a = rng.normal(), b = rng.normal();
    for (auto p : kPairs) {
      const auto fx = dft2(x, p);
      const double n = static_cast<double>(x.shape()[axis_pos(p.first)] * x.shape()[axis_pos(p.second)]);
      double ex = 0, ef = 0;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        ex += x[i] * x[i];
        ef += std::norm(fx[i]);
      }
      EXPECT_NEAR(ef / n, ex, 1e-8 * ex);
      Tensor<double> mix(x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) mix[i] = a * x[i] + b * y[i];
      const auto fm = dft2(mix, p), fy = dft2(y, p);
      double scale = 0, err = 0;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        scale = std::max(scale, std::abs(fm[i]));
        err = std::max(err, std::abs(fm[i] - (a * fx[i] + b * fy[i])));
      }
      EXPECT_LE(err, 1e-8 * scale);
    }
  }
}

TEST(Spectral, DcBinIsTheSum) {
  Rng rng(9);
  const auto x = oracle::random_tensor(Shape{4, 5, 2}, rng);
  const auto f = dft2(x, kAxesHW);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0;
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 5; ++w) s += x.at({h, w, c});
    EXPECT_NEAR(f.at({0, 0, c}).real(), s, 1e-12);
    EXPECT_NEAR(f.at({0, 0, c}).imag(), 0.0, 1e-12);
  }
}

TEST(Spectral, IdentityFilterIsIdentityAndShapesBroadcast) {
  Rng rng(11);
  const auto x = oracle::random_tensor(Shape{6, 4, 5}, rng);
  for (auto p : kPairs) {
    const auto f = SpectralFilter<double>::identity(x.shape(), p);
    EXPECT_EQ(f.weights.shape(), filter_shape(x.shape(), p));
    EXPECT_LT(max_abs_diff(spectral_branch(x, p, f.weights), x), 1e-12);
  }
  EXPECT_EQ(filter_shape(Shape{6, 4, 5}, kAxesHC), (Shape{6, 1, 5}));
  EXPECT_EQ(filter_shape(Shape{2, 6, 4, 5}, kAxesWC), (Shape{1, 1, 4, 5}));
}

TEST(Spectral, FilterScalesSingleFrequency) {
  // A pure cosine along W at frequency 1 passes scaled by the real filter weight at bins 1 and W-1.
  const std::size_t h = 4, w = 8;
  Tensor<double> x(Shape{h, w, 1});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) x.at({r, c, 0}) = std::cos(2 * std::numbers::pi * c / w);
  Tensor<std::complex<double>> filt(filter_shape(x.shape(), kAxesHW));
  filt.at({0, 1, 0}) = 3.0;
  filt.at({0, w - 1, 0}) = 3.0;
  const auto y = spectral_branch(x, kAxesHW, filt);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], 3.0 * x[i], 1e-12);
}

TEST(Spectral, RejectsMissingAxes) {
  EXPECT_THROW(validate_axes(Shape({4, 4}), kAxesHW), ShapeError);
  EXPECT_THROW(validate_axes(Shape{4, 4, 4}, AxisPair{Axis::kH, Axis::kH}), ShapeError);
}

TEST(Spectral, InterleavedRoundTrip) {
  Rng rng(2);
  const auto x = oracle::random_tensor(Shape{3, 4, 2}, rng);
  const auto z = from_interleaved(x);
  EXPECT_EQ(z.shape().rank(), 2u);
  EXPECT_EQ(z[1], std::complex<double>(x[2], x[3]));
  EXPECT_EQ(to_interleaved(z).vec(), x.vec());
}
