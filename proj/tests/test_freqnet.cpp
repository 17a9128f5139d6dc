#include <gtest/gtest.h>

#include "freqclick/freqnet.h"
#include "freqclick/spectral.h"
#include "fixtures.h"
#include "gradcheck.h"

using namespace freqclick;

namespace {

// Straight-line FreqModule on one [H,W,C] item: zero-padded 3x3 depthwise
// conv on the first quarter, naive-DFT filtering on the others.
Tensor<double> reference_module(const Tensor<double>& x, const FreqModuleParams<double>& p,
                                const std::array<bool, 3>& branches) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2), q = c / 4;
  Tensor<double> out(x.shape());
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      for (std::size_t ch = 0; ch < q; ++ch) {
        double s = p.dw_bias->value[ch];
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long rr = static_cast<long>(r) + dy, cc = static_cast<long>(col) + dx;
            if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
            s += x.at({static_cast<std::size_t>(rr), static_cast<std::size_t>(cc), ch}) *
                 p.dw_weight->value.at({static_cast<std::size_t>(dy + 1), static_cast<std::size_t>(dx + 1), ch});
          }
        }
        out.at({r, col, ch}) = s;
      }
    }
  }
  const int ax[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (int b = 0; b < 3; ++b) {
    const std::size_t off = (b + 1) * q;
    Tensor<std::complex<double>> sub(Shape{h, w, q});
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        for (std::size_t ch = 0; ch < q; ++ch) sub.at({r, col, ch}) = x.at({r, col, off + ch});
    if (branches[b]) {
      auto spec = oracle::naive_dft2(sub, ax[b][0], ax[b][1], false);
      const auto& f = p.filters[b]->value;  // interleaved, broadcast over the untransformed axis
      const auto& fd = f.shape().dims();
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
          for (std::size_t ch = 0; ch < q; ++ch) {
            const std::size_t i0 = fd[0] == 1 ? 0 : r, i1 = fd[1] == 1 ? 0 : col, i2 = fd[2] == 1 ? 0 : ch;
            const std::size_t k = ((i0 * fd[1] + i1) * fd[2] + i2) * 2;
            spec.at({r, col, ch}) *= std::complex<double>(f[k], f[k + 1]);
          }
      sub = oracle::naive_dft2(spec, ax[b][0], ax[b][1], true);
    }
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        for (std::size_t ch = 0; ch < q; ++ch) out.at({r, col, off + ch}) = sub.at({r, col, ch}).real();
  }
  return out;
}

Tensor<double> run_module(const Tensor<double>& x, const FreqModuleParams<double>& p, const NetConfig& cfg) {
  Tape<double> t(false);
  return freq_module(t.constant(x), p, cfg).value();
}

using fixture::tiny_net;

}  // namespace

TEST(FreqModule, IdentityAtInit) {
  NetConfig cfg;
  cfg.identity_dw_init = true;
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(s);
    ParamSet<double> ps;
    auto p = make_freq_module(ps, "m", 6, 5, 8, cfg, rng);
    const auto x = oracle::random_tensor(Shape{2, 6, 5, 8}, rng);
    EXPECT_LT(max_abs_diff(run_module(x, p, cfg), x), 1e-9);
  }
}

TEST(FreqModule, ZeroInputGivesZeroOutput) {
  NetConfig cfg;
  Rng rng(1);
  ParamSet<double> ps;
  auto p = make_freq_module(ps, "m", 4, 4, 8, cfg, rng);
  oracle::randomize(ps, rng);
  std::fill(p.dw_bias->value.vec().begin(), p.dw_bias->value.vec().end(), 0.0);
  const Tensor<double> x(Shape{1, 4, 4, 8});
  const auto y = run_module(x, p, cfg);
  for (double v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(FreqModule, MatchesStraightLineReference) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    for (const std::array<bool, 3>& br : {std::array<bool, 3>{true, true, true}, std::array<bool, 3>{true, false, false}}) {
      NetConfig cfg;
      cfg.branches = br;
      Rng rng(s);
      ParamSet<double> ps;
      auto p = make_freq_module(ps, "m", 5, 6, 8, cfg, rng);
      oracle::randomize(ps, rng);
      const auto x = oracle::random_tensor(Shape{1, 5, 6, 8}, rng);
      const auto got = run_module(x, p, cfg);
      const auto ref = reference_module(Tensor<double>(Shape{5, 6, 8}, x.vec()), p, br);
      EXPECT_LT(max_abs_diff(Tensor<double>(Shape{5, 6, 8}, got.vec()), ref), 1e-9);
    }
  }
}

TEST(FreqModule, RejectsChannelsNotDivisibleByFour) {
  NetConfig cfg;
  Rng rng(0);
  ParamSet<double> ps;
  EXPECT_THROW(make_freq_module(ps, "m", 4, 4, 6, cfg, rng), ConfigError);
}

TEST(FreqBlock, PureResidualWithZeroScales) {
  NetConfig cfg;
  Rng rng(3);
  ParamSet<double> ps;
  auto p = make_freq_block(ps, "b", 4, 4, 8, cfg, rng);
  oracle::randomize(ps, rng);
  for (auto* z : {p.gn1_gamma, p.gn1_beta, p.gn2_gamma, p.gn2_beta, p.fc2_weight, p.fc2_bias, p.freq.dw_bias}) {
    std::fill(z->value.vec().begin(), z->value.vec().end(), 0.0);
  }
  const auto x = oracle::random_tensor(Shape{2, 4, 4, 8}, rng);
  Tape<double> t(false);
  EXPECT_LT(max_abs_diff(freq_block(t.constant(x), p, cfg).value(), x), 1e-12);
}

TEST(FreqBlock, ConstantInputNormalizesToShift) {
  Tape<double> t(false);
  Tensor<double> beta(Shape{8});
  for (std::size_t i = 0; i < 8; ++i) beta[i] = 0.1 * static_cast<double>(i);
  auto y = ag::group_norm(t.constant(Tensor<double>(Shape{1, 3, 3, 8}, 2.5)),
                          t.constant(Tensor<double>(Shape{8}, 1.7)), t.constant(beta), 4, 1e-5);
  for (std::size_t i = 0; i < y.value().numel(); ++i) EXPECT_NEAR(y.value()[i], beta[i % 8], 1e-12);
}

TEST(FreqBlock, ShapeMismatchThrows) {
  NetConfig cfg;
  Rng rng(0);
  ParamSet<double> ps;
  auto p = make_freq_block(ps, "b", 4, 4, 8, cfg, rng);
  Tape<double> t(false);
  EXPECT_THROW(freq_block(t.constant(Tensor<double>(Shape{1, 4, 4, 12})), p, cfg), ShapeError);
}

TEST(RefineHead, ZeroWeightsGiveConstantLogits) {
  NetConfig cfg;
  Rng rng(0);
  ParamSet<double> ps;
  auto p = make_refine_head(ps, "h", 4, cfg, rng);
  for (auto* q : ps.all()) {
    if (q->name.find("running_var") == std::string::npos) std::fill(q->value.vec().begin(), q->value.vec().end(), 0.0);
  }
  Tape<double> t(false);
  auto out = refine_head(t.constant(oracle::random_tensor(Shape{1, 4, 4, 4}, rng)), p, 16, 16, false);
  EXPECT_EQ(out.shape(), (Shape{1, 16, 16, 2}));
  for (double v : out.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(SegModel, SoftmaxContractAndShape) {
  const NetConfig cfg = tiny_net();
  SegModel<double> m(cfg, 5);
  Rng rng(1);
  Tensor<double> x(Shape{2, 16, 16, 4});
  for (auto& v : x.vec()) v = rng.uniform();
  const auto p = m.predict(x);
  EXPECT_EQ(p.shape(), (Shape{2, 16, 16, 2}));
  for (std::size_t i = 0; i < p.numel(); i += 2) {
    EXPECT_GE(p[i], 0.0);
    EXPECT_LE(p[i], 1.0);
    EXPECT_NEAR(p[i] + p[i + 1], 1.0, 1e-6);
  }
}

TEST(SegModel, DeterministicForSeedAndInput) {
  const NetConfig cfg = tiny_net();
  SegModel<float> a(cfg, 9), b(cfg, 9);
  Tensor<float> x(Shape{1, 16, 16, 4});
  Rng rng(2);
  for (auto& v : x.vec()) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(a.predict(x).vec(), b.predict(x).vec());
}

TEST(SegModel, ZeroWeightsGiveUniformProbabilities) {
  SegModel<float> m(tiny_net(), 1);
  m.zero_weights();
  Tensor<float> x(Shape{1, 16, 16, 4}, 0.7f);
  const auto p = m.predict(x);
  for (float v : p.vec()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(SegModel, InputChecks) {
  SegModel<float> m(tiny_net(), 1);
  EXPECT_THROW(m.predict(Tensor<float>(Shape{1, 16, 16, 3})), ConfigError);
  EXPECT_THROW(m.predict(Tensor<float>(Shape{1, 32, 16, 4})), ShapeError);
}

TEST(NetConfig, KeyValueRoundTripAndValidation) {
  NetConfig c = tiny_net();
  c.branches = {true, false, true};
  c.filter_mode = FilterMode::kScalar;
  const auto back = NetConfig::from_kv(c.to_kv());
  EXPECT_EQ(back.to_kv(), c.to_kv());
  NetConfig bad;
  bad.height = 30;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = NetConfig{};
  bad.decoder_dims = {64, 32, 16, 6};
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(NetConfig::from_kv({{"net.branches", "12"}}), ConfigError);
}

TEST(NetConfig, GroupCountDividesChannels) {
  NetConfig c;
  EXPECT_EQ(gn_groups(c, 64), 8);
  EXPECT_EQ(gn_groups(c, 4), 4);
  EXPECT_EQ(gn_groups(c, 12), 6);
}

TEST(SegModel, ScalarFilterModeHasOneWeightPerBranch) {
  NetConfig c = tiny_net();
  c.filter_mode = FilterMode::kScalar;
  SegModel<float> m(c, 0);
  const auto* f = m.params().find("dec.layer0.block0.freq.filter_hw");
  ASSERT_NE(f, nullptr);
  EXPECT_EQ(f->value.numel(), 2u);
  EXPECT_TRUE(f->complex);
}
