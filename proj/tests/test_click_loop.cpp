#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.h"
#include "freqclick/click_loop.h"
#include "freqclick/errors.h"
#include "freqclick/synth.h"
#include "freqclick/train.h"
#include "oracles.h"

using namespace freqclick;

namespace {

std::vector<Sample> small_set(std::size_t n, std::size_t side = 16, std::uint64_t seed = 2) {
  GenConfig g;
  g.height = g.width = side;
  g.seed = seed;
  return generate(g, n);
}

std::shared_ptr<const ModelRunner> random_runner(std::uint64_t seed = 3) {
  return std::make_shared<ModelRunner>(std::make_shared<SegModel<float>>(fixture::tiny_net(), seed));
}

// 8-connected components of the pixels where a and b differ.
std::vector<std::vector<int>> changed_components(const LabelMap& a, const LabelMap& b) {
  LabelMap diff = make_labels(a.dim(0), a.dim(1));
  for (std::size_t i = 0; i < a.numel(); ++i) diff[i] = a[i] != b[i];
  std::vector<std::vector<int>> out;
  for (const auto& r : oracle::brute_regions(fixture::to_ints(diff), std::vector<int>(a.numel(), 0),
                                             static_cast<int>(a.dim(0)), static_cast<int>(a.dim(1)))) {
    out.push_back(r.pixels);
  }
  return out;
}

// A few epochs give masks that react to clicks; random weights do not.
std::shared_ptr<const ModelRunner> trained_runner() {
  static const auto runner = [] {
    auto m = std::make_shared<SegModel<float>>(fixture::tiny_net(), 6);
    TrainConfig tc;
    tc.epochs = 4;
    tc.click_radius = 3;
    train(*m, small_set(48, 16, 40), tc);
    return std::make_shared<const ModelRunner>(m);
  }();
  return runner;
}

}  // namespace

TEST(Noc, ReferenceCases) {
  EXPECT_EQ(noc_at({0.70, 0.86, 0.92}, 0.5, 0.90, 20).noc, 3);
  EXPECT_EQ(noc_at({0.70, 0.86, 0.92}, 0.5, 0.85, 20).noc, 2);
  const auto miss = noc_at({0.5, 0.6}, 0.4, 0.9, 20);
  EXPECT_EQ(miss.noc, 20);
  EXPECT_TRUE(miss.failed);
  const auto perfect = noc_at({}, 1.0, 0.9, 20);
  EXPECT_EQ(perfect.noc, 1);
  EXPECT_FALSE(perfect.failed);
  // Reaching the threshold only after the cap still fails.
  EXPECT_TRUE(noc_at({0.1, 0.2, 0.95}, 0.0, 0.9, 2).failed);
}

TEST(Noc, MeanIouAtOneOverTwoImages) {
  EvalReport rep;
  Trajectory a, b;
  a.image_id = "a";
  a.initial_iou = 0.1;
  a.ious = {0.6, 0.9};
  b.image_id = "b";
  b.initial_iou = 0.2;
  b.ious = {0.8};
  rep.trajectories = {a, b};
  const auto s = rep.summary();
  EXPECT_DOUBLE_EQ(s.miou[0], 0.7);
  EXPECT_DOUBLE_EQ(s.miou[1], 0.85);  // b carries 0.8 forward
  EXPECT_DOUBLE_EQ(a.iou_after(0), 0.1);
  EXPECT_DOUBLE_EQ(a.iou_after(7), 0.9);
}

TEST(Noc, ThresholdMonotoneOnRealTrajectories) {
  const auto data = small_set(20);
  OracleRefiner oracle;
  EvalConfig cfg;
  cfg.click_radius = 2;
  for (const auto& t : evaluate(data, oracle, cfg).trajectories) {
    int last = 0;
    for (double th : {0.5, 0.7, 0.8, 0.85, 0.9, 0.99}) {
      const int n = noc_at(t.ious, t.initial_iou, th, cfg.click_cap).noc;
      ASSERT_GE(n, last);
      last = n;
    }
  }
}

TEST(OracleLoop, IouNeverDecreasesAndClicksAreValid) {
  const auto data = small_set(30);
  OracleRefiner oracle;
  for (auto kind : {PolicyKind::kAcSelect, PolicyKind::kRandom, PolicyKind::kLargestRegion}) {
    EvalConfig cfg;
    cfg.policy.kind = kind;
    cfg.click_radius = 1;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto t = run_trajectory(data[i], oracle, cfg, i);
      double prev = t.initial_iou;
      for (double v : t.ious) {
        ASSERT_GE(v, prev - 1e-15);
        prev = v;
      }
      for (const auto& c : t.clicks) {
        // A click sits on a pixel whose gt matches its polarity.
        const auto g = data[i].gt[static_cast<std::size_t>(c.position.row) * 16 + c.position.col];
        ASSERT_EQ(g == 1, c.polarity == ClickPolarity::kPositive);
        ASSERT_GE(c.source_region_id, 0);
      }
    }
  }
}

TEST(OracleLoop, ConvergesWithinErrorPixelCount) {
  // Every oracle click fixes at least its own pixel.
  const auto data = small_set(15);
  OracleRefiner oracle;
  EvalConfig cfg;
  cfg.click_radius = 0;
  cfg.click_cap = 256;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto t = run_trajectory(data[i], oracle, cfg, i);
    std::size_t fg = 0;
    for (auto v : data[i].gt.vec()) fg += v;
    EXPECT_TRUE(t.converged);
    EXPECT_LE(t.clicks.size(), fg);
    EXPECT_DOUBLE_EQ(t.ious.back(), 1.0);
  }
}

TEST(OracleLoop, PerfectInitialMaskStopsAtZeroClicks) {
  const auto data = small_set(1);
  OracleRefiner oracle;
  // A gt-shaped coarse mask needs a model, so drive the session manually.
  ClickSession s(oracle, data[0].image, data[0].gt, 50);
  const auto& regs = extract_regions(s.state().labels, data[0].gt);
  ASSERT_EQ(regs.size(), 1u);
  const auto c = place_click(regs[0], 16, 16);
  s.click(c.position, c.polarity, 0);
  EXPECT_DOUBLE_EQ(*s.current_iou(), 1.0);
  Rng rng(0);
  std::size_t chosen = 0;
  EXPECT_TRUE(s.regions(SelectionPolicy{}, rng, chosen).empty());
}

TEST(Evaluate, DeterministicAndWorkerIndependent) {
  const auto data = small_set(12);
  ModelRefiner model(random_runner());
  EvalConfig cfg;
  cfg.refiner = RefinerMode::kModel;
  cfg.policy.kind = PolicyKind::kRandom;
  cfg.policy.seed = 4;
  cfg.click_cap = 6;
  const auto a = evaluate(data, model, cfg);
  cfg.workers = 3;
  const auto b = evaluate(data, model, cfg);
  ASSERT_EQ(a.trajectories.size(), b.trajectories.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    EXPECT_EQ(a.trajectories[i].clicks, b.trajectories[i].clicks);
    EXPECT_EQ(a.trajectories[i].ious, b.trajectories[i].ious);
  }
  std::ostringstream ca, cb;
  a.write_trajectories_csv(ca);
  b.write_trajectories_csv(cb);
  EXPECT_EQ(ca.str(), cb.str());
  EXPECT_THROW(evaluate({}, model, cfg), ContractError);
}

TEST(Evaluate, ZeroWeightModelRunsToTheCap) {
  auto m = std::make_shared<SegModel<float>>(fixture::tiny_net(), 1);
  m->zero_weights();
  ModelRefiner model(std::make_shared<ModelRunner>(m));
  EvalConfig cfg;
  cfg.refiner = RefinerMode::kModel;
  cfg.click_cap = 7;
  const auto rep = evaluate(small_set(4), model, cfg);
  for (const auto& t : rep.trajectories) {
    EXPECT_EQ(t.clicks.size(), 7u);
    EXPECT_FALSE(t.converged);
  }
  const auto s = rep.summary();
  for (int f : s.failures) EXPECT_EQ(f, 4);
  for (double n : s.mean_noc) EXPECT_DOUBLE_EQ(n, 7.0);
}

TEST(ModelRefiner, WithGtOnlyErrorBoxesChange) {
  const auto data = small_set(10);
  ModelRefiner model(random_runner(9));
  for (const auto& s : data) {
    ClickSession sess(model, s.image, s.gt, 2);
    for (int k = 0; k < 4; ++k) {
      const auto before = sess.state().labels;
      Rng rng(0);
      std::size_t chosen = 0;
      const auto regs = sess.regions(SelectionPolicy{}, rng, chosen);
      if (regs.empty()) break;
      const auto c = place_click(regs[chosen], 16, 16);
      sess.click(c.position, c.polarity, regs[chosen].id);
      std::vector<char> allowed(256, 0);
      for (const auto& r : oracle::brute_regions(fixture::to_ints(before), fixture::to_ints(s.gt), 16, 16)) {
        int y0 = 16, y1 = -1, x0 = 16, x1 = -1;
        for (int p : r.pixels) {
          y0 = std::min(y0, p / 16), y1 = std::max(y1, p / 16);
          x0 = std::min(x0, p % 16), x1 = std::max(x1, p % 16);
        }
        for (int y = std::max(0, y0 - 2); y <= std::min(15, y1 + 2); ++y)
          for (int x = std::max(0, x0 - 2); x <= std::min(15, x1 + 2); ++x) allowed[y * 16 + x] = 1;
      }
      for (int i = 0; i < 256; ++i) {
        if (before[i] != sess.state().labels[i]) ASSERT_TRUE(allowed[i]) << "pixel " << i;
      }
    }
  }
}

TEST(ModelRefiner, WithoutGtOnlyComponentsMeetingTheClickChange) {
  const auto data = small_set(10);
  ModelRefiner model(trained_runner());
  Rng rng(17);
  std::size_t changed_any = 0;
  for (const auto& s : data) {
    ClickSession sess(model, s.image, std::nullopt, 3);
    EXPECT_FALSE(sess.current_iou().has_value());
    for (int k = 0; k < 5; ++k) {
      const auto before = sess.state().labels;
      const Pixel p{static_cast<int>(rng.below(16)), static_cast<int>(rng.below(16))};
      sess.click(p, rng.bernoulli(0.5) ? ClickPolarity::kPositive : ClickPolarity::kNegative);
      for (const auto& comp : changed_components(before, sess.state().labels)) {
        ++changed_any;
        bool meets = false;
        for (int i : comp) meets = meets || in_disk(p, i / 16, i % 16, 3);
        ASSERT_TRUE(meets);
      }
    }
  }
  EXPECT_GT(changed_any, 0u);
}

TEST(ModelRunner, ResizesForeignExtents) {
  auto runner = random_runner();
  Tensor<double> img(Shape{24, 20, 1}, 0.4);
  const auto probs = runner->run(img, encode_clicks({}, 24, 20, 3), make_labels(24, 20));
  ASSERT_EQ(probs.shape(), (Shape{24, 20, 2}));
  for (std::size_t i = 0; i < 24 * 20; ++i) ASSERT_NEAR(probs[2 * i] + probs[2 * i + 1], 1.0, 1e-5);
}

TEST(ClickSession, FailedClickLeavesStateUnchanged) {
  const auto data = small_set(1);
  ModelRefiner model(random_runner());
  ClickSession s(model, data[0].image, data[0].gt, 3);
  s.click({4, 4}, ClickPolarity::kPositive);
  const auto labels = s.state().labels;
  const auto probs = s.state().probs;
  EXPECT_THROW(s.click({16, 0}, ClickPolarity::kPositive), ContractError);
  EXPECT_THROW(s.click({0, -1}, ClickPolarity::kNegative), ContractError);
  EXPECT_EQ(s.clicks().size(), 1u);
  EXPECT_EQ(s.ious().size(), 1u);
  EXPECT_EQ(s.state().labels.vec(), labels.vec());
  EXPECT_EQ(s.state().probs.vec(), probs.vec());
  s.click({5, 5}, ClickPolarity::kNegative);
  EXPECT_EQ(s.clicks().back().index, 2);
}

TEST(ClickSession, OracleNeedsGt) {
  const auto data = small_set(1);
  OracleRefiner oracle;
  EXPECT_THROW(ClickSession(oracle, data[0].image, std::nullopt, 3), ContractError);
}

TEST(Replay, ReproducesSessionMasks) {
  const auto data = small_set(3);
  ModelRefiner model(random_runner(8));
  OracleRefiner oracle;
  for (const Refiner* r : {static_cast<const Refiner*>(&model), static_cast<const Refiner*>(&oracle)}) {
    for (const auto& s : data) {
      ClickSession sess(*r, s.image, s.gt, 3);
      std::vector<LabelMap> masks{sess.state().labels};
      Rng rng(1);
      for (int k = 0; k < 6; ++k) {
        sess.click({static_cast<int>(rng.below(16)), static_cast<int>(rng.below(16))},
                   k % 2 ? ClickPolarity::kNegative : ClickPolarity::kPositive);
        masks.push_back(sess.state().labels);
      }
      const auto rep = replay(s.image, &s.gt, sess.clicks(), *r, 3);
      ASSERT_EQ(rep.size(), masks.size());
      for (std::size_t i = 0; i < rep.size(); ++i) ASSERT_EQ(rep[i].vec(), masks[i].vec());
    }
  }
}

TEST(EvalConfig, KvRoundTripAndValidation) {
  EvalConfig c;
  c.iou_thresholds = {0.5, 0.75};
  c.click_cap = 9;
  c.click_radius = 4;
  c.refiner = RefinerMode::kModel;
  c.policy.kind = PolicyKind::kEntropy;
  c.policy.seed = 77;
  c.seed = 3;
  auto kv = c.to_kv();
  EXPECT_EQ(kv.count("eval.workers"), 0u);
  kv["eval.workers"] = "2";
  kv["train.lr"] = "1";
  const auto back = EvalConfig::from_kv(kv);
  EXPECT_EQ(back.to_kv(), c.to_kv());
  EXPECT_EQ(back.workers, 2);
  EvalConfig bad;
  bad.click_cap = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = EvalConfig{};
  bad.iou_thresholds = {1.5};
  EXPECT_THROW(bad.validate(), ConfigError);
  kv["eval.click_cap"] = "many";
  EXPECT_THROW(EvalConfig::from_kv(kv), ConfigError);
}

TEST(Summary, EchoesRunConfig) {
  EvalConfig cfg;
  cfg.click_cap = 3;
  OracleRefiner oracle;
  const auto rep = evaluate(small_set(2), oracle, cfg);
  std::ostringstream os;
  rep.write_summary(os, {{"run.marker", "abc"}});
  EXPECT_NE(os.str().find("run.marker"), std::string::npos);
  EXPECT_NE(os.str().find("abc"), std::string::npos);
}
