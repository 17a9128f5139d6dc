#pragma once

// Seeded random (probmap, gt) pairs and small helpers shared by tests.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "freqclick/acselect.h"
#include "freqclick/click_loop.h"
#include "freqclick/freqnet.h"
#include "freqclick/synth.h"

namespace fixture {

using namespace freqclick;

struct ProbCase {
  ProbMap probs;
  LabelMap pred;
  LabelMap gt;
};

// Blocky gt and a noisy prediction so regions of many sizes appear. Some
// probabilities are exactly 0.5 or repeated to exercise ties and clamps.
inline ProbCase random_case(std::uint64_t seed, std::size_t h = 16, std::size_t w = 16) {
  Rng rng(seed);
  ProbCase c{ProbMap(Shape{h, w, 2}), make_labels(h, w), make_labels(h, w)};
  const std::size_t cy = rng.below(h), cx = rng.below(w), ry = 2 + rng.below(h / 2), rx = 2 + rng.below(w / 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = (double(y) - double(cy)) / double(ry), dx = (double(x) - double(cx)) / double(rx);
      c.gt[y * w + x] = dy * dy + dx * dx <= 1.0 ? 1 : 0;
      double p;
      const double u = rng.uniform();
      if (u < 0.05) p = 0.5;
      else if (u < 0.10) p = 0.25;
      else p = rng.uniform();
      // Bias toward gt so errors form regions instead of salt noise.
      if (rng.bernoulli(0.6)) p = c.gt[y * w + x] ? 0.5 + 0.5 * p : 0.5 * p;
      c.probs[2 * (y * w + x) + 1] = p;
      c.probs[2 * (y * w + x)] = 1.0 - p;
    }
  }
  c.pred = argmax_labels(c.probs);
  return c;
}

inline std::vector<int> to_ints(const LabelMap& m) { return std::vector<int>(m.vec().begin(), m.vec().end()); }

inline std::vector<double> fg_probs(const ProbMap& p) {
  std::vector<double> fg(p.numel() / 2);
  for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = p[2 * i + 1];
  return fg;
}

// Rectangles of foreground on a background canvas.
inline LabelMap boxes(std::size_t h, std::size_t w, const std::vector<std::array<int, 4>>& rects) {
  LabelMap m = make_labels(h, w);
  for (auto [r0, c0, r1, c1] : rects)
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) m[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)] = 1;
  return m;
}

inline Sample sample_from(const LabelMap& gt, const std::string& id = "fx") {
  Tensor<double> img(Shape{gt.dim(0), gt.dim(1), 1});
  for (std::size_t i = 0; i < gt.numel(); ++i) img[i] = gt[i] ? 0.7 : 0.3;
  return {id, img, gt};
}

// 16x16 network small enough for finite differences and fast training.
inline NetConfig tiny_net() {
  NetConfig c;
  c.height = 16;
  c.width = 16;
  c.encoder_dims = {4, 4, 8, 8};
  c.align_dim = 4;
  c.decoder_dims = {8, 8, 8, 4};
  c.refine_dim = 4;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "freqclick-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture
