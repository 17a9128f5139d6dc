#pragma once

// Reference implementations used only by tests and the acceptance binary.
// None of them share code with the library beyond its data types.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <vector>

#include "freqclick/acselect.h"
#include "freqclick/autograd.h"
#include "freqclick/rng.h"
#include "freqclick/tensor.h"

namespace oracle {

using freqclick::Axis;
using freqclick::Tensor;
using cd = std::complex<double>;

// Direct double sum over both transformed axes of a rank-3 [H,W,C] tensor.
inline Tensor<cd> naive_dft2(const Tensor<cd>& x, int ax1, int ax2, bool inverse) {
  const auto& d = x.shape().dims();
  const std::size_t n1 = d[ax1], n2 = d[ax2];
  Tensor<cd> out(x.shape());
  const double sign = inverse ? 1.0 : -1.0;
  std::size_t idx[3];
  for (idx[0] = 0; idx[0] < d[0]; ++idx[0]) {
    for (idx[1] = 0; idx[1] < d[1]; ++idx[1]) {
      for (idx[2] = 0; idx[2] < d[2]; ++idx[2]) {
        const std::size_t u = idx[ax1], v = idx[ax2];
        std::size_t src[3] = {idx[0], idx[1], idx[2]};
        cd acc = 0;
        for (std::size_t a = 0; a < n1; ++a) {
          for (std::size_t b = 0; b < n2; ++b) {
            src[ax1] = a;
            src[ax2] = b;
            const double angle = sign * 2.0 * std::numbers::pi *
                                 (static_cast<double>((u * a) % n1) / n1 + static_cast<double>((v * b) % n2) / n2);
            acc += x.at({src[0], src[1], src[2]}) * std::polar(1.0, angle);
          }
        }
        out.at({idx[0], idx[1], idx[2]}) = inverse ? acc / static_cast<double>(n1 * n2) : acc;
      }
    }
  }
  return out;
}

// C[i][j] = sum_k A[i][k] B[k][j].
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t n,
                                  std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * m + j];
      c[i * m + j] = s;
    }
  }
  return c;
}

// ---- AcSelect brute force -------------------------------------------------

struct BruteRegion {
  int polarity = 0;  // 1 = FP, 2 = FN
  std::vector<int> pixels;  // sorted row-major indices
  double mpe = 0, ape = 0, rgu = 0, rs = 0;
};

struct BruteResult {
  std::vector<BruteRegion> regions;
  int selected = -1;
};

// Union-find over mislabeled pixels, 8-connected, only joining equal polarity.
inline std::vector<BruteRegion> brute_regions(const std::vector<int>& pred, const std::vector<int>& gt, int h, int w) {
  std::vector<int> parent(h * w);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> root = [&](int i) { return parent[i] == i ? i : parent[i] = root(parent[i]); };
  auto kind = [&](int i) { return pred[i] == gt[i] ? 0 : (pred[i] ? 1 : 2); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (!kind(i)) continue;
      for (int yy = y - 1; yy <= y + 1; ++yy) {
        for (int xx = x - 1; xx <= x + 1; ++xx) {
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          const int j = yy * w + xx;
          if (kind(j) == kind(i)) parent[root(j)] = root(i);
        }
      }
    }
  }
  std::map<int, std::vector<int>> by_root;
  for (int i = 0; i < h * w; ++i) {
    if (kind(i)) by_root[root(i)].push_back(i);
  }
  std::vector<BruteRegion> out;
  for (auto& [_, px] : by_root) out.push_back({kind(px.front()), px});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.pixels.front() < b.pixels.front(); });
  return out;
}

// fg[i] = foreground probability of pixel i in a binary map.
inline BruteResult brute_acselect(const std::vector<int>& pred, const std::vector<int>& gt,
                                  const std::vector<double>& fg, int h, int w, double wa = 0.35, double wb = 0.35,
                                  double wc = 0.30) {
  BruteResult res;
  res.regions = brute_regions(pred, gt, h, w);
  if (res.regions.empty()) return res;
  auto entropy = [](double p) {
    double e = 0;
    for (double q : {1.0 - p, p}) {
      if (q > 0) e -= q * std::log(q);
    }
    return e;
  };
  for (auto& r : res.regions) {
    double sum_h = 0, sum_p = 0;
    double ext = r.polarity == 1 ? -1.0 : 2.0;
    for (int i : r.pixels) {
      const double e = entropy(fg[i]);
      r.mpe = std::max(r.mpe, e);
      sum_h += e;
      sum_p += fg[i];
      ext = r.polarity == 1 ? std::max(ext, fg[i]) : std::min(ext, fg[i]);
    }
    r.ape = sum_h / r.pixels.size();
    const double gap = std::abs(ext - sum_p / r.pixels.size());
    r.rgu = 1.0 - std::log(std::min(1.0, std::max(1e-6, gap)));
  }
  auto norm = [&](double BruteRegion::*m, double v) {
    double lo = v, hi = v;
    for (const auto& r : res.regions) {
      lo = std::min(lo, r.*m);
      hi = std::max(hi, r.*m);
    }
    return hi > lo ? (v - lo) / (hi - lo) : 0.0;
  };
  std::vector<double> rs;
  for (const auto& r : res.regions) {
    rs.push_back(wa * norm(&BruteRegion::mpe, r.mpe) + wb * norm(&BruteRegion::ape, r.ape) +
                 wc * norm(&BruteRegion::rgu, r.rgu));
  }
  for (std::size_t i = 0; i < rs.size(); ++i) res.regions[i].rs = rs[i];
  res.selected = static_cast<int>(std::max_element(rs.begin(), rs.end()) - rs.begin());
  return res;
}

// ---- place_click brute force ---------------------------------------------

// Chessboard distance from each region pixel to the nearest non-region cell,
// where the frame outside the image counts as non-region.
inline std::pair<int, int> deepest_pixel(const std::vector<std::pair<int, int>>& region, int h, int w) {
  std::vector<char> in((h + 2) * (w + 2), 0);
  for (auto [r, c] : region) in[(r + 1) * (w + 2) + (c + 1)] = 1;
  int best_d = -1;
  std::pair<int, int> best{-1, -1};
  std::vector<std::pair<int, int>> sorted = region;
  std::sort(sorted.begin(), sorted.end());
  for (auto [r, c] : sorted) {
    int d = 1 << 30;
    for (int y = 0; y < h + 2; ++y) {
      for (int x = 0; x < w + 2; ++x) {
        if (in[y * (w + 2) + x]) continue;
        d = std::min(d, std::max(std::abs(y - (r + 1)), std::abs(x - (c + 1))));
      }
    }
    if (d > best_d) {
      best_d = d;
      best = {r, c};
    }
  }
  return best;
}

// ---- Ellipse rasterizer ---------------------------------------------------

// Pixel (r, c) is inside when its rotated, axis-scaled offset has norm <= 1.
inline bool inside_ellipse(double r, double c, double cy, double cx, double ry, double rx, double theta) {
  const double dy = r - cy, dx = c - cx;
  const double a = (dx * std::cos(theta) + dy * std::sin(theta)) / rx;
  const double b = (dy * std::cos(theta) - dx * std::sin(theta)) / ry;
  return a * a + b * b <= 1.0;
}

// ---- Finite differences ---------------------------------------------------

// ||a - n||_2 / max(||a||_2, ||n||_2, floor). The floor keeps gradients
// that vanish analytically (a bias ahead of a normalization) from
// comparing rounding noise against rounding noise.
inline constexpr double kGradNormFloor = 1e-3;

inline double rel_err(const std::vector<double>& a, const std::vector<double>& n, double floor = kGradNormFloor) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

// Central differences of `loss` with respect to every entry of `x`.
inline std::vector<double> numeric_grad(std::vector<double>& x, const std::function<double()>& loss,
                                        double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = loss();
    x[i] = keep - step;
    const double down = loss();
    x[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

inline Tensor<double> random_tensor(freqclick::Shape s, freqclick::Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.vec()) v = rng.normal() * scale;
  return t;
}

}  // namespace oracle
