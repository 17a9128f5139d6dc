#include "freqclick/acselect.h"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace freqclick {

namespace {

void require_labels(const LabelMap& m, const char* what) {
  if (m.rank() != 2) throw ShapeError(std::string(what) + " must be [H,W], got " + m.shape().str());
}

void require_probs(const ProbMap& p) {
  if (p.rank() != 3 || p.dim(2) < 2) throw ShapeError("probability map must be [H,W,K>=2], got " + p.shape().str());
}

void require_nonempty(const Region& r) {
  if (r.pixels.empty()) throw ContractError("region " + std::to_string(r.id) + " is empty");
}

std::span<const double> class_vector(const ProbMap& probs, const Pixel& px) {
  const std::size_t k = probs.dim(2);
  const std::size_t off = (static_cast<std::size_t>(px.row) * probs.dim(1) + static_cast<std::size_t>(px.col)) * k;
  return probs.data().subspan(off, k);
}

}  // namespace

LabelMap make_labels(std::size_t h, std::size_t w) { return LabelMap(Shape({h, w})); }

LabelMap argmax_labels(const ProbMap& probs) {
  require_probs(probs);
  const std::size_t h = probs.dim(0), w = probs.dim(1), k = probs.dim(2);
  LabelMap out = make_labels(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (probs[i * k + c] > probs[i * k + best]) best = c;
    }
    out[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

void check_probmap(const ProbMap& probs, double tol) {
  require_probs(probs);
  const std::size_t k = probs.dim(2);
  for (std::size_t i = 0; i < probs.numel(); i += k) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = probs[i + c];
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("probability outside [0,1]");
      s += v;
    }
    if (std::abs(s - 1.0) > tol) throw ContractError("class probabilities do not sum to 1");
  }
}

const char* polarity_name(Polarity p) { return p == Polarity::kFP ? "FP" : "FN"; }

std::vector<Region> extract_regions(const LabelMap& pred, const LabelMap& gt) {
  require_labels(pred, "prediction");
  require_labels(gt, "ground truth");
  if (pred.shape() != gt.shape()) {
    throw ShapeError("prediction " + pred.shape().str() + " vs ground truth " + gt.shape().str());
  }
  const int h = static_cast<int>(pred.dim(0)), w = static_cast<int>(pred.dim(1));
  // 0 = correct, 1 = FP, 2 = FN
  std::vector<std::uint8_t> kind(pred.numel());
  for (std::size_t i = 0; i < kind.size(); ++i) {
    if (pred[i] != gt[i]) kind[i] = pred[i] != 0 ? 1 : 2;
  }
  std::vector<int> label(pred.numel(), -1);
  std::vector<Region> regions;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (kind[start] == 0 || label[start] >= 0) continue;
    Region r;
    r.id = static_cast<int>(regions.size());
    r.polarity = kind[start] == 1 ? Polarity::kFP : Polarity::kFN;
    label[start] = r.id;
    stack.assign(1, start);
    std::vector<int> members;
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      members.push_back(cur);
      const int y = cur / w, x = cur % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if ((dy == 0 && dx == 0) || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int n = ny * w + nx;
          if (kind[n] == kind[start] && label[n] < 0) {
            label[n] = r.id;
            stack.push_back(n);
          }
        }
      }
    }
    std::sort(members.begin(), members.end());
    r.pixels.reserve(members.size());
    for (int m : members) r.pixels.push_back({m / w, m % w});
    regions.push_back(std::move(r));
  }
  return regions;
}

double pixel_entropy(std::span<const double> p) {
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

double mpe(const Region& r, const ProbMap& probs) {
  require_nonempty(r);
  require_probs(probs);
  double best = 0;
  for (const auto& px : r.pixels) best = std::max(best, pixel_entropy(class_vector(probs, px)));
  return best;
}

double ape(const Region& r, const ProbMap& probs) {
  require_nonempty(r);
  require_probs(probs);
  double s = 0;
  for (const auto& px : r.pixels) s += pixel_entropy(class_vector(probs, px));
  return s / static_cast<double>(r.pixels.size());
}

double least_confidence(const Region& r, const ProbMap& probs) {
  require_nonempty(r);
  require_probs(probs);
  double best = 0;
  for (const auto& px : r.pixels) {
    const auto p = class_vector(probs, px);
    best = std::max(best, 1.0 - *std::max_element(p.begin(), p.end()));
  }
  return best;
}

double rgu(const Region& r, const ProbMap& probs) {
  require_nonempty(r);
  require_probs(probs);
  if (probs.dim(2) != 2) throw ContractError("RGU is defined for binary probability maps only");
  double extreme = r.polarity == Polarity::kFP ? 0.0 : 1.0;
  double total = 0;
  for (const auto& px : r.pixels) {
    const double fg = class_vector(probs, px)[1];
    extreme = r.polarity == Polarity::kFP ? std::max(extreme, fg) : std::min(extreme, fg);
    total += fg;
  }
  const double mean = total / static_cast<double>(r.pixels.size());
  const double gap = std::clamp(std::abs(extreme - mean), kRguEps, 1.0);
  return 1.0 - std::log(gap);
}

void ScoreWeights::validate() const {
  if (w_a < 0 || w_b < 0 || w_c < 0) throw ConfigError("score weights must be non-negative");
  if (!(w_a + w_b + w_c > 0)) throw ConfigError("score weights must not all be zero");
}

void compute_metrics(std::vector<Region>& regions, const ProbMap& probs) {
  for (auto& r : regions) {
    r.scores.mpe = mpe(r, probs);
    r.scores.ape = ape(r, probs);
    r.scores.rgu = rgu(r, probs);
    r.scores.lc = least_confidence(r, probs);
  }
}

void region_score(std::vector<Region>& regions, const ScoreOptions& opt) {
  if (regions.empty()) return;
  auto normalize = [&](double RegionScores::*raw, double RegionScores::*out) {
    double lo = regions.front().scores.*raw, hi = lo;
    for (const auto& r : regions) {
      lo = std::min(lo, r.scores.*raw);
      hi = std::max(hi, r.scores.*raw);
    }
    for (auto& r : regions) {
      if (!opt.normalize) r.scores.*out = r.scores.*raw;
      else r.scores.*out = hi > lo ? (r.scores.*raw - lo) / (hi - lo) : 0.0;
    }
  };
  normalize(&RegionScores::mpe, &RegionScores::mpe_n);
  normalize(&RegionScores::ape, &RegionScores::ape_n);
  normalize(&RegionScores::rgu, &RegionScores::rgu_n);
  const double wa = opt.metrics.mpe ? opt.weights.w_a : 0.0;
  const double wb = opt.metrics.ape ? opt.weights.w_b : 0.0;
  const double wc = opt.metrics.rgu ? opt.weights.w_c : 0.0;
  for (auto& r : regions) r.scores.rs = wa * r.scores.mpe_n + wb * r.scores.ape_n + wc * r.scores.rgu_n;
}

const char* policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::kAcSelect: return "acselect";
    case PolicyKind::kRandom: return "random";
    case PolicyKind::kEntropy: return "entropy";
    case PolicyKind::kLeastConfidence: return "least-confidence";
    case PolicyKind::kLargestRegion: return "largest-region";
  }
  return "?";
}

PolicyKind parse_policy(const std::string& s) {
  for (auto k : {PolicyKind::kAcSelect, PolicyKind::kRandom, PolicyKind::kEntropy, PolicyKind::kLeastConfidence,
                 PolicyKind::kLargestRegion}) {
    if (s == policy_name(k)) return k;
  }
  throw ConfigError("unknown policy '" + s + "'");
}

std::size_t select(const std::vector<Region>& regions, const SelectionPolicy& policy, Rng& rng) {
  if (regions.empty()) throw ContractError("select needs at least one region");
  if (policy.kind == PolicyKind::kRandom) return static_cast<std::size_t>(rng.below(regions.size()));
  auto key = [&](const Region& r) -> double {
    switch (policy.kind) {
      case PolicyKind::kAcSelect: return r.scores.rs;
      case PolicyKind::kEntropy: return policy.entropy_sum ? r.scores.ape * static_cast<double>(r.size()) : r.scores.ape;
      case PolicyKind::kLeastConfidence: return r.scores.lc;
      case PolicyKind::kLargestRegion: return static_cast<double>(r.size());
      case PolicyKind::kRandom: break;
    }
    return 0.0;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < regions.size(); ++i) {
    const double a = key(regions[i]), b = key(regions[best]);
    if (a > b || (a == b && regions[i].id < regions[best].id)) best = i;
  }
  return best;
}

std::vector<Region> score_and_select(const LabelMap& pred, const LabelMap& gt, const ProbMap& probs,
                                     const SelectionPolicy& policy, Rng& rng, std::size_t& chosen) {
  auto regions = extract_regions(pred, gt);
  if (regions.empty()) return regions;
  compute_metrics(regions, probs);
  region_score(regions, policy.score);
  chosen = select(regions, policy, rng);
  return regions;
}

void write_region_csv_header(std::ostream& os) { os << "image_id,region_id,polarity,size,mpe,ape,rgu,rs,selected\n"; }

void write_region_csv(std::ostream& os, const std::string& image_id, const std::vector<Region>& regions,
                      int selected_id) {
  const auto old = os.precision(10);
  for (const auto& r : regions) {
    os << image_id << ',' << r.id << ',' << polarity_name(r.polarity) << ',' << r.size() << ',' << r.scores.mpe << ','
       << r.scores.ape << ',' << r.scores.rgu << ',' << r.scores.rs << ',' << (r.id == selected_id ? 1 : 0) << '\n';
  }
  os.precision(old);
}

}  // namespace freqclick
