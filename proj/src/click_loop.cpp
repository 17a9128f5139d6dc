#include "freqclick/click_loop.h"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

namespace freqclick {

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string threshold_label(double t) { return fixed(t, 2); }

std::string metrics_label(const MetricSet& m) {
  std::string s;
  for (auto [on, name] : {std::pair{m.mpe, "mpe"}, std::pair{m.ape, "ape"}, std::pair{m.rgu, "rgu"}}) {
    if (on) s += (s.empty() ? "" : "+") + std::string(name);
  }
  return s.empty() ? "none" : s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) return out;
    start = pos + 1;
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad value for " + key + ": '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("bad value for " + key + ": '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("bad value for " + key + ": '" + v + "'");
}

}  // namespace

const char* click_polarity_name(ClickPolarity p) { return p == ClickPolarity::kPositive ? "positive" : "negative"; }

ClickPolarity parse_click_polarity(const std::string& s) {
  if (s == "positive") return ClickPolarity::kPositive;
  if (s == "negative") return ClickPolarity::kNegative;
  throw ConfigError("polarity must be positive or negative, got '" + s + "'");
}

ClickPolarity polarity_for(Polarity region) {
  return region == Polarity::kFN ? ClickPolarity::kPositive : ClickPolarity::kNegative;
}

const char* refiner_name(RefinerMode m) { return m == RefinerMode::kModel ? "model" : "oracle"; }

RefinerMode parse_refiner(const std::string& s) {
  if (s == "model") return RefinerMode::kModel;
  if (s == "oracle") return RefinerMode::kOracle;
  throw ConfigError("refiner must be model or oracle, got '" + s + "'");
}

void EvalConfig::validate() const {
  if (click_cap < 1) throw ConfigError("click cap must be >= 1");
  if (click_radius < 1) throw ConfigError("click radius must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (iou_thresholds.empty()) throw ConfigError("at least one IoU threshold is required");
  for (double t : iou_thresholds) {
    if (!(t > 0 && t <= 1)) throw ConfigError("IoU thresholds must lie in (0, 1]");
  }
  policy.score.weights.validate();
}

std::map<std::string, std::string> EvalConfig::to_kv() const {
  std::string th;
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) th += (i ? "," : "") + threshold_label(iou_thresholds[i]);
  const auto& m = policy.score.metrics;
  return {
      {"eval.thresholds", th},
      {"eval.click_cap", std::to_string(click_cap)},
      {"eval.click_radius", std::to_string(click_radius)},
      {"eval.refiner", refiner_name(refiner)},
      {"eval.policy", policy_name(policy.kind)},
      {"eval.policy_seed", std::to_string(policy.seed)},
      {"eval.metrics", metrics_label(m)},
      {"eval.normalize", policy.score.normalize ? "1" : "0"},
      {"eval.weights", fixed(policy.score.weights.w_a, 4) + "," + fixed(policy.score.weights.w_b, 4) + "," +
                           fixed(policy.score.weights.w_c, 4)},
      {"eval.entropy_sum", policy.entropy_sum ? "1" : "0"},
      {"eval.seed", std::to_string(seed)},
  };
}

EvalConfig EvalConfig::from_kv(const std::map<std::string, std::string>& kv) {
  EvalConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "eval.thresholds") {
      c.iou_thresholds.clear();
      for (const auto& t : split(v, ',')) c.iou_thresholds.push_back(to_double(k, t));
    } else if (k == "eval.click_cap") {
      c.click_cap = static_cast<int>(to_int(k, v));
    } else if (k == "eval.click_radius") {
      c.click_radius = static_cast<int>(to_int(k, v));
    } else if (k == "eval.refiner") {
      c.refiner = parse_refiner(v);
    } else if (k == "eval.policy") {
      c.policy.kind = parse_policy(v);
    } else if (k == "eval.policy_seed") {
      c.policy.seed = static_cast<std::uint64_t>(to_int(k, v));
    } else if (k == "eval.metrics") {
      MetricSet m{false, false, false};
      if (v != "none") {
        for (const auto& name : split(v, '+')) {
          if (name == "mpe") m.mpe = true;
          else if (name == "ape") m.ape = true;
          else if (name == "rgu") m.rgu = true;
          else throw ConfigError("unknown metric '" + name + "' in " + k);
        }
      }
      c.policy.score.metrics = m;
    } else if (k == "eval.normalize") {
      c.policy.score.normalize = to_bool(k, v);
    } else if (k == "eval.weights") {
      const auto w = split(v, ',');
      if (w.size() != 3) throw ConfigError(k + " needs three comma-separated weights");
      c.policy.score.weights = {to_double(k, w[0]), to_double(k, w[1]), to_double(k, w[2])};
    } else if (k == "eval.entropy_sum") {
      c.policy.entropy_sum = to_bool(k, v);
    } else if (k == "eval.seed") {
      c.seed = static_cast<std::uint64_t>(to_int(k, v));
    } else if (k == "eval.workers") {
      c.workers = static_cast<int>(to_int(k, v));
    }
  }
  c.validate();
  return c;
}

double iou(const LabelMap& pred, const LabelMap& gt) {
  if (pred.shape() != gt.shape()) throw ShapeError("iou: " + pred.shape().str() + " vs " + gt.shape().str());
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

ClickRecord place_click(const Region& r, std::size_t height, std::size_t width) {
  if (r.pixels.empty()) throw ContractError("cannot place a click in an empty region");
  const int h = static_cast<int>(height), w = static_cast<int>(width);
  std::vector<int> dist(height * width, 0);  // 0 = complement
  for (const auto& p : r.pixels) dist[p.row * w + p.col] = -1;
  // Multi-source BFS over 8-neighbours from the complement (and the border).
  std::vector<int> frontier;
  for (const auto& p : r.pixels) {
    bool edge = false;
    for (int dy = -1; dy <= 1 && !edge; ++dy) {
      for (int dx = -1; dx <= 1 && !edge; ++dx) {
        const int y = p.row + dy, x = p.col + dx;
        edge = y < 0 || y >= h || x < 0 || x >= w || dist[y * w + x] == 0;
      }
    }
    if (edge) {
      dist[p.row * w + p.col] = 1;
      frontier.push_back(p.row * w + p.col);
    }
  }
  for (int level = 1; !frontier.empty(); ++level) {
    std::vector<int> next;
    for (int cur : frontier) {
      const int y0 = cur / w, x0 = cur % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = y0 + dy, x = x0 + dx;
          if (y < 0 || y >= h || x < 0 || x >= w || dist[y * w + x] != -1) continue;
          dist[y * w + x] = level + 1;
          next.push_back(y * w + x);
        }
      }
    }
    frontier = std::move(next);
  }
  Pixel best = r.pixels.front();
  int best_d = -1;
  for (const auto& p : r.pixels) {
    const int d = dist[p.row * w + p.col];
    if (d > best_d) {
      best_d = d;
      best = p;
    }
  }
  return ClickRecord{0, best, polarity_for(r.polarity), r.id};
}

bool in_disk(const Pixel& center, int row, int col, int radius) {
  const int dy = row - center.row, dx = col - center.col;
  return dy * dy + dx * dx <= radius * radius;
}

ClickMaps encode_clicks(const std::vector<ClickRecord>& clicks, std::size_t height, std::size_t width, int radius) {
  ClickMaps maps{make_labels(height, width), make_labels(height, width)};
  const int h = static_cast<int>(height), w = static_cast<int>(width);
  for (const auto& c : clicks) {
    if (c.position.row < 0 || c.position.row >= h || c.position.col < 0 || c.position.col >= w) {
      throw ContractError("click outside the image");
    }
    LabelMap& m = c.polarity == ClickPolarity::kPositive ? maps.positive : maps.negative;
    for (int y = std::max(0, c.position.row - radius); y <= std::min(h - 1, c.position.row + radius); ++y) {
      for (int x = std::max(0, c.position.col - radius); x <= std::min(w - 1, c.position.col + radius); ++x) {
        if (in_disk(c.position, y, x, radius)) m[static_cast<std::size_t>(y * w + x)] = 1;
      }
    }
  }
  return maps;
}

ProbMap one_hot(const LabelMap& labels) {
  ProbMap p(Shape{labels.dim(0), labels.dim(1), 2});
  for (std::size_t i = 0; i < labels.numel(); ++i) p[2 * i + (labels[i] ? 1 : 0)] = 1.0;
  return p;
}

ModelRunner::ModelRunner(std::shared_ptr<SegModel<float>> model) : model_(std::move(model)) {
  if (!model_) throw ContractError("ModelRunner needs a model");
}

ProbMap ModelRunner::run(const Tensor<double>& image, const ClickMaps& clicks, const LabelMap& prev) const {
  const auto& cfg = model_->config();
  if (image.rank() != 3) throw ShapeError("image must be [H,W,C], got " + image.shape().str());
  const std::size_t h = image.dim(0), w = image.dim(1), ic = image.dim(2);
  if (ic != cfg.image_channels) {
    throw ConfigError("model expects " + std::to_string(cfg.image_channels) + " image channels, got " +
                      std::to_string(ic));
  }
  const std::size_t cin = cfg.input_channels();
  Tensor<float> input(Shape{1, h, w, cin});
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < ic; ++c) input[i * cin + c] = static_cast<float>(image[i * ic + c]);
    input[i * cin + ic] = clicks.positive[i];
    input[i * cin + ic + 1] = clicks.negative[i];
    input[i * cin + ic + 2] = prev[i];
  }
  const bool resize = h != cfg.height || w != cfg.width;
  if (resize) input = resize_bilinear(input, cfg.height, cfg.width);
  auto probs = model_->predict(input);
  if (resize) probs = resize_bilinear(probs, h, w);
  const std::size_t k = probs.dim(3);
  ProbMap out(Shape{h, w, k});
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<double>(probs[i]);
  // Renormalize in double so each pixel sums to 1 at the ProbMap's precision.
  for (std::size_t i = 0; i < h * w; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += out[i * k + c];
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] /= s;
  }
  return out;
}

MaskState OracleRefiner::initial(const Tensor<double>& image) const {
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (coarse_) {
    const auto probs = coarse_->run(image, encode_clicks({}, h, w, 1), make_labels(h, w));
    return {probs, argmax_labels(probs)};
  }
  auto labels = make_labels(h, w);
  return {one_hot(labels), labels};
}

MaskState OracleRefiner::refine(const Tensor<double>&, const std::vector<ClickRecord>& clicks, const MaskState& prev,
                                const LabelMap* gt, int radius) const {
  if (gt == nullptr) throw ContractError("the oracle refiner needs ground truth");
  if (clicks.empty()) return prev;
  MaskState next = prev;
  const std::size_t h = prev.labels.dim(0), w = prev.labels.dim(1), k = prev.probs.dim(2);
  const Pixel c = clicks.back().position;
  for (int y = std::max(0, c.row - radius); y <= std::min(static_cast<int>(h) - 1, c.row + radius); ++y) {
    for (int x = std::max(0, c.col - radius); x <= std::min(static_cast<int>(w) - 1, c.col + radius); ++x) {
      if (!in_disk(c, y, x, radius)) continue;
      const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
      next.labels[i] = (*gt)[i];
      for (std::size_t cls = 0; cls < k; ++cls) next.probs[i * k + cls] = cls == (*gt)[i] ? 1.0 : 0.0;
    }
  }
  return next;
}

MaskState ModelRefiner::initial(const Tensor<double>& image) const {
  const std::size_t h = image.dim(0), w = image.dim(1);
  const auto probs = runner_->run(image, encode_clicks({}, h, w, 1), make_labels(h, w));
  return {probs, argmax_labels(probs)};
}

MaskState ModelRefiner::refine(const Tensor<double>& image, const std::vector<ClickRecord>& clicks,
                               const MaskState& prev, const LabelMap* gt, int radius) const {
  const std::size_t h = prev.labels.dim(0), w = prev.labels.dim(1), k = prev.probs.dim(2);
  const auto probs = runner_->run(image, encode_clicks(clicks, h, w, radius), prev.labels);
  const auto labels = argmax_labels(probs);
  std::vector<std::uint8_t> allowed(h * w, 0);
  const int ih = static_cast<int>(h), iw = static_cast<int>(w);
  if (gt != nullptr) {
    for (const auto& r : extract_regions(prev.labels, *gt)) {
      int y0 = ih, y1 = -1, x0 = iw, x1 = -1;
      for (const auto& p : r.pixels) {
        y0 = std::min(y0, p.row), y1 = std::max(y1, p.row);
        x0 = std::min(x0, p.col), x1 = std::max(x1, p.col);
      }
      for (int y = std::max(0, y0 - radius); y <= std::min(ih - 1, y1 + radius); ++y) {
        for (int x = std::max(0, x0 - radius); x <= std::min(iw - 1, x1 + radius); ++x) allowed[y * iw + x] = 1;
      }
    }
  } else if (!clicks.empty()) {
    // Changed pixels, split into 8-connected components; keep those meeting the disk.
    const Pixel c = clicks.back().position;
    std::vector<int> comp(h * w, -1);
    std::vector<int> stack, members;
    for (int start = 0; start < ih * iw; ++start) {
      if (labels[start] == prev.labels[start] || comp[start] >= 0) continue;
      comp[start] = start;
      stack.assign(1, start);
      members.clear();
      bool touches = false;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        members.push_back(cur);
        const int y0 = cur / iw, x0 = cur % iw;
        touches = touches || in_disk(c, y0, x0, radius);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int y = y0 + dy, x = x0 + dx;
            if (y < 0 || y >= ih || x < 0 || x >= iw) continue;
            const int n = y * iw + x;
            if (comp[n] < 0 && labels[n] != prev.labels[n]) {
              comp[n] = start;
              stack.push_back(n);
            }
          }
        }
      }
      if (touches) {
        for (int m : members) allowed[m] = 1;
      }
    }
  }
  MaskState next = prev;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!allowed[i]) continue;
    next.labels[i] = labels[i];
    for (std::size_t c = 0; c < k; ++c) next.probs[i * k + c] = probs[i * k + c];
  }
  return next;
}

double Trajectory::iou_after(int k) const {
  if (k <= 0 || ious.empty()) return initial_iou;
  return ious[static_cast<std::size_t>(std::min<int>(k, static_cast<int>(ious.size())) - 1)];
}

NocResult noc_at(const std::vector<double>& ious, double initial_iou, double t, int cap) {
  for (std::size_t k = 0; k < ious.size() && static_cast<int>(k) < cap; ++k) {
    if (ious[k] >= t) return {static_cast<int>(k) + 1, false};
  }
  if (ious.empty() && initial_iou >= t) return {1, false};
  return {cap, true};
}

ClickSession::ClickSession(const Refiner& refiner, Tensor<double> image, std::optional<LabelMap> gt, int radius)
    : refiner_(refiner), image_(std::move(image)), gt_(std::move(gt)), radius_(radius) {
  if (image_.rank() != 3) throw ShapeError("image must be [H,W,C], got " + image_.shape().str());
  if (gt_ && (gt_->rank() != 2 || gt_->dim(0) != image_.dim(0) || gt_->dim(1) != image_.dim(1))) {
    throw ShapeError("ground truth " + gt_->shape().str() + " does not match image " + image_.shape().str());
  }
  if (refiner_.mode() == RefinerMode::kOracle && !gt_) throw ContractError("oracle mode requires ground truth");
  state_ = refiner_.initial(image_);
}

std::optional<double> ClickSession::current_iou() const {
  if (!gt_) return std::nullopt;
  return iou(state_.labels, *gt_);
}

const MaskState& ClickSession::click(Pixel position, ClickPolarity polarity, int source_region_id) {
  if (position.row < 0 || position.col < 0 || position.row >= static_cast<int>(image_.dim(0)) ||
      position.col >= static_cast<int>(image_.dim(1))) {
    throw ContractError("click (" + std::to_string(position.row) + "," + std::to_string(position.col) +
                        ") is outside the image");
  }
  auto clicks = clicks_;
  clicks.push_back({static_cast<int>(clicks.size()) + 1, position, polarity, source_region_id});
  auto next = refiner_.refine(image_, clicks, state_, gt_ ? &*gt_ : nullptr, radius_);
  clicks_ = std::move(clicks);
  state_ = std::move(next);
  if (gt_) ious_.push_back(iou(state_.labels, *gt_));
  return state_;
}

std::vector<Region> ClickSession::regions(const SelectionPolicy& policy, Rng& rng, std::size_t& chosen) const {
  if (!gt_) throw ContractError("region extraction needs ground truth");
  return score_and_select(state_.labels, *gt_, state_.probs, policy, rng, chosen);
}

Trajectory run_trajectory(const Sample& sample, const Refiner& refiner, const EvalConfig& cfg,
                          std::size_t image_index) {
  ClickSession session(refiner, sample.image, sample.gt, cfg.click_radius);
  Trajectory t;
  t.image_id = sample.id;
  t.initial_iou = *session.current_iou();
  Rng rng(derive_seed(cfg.policy.seed, image_index));
  for (int k = 1; k <= cfg.click_cap; ++k) {
    std::size_t chosen = 0;
    const auto regions = session.regions(cfg.policy, rng, chosen);
    if (regions.empty()) {
      t.converged = true;
      break;
    }
    const auto c = place_click(regions[chosen], sample.gt.dim(0), sample.gt.dim(1));
    session.click(c.position, c.polarity, c.source_region_id);
  }
  if (!t.converged && *session.current_iou() == 1.0) t.converged = true;
  t.ious = session.ious();
  t.clicks = session.clicks();
  return t;
}

std::vector<LabelMap> replay(const Tensor<double>& image, const LabelMap* gt, const std::vector<ClickRecord>& clicks,
                             const Refiner& refiner, int radius) {
  ClickSession session(refiner, image, gt ? std::optional<LabelMap>(*gt) : std::nullopt, radius);
  std::vector<LabelMap> masks{session.state().labels};
  for (const auto& c : clicks) masks.push_back(session.click(c.position, c.polarity, c.source_region_id).labels);
  return masks;
}

EvalSummary EvalReport::summary() const {
  EvalSummary s;
  s.policy = policy_name(config.policy.kind);
  s.images = trajectories.size();
  s.thresholds = config.iou_thresholds;
  for (double th : s.thresholds) {
    double total = 0;
    int fails = 0;
    for (const auto& t : trajectories) {
      const auto r = noc_at(t.ious, t.initial_iou, th, config.click_cap);
      total += r.noc;
      fails += r.failed;
    }
    s.mean_noc.push_back(trajectories.empty() ? 0.0 : total / static_cast<double>(trajectories.size()));
    s.failures.push_back(fails);
  }
  for (int k = 1; k <= config.click_cap; ++k) {
    double total = 0;
    for (const auto& t : trajectories) total += t.iou_after(k);
    s.miou.push_back(trajectories.empty() ? 0.0 : total / static_cast<double>(trajectories.size()));
  }
  return s;
}

void EvalReport::write_trajectories_csv(std::ostream& os) const {
  os << "image_id,click,row,col,polarity,region_id,iou\n";
  for (const auto& t : trajectories) {
    os << t.image_id << ",0,,,,," << fixed(t.initial_iou, 8) << '\n';
    for (std::size_t k = 0; k < t.clicks.size(); ++k) {
      const auto& c = t.clicks[k];
      os << t.image_id << ',' << c.index << ',' << c.position.row << ',' << c.position.col << ','
         << click_polarity_name(c.polarity) << ',' << c.source_region_id << ',' << fixed(t.ious[k], 8) << '\n';
    }
  }
}

void EvalReport::write_summary(std::ostream& os, const std::map<std::string, std::string>& run_config) const {
  const auto s = summary();
  os << "# freqclick evaluation summary\n";
  os << "policy=" << s.policy << '\n';
  os << "refiner=" << refiner_name(config.refiner) << '\n';
  os << "images=" << s.images << '\n';
  os << "seed=" << config.seed << '\n';
  for (const auto& [k, v] : run_config) os << "config." << k << '=' << v << '\n';
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    const int pct = static_cast<int>(std::lround(s.thresholds[i] * 100));
    os << "noc@" << pct << '=' << fixed(s.mean_noc[i], 4) << '\n';
    os << "failures@" << pct << '=' << s.failures[i] << '\n';
  }
  for (std::size_t k = 0; k < s.miou.size(); ++k) os << "miou@" << k + 1 << '=' << fixed(s.miou[k], 6) << '\n';
}

EvalReport evaluate(const std::vector<Sample>& dataset, const Refiner& refiner, const EvalConfig& cfg) {
  if (dataset.empty()) throw ContractError("evaluation needs a nonempty dataset");
  cfg.validate();
  EvalReport report;
  report.config = cfg;
  report.trajectories.resize(dataset.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      try {
        report.trajectories[i] = run_trajectory(dataset[i], refiner, cfg, i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n = std::min<int>(cfg.workers, static_cast<int>(dataset.size()));
  if (n <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return report;
}

}  // namespace freqclick
