#include "freqclick/train.h"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace freqclick {

namespace {

std::string fmt_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": '" + v + "'");
  }
}

void paint_ellipse(LabelMap& m, double cy, double cx, double ry, double rx, std::uint8_t value) {
  const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (y - cy) / ry, v = (x - cx) / rx;
      if (u * u + v * v <= 1.0) m[static_cast<std::size_t>(y * w + x)] = value;
    }
  }
}

// 3x3 morphological dilation (grow = true) or erosion of the foreground.
LabelMap morph(const LabelMap& m, bool grow) {
  const int h = static_cast<int>(m.dim(0)), w = static_cast<int>(m.dim(1));
  LabelMap out = m;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool any = false, all = true;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
          const bool fg = m[static_cast<std::size_t>(yy * w + xx)] != 0;
          any = any || fg;
          all = all && fg;
        }
      }
      out[static_cast<std::size_t>(y * w + x)] = grow ? any : all;
    }
  }
  return out;
}

LabelMap corrupt(const LabelMap& gt, Rng& rng) {
  const double h = static_cast<double>(gt.dim(0)), w = static_cast<double>(gt.dim(1));
  LabelMap prev = gt;
  if (rng.bernoulli(0.5)) prev = morph(prev, rng.bernoulli(0.5));
  // Drop a whole object: the FN components of an empty prediction are gt's objects.
  const auto objects = extract_regions(make_labels(gt.dim(0), gt.dim(1)), gt);
  if (objects.size() > 1 && rng.bernoulli(0.4)) {
    for (const auto& p : objects[rng.below(objects.size())].pixels) prev[p.row * gt.dim(1) + p.col] = 0;
  }
  const int blobs = rng.range(0, 2);
  for (int i = 0; i < blobs; ++i) {
    paint_ellipse(prev, rng.uniform(0, h - 1), rng.uniform(0, w - 1), rng.uniform(1.5, 6), rng.uniform(1.5, 6), 1);
  }
  const int holes = rng.range(0, 2);
  for (int i = 0; i < holes && !objects.empty(); ++i) {
    const auto& obj = objects[rng.below(objects.size())];
    const auto& p = obj.pixels[rng.below(obj.pixels.size())];
    paint_ellipse(prev, p.row, p.col, rng.uniform(1.5, 6), rng.uniform(1.5, 6), 0);
  }
  return prev;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("Adam eps must be > 0");
  if (!(zero_click_prob >= 0 && zero_click_prob <= 1)) throw ConfigError("zero_click_prob must lie in [0, 1]");
  if (!(iterative_prob >= 0 && iterative_prob <= 1)) throw ConfigError("iterative_prob must lie in [0, 1]");
  if (max_sim_clicks < 0) throw ConfigError("max_sim_clicks must be >= 0");
  if (click_radius < 1) throw ConfigError("click radius must be >= 1");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {
      {"train.lr", fmt_double(lr)},
      {"train.epochs", std::to_string(epochs)},
      {"train.batch", std::to_string(batch)},
      {"train.beta1", fmt_double(beta1)},
      {"train.beta2", fmt_double(beta2)},
      {"train.eps", fmt_double(eps)},
      {"train.seed", std::to_string(seed)},
      {"train.zero_click_prob", fmt_double(zero_click_prob)},
      {"train.max_sim_clicks", std::to_string(max_sim_clicks)},
      {"train.click_radius", std::to_string(click_radius)},
      {"train.iterative_prob", fmt_double(iterative_prob)},
      {"train.augment", augment ? "1" : "0"},
  };
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "train.lr") c.lr = parse_double(k, v);
    else if (k == "train.epochs") c.epochs = static_cast<int>(parse_int(k, v));
    else if (k == "train.batch") c.batch = static_cast<int>(parse_int(k, v));
    else if (k == "train.beta1") c.beta1 = parse_double(k, v);
    else if (k == "train.beta2") c.beta2 = parse_double(k, v);
    else if (k == "train.eps") c.eps = parse_double(k, v);
    else if (k == "train.seed") c.seed = static_cast<std::uint64_t>(parse_int(k, v));
    else if (k == "train.zero_click_prob") c.zero_click_prob = parse_double(k, v);
    else if (k == "train.max_sim_clicks") c.max_sim_clicks = static_cast<int>(parse_int(k, v));
    else if (k == "train.click_radius") c.click_radius = static_cast<int>(parse_int(k, v));
    else if (k == "train.iterative_prob") c.iterative_prob = parse_double(k, v);
    else if (k == "train.augment") c.augment = v == "1";
  }
  c.validate();
  return c;
}

template <typename T>
Adam<T>::Adam(ParamSet<T>& params, double lr, double beta1, double beta2, double eps)
    : params_(params.trainable()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.numel(), 0.0);
    v_.emplace_back(p->value.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value;
    const auto& grad = params_[k]->grad;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double g = static_cast<double>(grad[i]);
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

namespace {

// Largest region half of the time, otherwise uniform.
const Region& pick_region(const std::vector<Region>& regions, Rng& rng) {
  if (rng.bernoulli(0.5)) return regions[rng.below(regions.size())];
  std::size_t best = 0;
  for (std::size_t i = 1; i < regions.size(); ++i) {
    if (regions[i].size() > regions[best].size()) best = i;
  }
  return regions[best];
}

}  // namespace

TrainExample simulate_example(const Sample& s, const TrainConfig& cfg, Rng& rng, const Refiner* refiner) {
  Sample cur = s;
  if (cfg.augment) {
    std::vector<AugmentOp> ops;
    if (rng.bernoulli(0.5)) ops.push_back(AugmentOp::kFlip);
    if (cur.gt.dim(0) == cur.gt.dim(1)) {
      const int quarter_turns = rng.range(0, 3);
      for (int i = 0; i < quarter_turns; ++i) ops.push_back(AugmentOp::kRotate90);
    }
    if (rng.bernoulli(0.5)) ops.push_back(AugmentOp::kBrightness);
    cur = augment(cur, ops, rng.next_u64());
  }
  const std::size_t h = cur.gt.dim(0), w = cur.gt.dim(1);
  TrainExample ex;
  ex.image = cur.image;
  ex.target = cur.gt;
  if (rng.bernoulli(cfg.zero_click_prob) || cfg.max_sim_clicks == 0) {
    ex.prev = make_labels(h, w);
    ex.clicks = encode_clicks({}, h, w, cfg.click_radius);
    return ex;
  }
  std::vector<ClickRecord> clicks;
  const int n = rng.range(1, cfg.max_sim_clicks);
  if (refiner != nullptr && rng.bernoulli(cfg.iterative_prob)) {
    MaskState state = refiner->initial(cur.image);
    for (int i = 0; i < n; ++i) {
      const auto regions = extract_regions(state.labels, cur.gt);
      if (regions.empty()) break;
      auto c = place_click(pick_region(regions, rng), h, w);
      c.index = static_cast<int>(clicks.size()) + 1;
      clicks.push_back(c);
      if (i + 1 < n) state = refiner->refine(cur.image, clicks, state, &cur.gt, cfg.click_radius);
    }
    ex.prev = std::move(state.labels);
    ex.clicks = encode_clicks(clicks, h, w, cfg.click_radius);
    return ex;
  }
  LabelMap prev = corrupt(cur.gt, rng);
  for (int i = 0; i < n; ++i) {
    const auto regions = extract_regions(prev, cur.gt);
    if (regions.empty()) break;
    auto c = place_click(pick_region(regions, rng), h, w);
    c.index = static_cast<int>(clicks.size()) + 1;
    clicks.push_back(c);
    if (i + 1 < n) {
      // Earlier clicks have already been answered: correct their disks.
      for (std::size_t p = 0; p < h * w; ++p) {
        if (in_disk(c.position, static_cast<int>(p / w), static_cast<int>(p % w), cfg.click_radius)) prev[p] = cur.gt[p];
      }
    }
  }
  ex.prev = std::move(prev);
  ex.clicks = encode_clicks(clicks, h, w, cfg.click_radius);
  return ex;
}

Tensor<float> make_batch(const std::vector<TrainExample>& xs) {
  if (xs.empty()) throw ContractError("empty batch");
  const std::size_t h = xs[0].image.dim(0), w = xs[0].image.dim(1), ic = xs[0].image.dim(2), cin = ic + 3;
  Tensor<float> batch(Shape{xs.size(), h, w, cin});
  for (std::size_t b = 0; b < xs.size(); ++b) {
    const auto& x = xs[b];
    if (x.image.dim(0) != h || x.image.dim(1) != w || x.image.dim(2) != ic) {
      throw ShapeError("batch examples must share extents");
    }
    float* dst = batch.data().data() + b * h * w * cin;
    for (std::size_t i = 0; i < h * w; ++i) {
      for (std::size_t c = 0; c < ic; ++c) dst[i * cin + c] = static_cast<float>(x.image[i * ic + c]);
      dst[i * cin + ic] = x.clicks.positive[i];
      dst[i * cin + ic + 1] = x.clicks.negative[i];
      dst[i * cin + ic + 2] = x.prev[i];
    }
  }
  return batch;
}

TrainResult train(SegModel<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (data.empty()) throw ContractError("training needs a nonempty dataset");
  cfg.validate();
  Adam<float> opt(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  const auto runner =
      std::make_shared<const ModelRunner>(std::shared_ptr<SegModel<float>>(&model, [](SegModel<float>*) {}));
  const ModelRefiner refiner(runner);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<TrainExample> xs;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        xs.push_back(simulate_example(data[order[i]], cfg, rng, cfg.iterative_prob > 0 ? &refiner : nullptr));
        for (auto v : xs.back().target.vec()) labels.push_back(v);
      }
      model.params().zero_grad();
      Tape<float> tape;
      auto logits = model.forward(tape, make_batch(xs), true);
      auto loss = ag::softmax_cross_entropy(logits, labels);
      const double l = loss.value()[0];
      if (!std::isfinite(l)) throw TrainingError("loss became non-finite", epoch);
      tape.backward(loss);
      opt.step();
      total += l;
      ++batches;
    }
    for (const auto* p : model.params().all()) {
      if (!p->value.all_finite()) throw TrainingError("parameter '" + p->name + "' became non-finite", epoch);
    }
    result.loss_curve.push_back(total / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, result.loss_curve.back());
  }
  result.steps = opt.steps();
  return result;
}

namespace {

template <typename F>
void for_each_prediction(SegModel<float>& model, const std::vector<Sample>& data, F f) {
  const auto runner = ModelRunner(std::shared_ptr<SegModel<float>>(&model, [](SegModel<float>*) {}));
  for (const auto& s : data) {
    const std::size_t h = s.gt.dim(0), w = s.gt.dim(1);
    const auto probs = runner.run(s.image, encode_clicks({}, h, w, 1), make_labels(h, w));
    f(s, argmax_labels(probs));
  }
}

}  // namespace

double zero_click_iou(SegModel<float>& model, const std::vector<Sample>& data) {
  if (data.empty()) throw ContractError("empty dataset");
  double total = 0;
  for_each_prediction(model, data, [&](const Sample& s, const LabelMap& pred) { total += iou(pred, s.gt); });
  return total / static_cast<double>(data.size());
}

double pixel_accuracy(SegModel<float>& model, const std::vector<Sample>& data) {
  if (data.empty()) throw ContractError("empty dataset");
  std::size_t hit = 0, n = 0;
  for_each_prediction(model, data, [&](const Sample& s, const LabelMap& pred) {
    for (std::size_t i = 0; i < pred.numel(); ++i) hit += pred[i] == s.gt[i];
    n += pred.numel();
  });
  return static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace freqclick
