#include "freqclick/synth.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "freqclick/autograd.h"
#include "json.hpp"

namespace freqclick {

namespace {

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

std::string fmt_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%05zu", index);
  return buf;
}

}  // namespace

const char* family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kEllipseUnion: return "ellipse-union";
    case ShapeFamily::kBlob: return "blob";
    case ShapeFamily::kRing: return "ring";
  }
  return "?";
}

ShapeFamily parse_family(const std::string& s) {
  for (auto f : {ShapeFamily::kEllipseUnion, ShapeFamily::kBlob, ShapeFamily::kRing}) {
    if (s == family_name(f)) return f;
  }
  throw ConfigError("unknown shape family '" + s + "'");
}

void GenConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("image extents must be at least 8x8");
  if (channels < 1 || channels > 3) throw ConfigError("channels must be 1..3");
  if (min_shapes < 1 || max_shapes < min_shapes) throw ConfigError("need 1 <= min_shapes <= max_shapes");
  if (fg_mean < 0 || fg_mean > 1 || bg_mean < 0 || bg_mean > 1) throw ConfigError("intensity means must lie in [0,1]");
  if (noise < 0) throw ConfigError("noise sigma must be >= 0");
  if (contrast_jitter < 0) throw ConfigError("contrast_jitter must be >= 0");
  if (jaggedness < 0 || jaggedness >= 0.5) throw ConfigError("jaggedness must lie in [0, 0.5)");
  if (fg_mean == bg_mean && noise == 0) {
    throw ConfigError("foreground and background means are equal with zero noise: the task is unlearnable");
  }
}

std::map<std::string, std::string> GenConfig::to_kv() const {
  return {
      {"gen.height", std::to_string(height)},
      {"gen.width", std::to_string(width)},
      {"gen.channels", std::to_string(channels)},
      {"gen.family", family_name(family)},
      {"gen.min_shapes", std::to_string(min_shapes)},
      {"gen.max_shapes", std::to_string(max_shapes)},
      {"gen.fg_mean", fmt_double(fg_mean)},
      {"gen.bg_mean", fmt_double(bg_mean)},
      {"gen.noise", fmt_double(noise)},
      {"gen.contrast_jitter", fmt_double(contrast_jitter)},
      {"gen.jaggedness", fmt_double(jaggedness)},
      {"gen.seed", std::to_string(seed)},
  };
}

GenConfig GenConfig::from_kv(const std::map<std::string, std::string>& kv) {
  GenConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "gen.height") c.height = static_cast<std::size_t>(parse_int(k, v));
    else if (k == "gen.width") c.width = static_cast<std::size_t>(parse_int(k, v));
    else if (k == "gen.channels") c.channels = static_cast<std::size_t>(parse_int(k, v));
    else if (k == "gen.family") c.family = parse_family(v);
    else if (k == "gen.min_shapes") c.min_shapes = static_cast<int>(parse_int(k, v));
    else if (k == "gen.max_shapes") c.max_shapes = static_cast<int>(parse_int(k, v));
    else if (k == "gen.fg_mean") c.fg_mean = parse_double(k, v);
    else if (k == "gen.bg_mean") c.bg_mean = parse_double(k, v);
    else if (k == "gen.noise") c.noise = parse_double(k, v);
    else if (k == "gen.contrast_jitter") c.contrast_jitter = parse_double(k, v);
    else if (k == "gen.jaggedness") c.jaggedness = parse_double(k, v);
    else if (k == "gen.seed") c.seed = static_cast<std::uint64_t>(parse_int(k, v));
  }
  c.validate();
  return c;
}

bool ShapeSpec::contains(double row, double col) const {
  const double dy = row - cy, dx = col - cx;
  const double c = std::cos(theta), s = std::sin(theta);
  const double u = (c * dx + s * dy) / rx;
  const double v = (-s * dx + c * dy) / ry;
  const double rho = std::sqrt(u * u + v * v);
  double boundary = 1.0;
  if (!harmonics.empty()) {
    const double phi = std::atan2(v, u);
    for (std::size_t k = 0; k < harmonics.size(); ++k) {
      boundary += amplitudes[k] * std::cos(harmonics[k] * phi + phases[k]);
    }
  }
  return rho <= boundary && rho >= inner * boundary;
}

LabelMap rasterize(const std::vector<ShapeSpec>& shapes, std::size_t height, std::size_t width) {
  LabelMap m = make_labels(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      for (const auto& s : shapes) {
        if (s.contains(static_cast<double>(r), static_cast<double>(c))) {
          m[r * width + c] = 1;
          break;
        }
      }
    }
  }
  return m;
}

std::vector<ShapeSpec> sample_shapes(const GenConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(derive_seed(derive_seed(cfg.seed, index), 0));
  const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
  const double scale = std::min(h, w) / 64.0;
  for (;;) {
    std::vector<ShapeSpec> shapes(static_cast<std::size_t>(rng.range(cfg.min_shapes, cfg.max_shapes)));
    for (auto& s : shapes) {
      const bool ring = cfg.family == ShapeFamily::kRing;
      const double lo = (ring ? 7.0 : 4.0) * scale, hi = (ring ? 15.0 : 13.0) * scale;
      s.ry = rng.uniform(lo, hi);
      s.rx = rng.uniform(lo, hi);
      s.cy = rng.uniform(0.15 * h, 0.85 * h);
      s.cx = rng.uniform(0.15 * w, 0.85 * w);
      s.theta = rng.uniform(0.0, std::numbers::pi);
      if (ring) s.inner = rng.uniform(0.4, 0.6);
      if (cfg.family == ShapeFamily::kBlob) {
        for (int k = 2; k <= 4; ++k) {
          s.harmonics.push_back(k);
          s.amplitudes.push_back(rng.uniform(0.05, 0.2));
          s.phases.push_back(rng.uniform(0.0, 2 * std::numbers::pi));
        }
      }
      if (cfg.jaggedness > 0) {
        for (int k = 7; k <= 11; k += 2) {
          s.harmonics.push_back(k);
          s.amplitudes.push_back(cfg.jaggedness * rng.uniform(0.3, 1.0) / 3.0);
          s.phases.push_back(rng.uniform(0.0, 2 * std::numbers::pi));
        }
      }
      if (cfg.contrast_jitter > 0) s.intensity_offset = rng.uniform(-cfg.contrast_jitter, cfg.contrast_jitter);
    }
    const auto m = rasterize(shapes, cfg.height, cfg.width);
    if (std::any_of(m.vec().begin(), m.vec().end(), [](std::uint8_t v) { return v != 0; })) return shapes;
  }
}

Sample generate_one(const GenConfig& cfg, std::size_t index) {
  const auto shapes = sample_shapes(cfg, index);
  Rng rng(derive_seed(derive_seed(cfg.seed, index), 1));
  const std::size_t h = cfg.height, w = cfg.width, ch = cfg.channels;
  Sample s;
  s.id = sample_id(index);
  s.gt = make_labels(h, w);
  s.image = Tensor<double>(Shape{h, w, ch});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double base = cfg.bg_mean;
      for (const auto& sh : shapes) {
        if (sh.contains(static_cast<double>(r), static_cast<double>(c))) {
          s.gt[r * w + c] = 1;
          base = cfg.fg_mean + sh.intensity_offset;
          break;
        }
      }
      for (std::size_t k = 0; k < ch; ++k) s.image[(r * w + c) * ch + k] = quantize(base + cfg.noise * rng.normal());
    }
  }
  return s;
}

std::vector<Sample> generate(const GenConfig& cfg, std::size_t n, std::size_t first) {
  if (n < 1) throw ContractError("generate needs n >= 1");
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(cfg, first + i));
  return out;
}

AugmentOp parse_augment_op(const std::string& s) {
  if (s == "flip") return AugmentOp::kFlip;
  if (s == "rotate90") return AugmentOp::kRotate90;
  if (s == "brightness") return AugmentOp::kBrightness;
  if (s == "resize-crop") return AugmentOp::kResizeCrop;
  throw ConfigError("unknown augmentation '" + s + "'");
}

namespace {

// Remap pixels: out(r, c) = in(src(r, c)) for image and mask alike.
template <typename F>
Sample remap(const Sample& s, std::size_t oh, std::size_t ow, F src) {
  const std::size_t w = s.gt.dim(1), ch = s.image.dim(2);
  Sample out;
  out.id = s.id;
  out.gt = make_labels(oh, ow);
  out.image = Tensor<double>(Shape{oh, ow, ch});
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      const auto [sr, sc] = src(r, c);
      out.gt[r * ow + c] = s.gt[sr * w + sc];
      for (std::size_t k = 0; k < ch; ++k) out.image[(r * ow + c) * ch + k] = s.image[(sr * w + sc) * ch + k];
    }
  }
  return out;
}

Sample resize_crop(const Sample& s, Rng& rng) {
  const std::size_t h = s.gt.dim(0), w = s.gt.dim(1), ch = s.image.dim(2);
  const double f = rng.uniform(0.75, 1.25);
  const auto nh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(h))));
  const auto nw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(w))));
  const auto scaled = resize_bilinear(s.image.reshaped(Shape{1, h, w, ch}), nh, nw);
  auto near = [](std::size_t i, std::size_t in, std::size_t out) {
    return std::min(in - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                                                     static_cast<double>(out)));
  };
  // Offset of the output window inside the scaled image (may be negative: pad).
  const long oy = nh >= h ? static_cast<long>(rng.below(nh - h + 1)) : -static_cast<long>(rng.below(h - nh + 1));
  const long ox = nw >= w ? static_cast<long>(rng.below(nw - w + 1)) : -static_cast<long>(rng.below(w - nw + 1));
  Sample out;
  out.id = s.id;
  out.gt = make_labels(h, w);
  out.image = Tensor<double>(Shape{h, w, ch});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      // Padding replicates the nearest edge of the scaled image.
      const auto sr = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(r) + oy, 0, static_cast<long>(nh) - 1));
      const auto sc = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(c) + ox, 0, static_cast<long>(nw) - 1));
      const bool inside = static_cast<long>(r) + oy >= 0 && static_cast<long>(r) + oy < static_cast<long>(nh) &&
                          static_cast<long>(c) + ox >= 0 && static_cast<long>(c) + ox < static_cast<long>(nw);
      out.gt[r * w + c] = inside ? s.gt[near(sr, h, nh) * w + near(sc, w, nw)] : 0;
      for (std::size_t k = 0; k < ch; ++k) out.image[(r * w + c) * ch + k] = quantize(scaled[(sr * nw + sc) * ch + k]);
    }
  }
  if (std::none_of(out.gt.vec().begin(), out.gt.vec().end(), [](std::uint8_t v) { return v != 0; })) return s;
  return out;
}

}  // namespace

Sample augment(const Sample& s, const std::vector<AugmentOp>& ops, std::uint64_t seed) {
  Rng rng(seed);
  Sample cur = s;
  for (auto op : ops) {
    const std::size_t h = cur.gt.dim(0), w = cur.gt.dim(1);
    switch (op) {
      case AugmentOp::kFlip:
        cur = remap(cur, h, w, [&](std::size_t r, std::size_t c) { return std::pair{r, w - 1 - c}; });
        break;
      case AugmentOp::kRotate90:
        // Output is w x h; out(r, c) = in(c, w - 1 - r).
        cur = remap(cur, w, h, [&](std::size_t r, std::size_t c) { return std::pair{c, w - 1 - r}; });
        break;
      case AugmentOp::kBrightness: {
        const double delta = rng.uniform(-0.1, 0.1);
        for (auto& v : cur.image.vec()) v = quantize(v + delta);
        break;
      }
      case AugmentOp::kResizeCrop:
        cur = resize_crop(cur, rng);
        break;
    }
  }
  return cur;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

namespace {

Split parse_split(const std::string& s) {
  for (auto sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (s == split_name(sp)) return sp;
  }
  throw FormatError("unknown split '" + s + "'");
}

}  // namespace

GrayImage to_gray(const Tensor<double>& image) {
  if (image.rank() != 3 || image.dim(2) != 1) throw ShapeError("PNG persistence needs [H,W,1], got " + image.shape().str());
  GrayImage g{image.dim(0), image.dim(1), std::vector<std::uint8_t>(image.numel())};
  for (std::size_t i = 0; i < image.numel(); ++i) {
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
  }
  return g;
}

Tensor<double> from_gray(const GrayImage& g) {
  Tensor<double> t(Shape{g.height, g.width, 1});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = g.pixels[i] / 255.0;
  return t;
}

GrayImage mask_to_gray(const LabelMap& m) {
  GrayImage g{m.dim(0), m.dim(1), std::vector<std::uint8_t>(m.numel())};
  for (std::size_t i = 0; i < m.numel(); ++i) g.pixels[i] = m[i] ? 255 : 0;
  return g;
}

LabelMap gray_to_mask(const GrayImage& g) {
  LabelMap m = make_labels(g.height, g.width);
  for (std::size_t i = 0; i < m.numel(); ++i) m[i] = g.pixels[i] >= 128 ? 1 : 0;
  return m;
}

Dataset write_dataset(const std::filesystem::path& dir, const GenConfig& cfg, std::size_t n_train, std::size_t n_val,
                      std::size_t n_test) {
  cfg.validate();
  if (cfg.channels != 1) throw ConfigError("on-disk datasets are single-channel");
  if (n_train + n_val + n_test == 0) throw ConfigError("dataset needs at least one sample");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  Dataset ds;
  ds.config = cfg;
  ds.root = dir;
  nlohmann::json manifest;
  manifest["format"] = "freqclick-dataset 1";
  manifest["config"] = cfg.to_kv();
  manifest["samples"] = nlohmann::json::array();
  const std::size_t total = n_train + n_val + n_test;
  for (std::size_t i = 0; i < total; ++i) {
    const Split split = i < n_train ? Split::kTrain : i < n_train + n_val ? Split::kVal : Split::kTest;
    const Sample s = generate_one(cfg, i);
    ManifestEntry e{s.id, "images/" + s.id + ".png", "masks/" + s.id + ".png", split};
    write_png(dir / e.image_path, to_gray(s.image));
    write_png(dir / e.mask_path, mask_to_gray(s.gt));
    manifest["samples"].push_back({{"id", e.id}, {"image", e.image_path}, {"mask", e.mask_path}, {"split", split_name(split)}});
    ds.entries.push_back(std::move(e));
  }
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  f << manifest.dump(2) << '\n';
  return ds;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw FormatError("no manifest.json in " + dir.string());
  Dataset ds;
  ds.root = dir;
  try {
    const auto j = nlohmann::json::parse(f);
    if (j.at("format") != "freqclick-dataset 1") throw FormatError("unsupported dataset format");
    ds.config = GenConfig::from_kv(j.at("config").get<std::map<std::string, std::string>>());
    for (const auto& e : j.at("samples")) {
      ds.entries.push_back({e.at("id").get<std::string>(), e.at("image").get<std::string>(),
                            e.at("mask").get<std::string>(), parse_split(e.at("split").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
  return ds;
}

std::vector<Sample> load_split(const Dataset& ds, Split split) {
  std::vector<Sample> out;
  for (const auto& e : ds.entries) {
    if (e.split != split) continue;
    Sample s;
    s.id = e.id;
    s.image = from_gray(read_png(ds.root / e.image_path));
    s.gt = gray_to_mask(read_png(ds.root / e.mask_path));
    if (s.gt.dim(0) != s.image.dim(0) || s.gt.dim(1) != s.image.dim(1)) {
      throw FormatError("mask and image extents differ for " + e.id);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace freqclick
