#include "freqclick/freqnet.h"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace freqclick {

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad dimension list '" + s + "'");
    }
  }
  return out;
}

template <typename T>
Tensor<T> random_normal(Shape s, double stddev, Rng& rng) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

template <typename T>
Parameter<T>& conv_weight(ParamSet<T>& ps, const std::string& name, std::size_t kh, std::size_t kw, std::size_t cin,
                          std::size_t cout, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(kh * kw * cin));
  return ps.add(name, random_normal<T>(Shape({kh, kw, cin, cout}, std::vector<Axis>(4, Axis::kNone)), std, rng));
}

template <typename T>
Parameter<T>& dense_weight(ParamSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng,
                           double gain = 2.0) {
  return ps.add(name, random_normal<T>(Shape({cin, cout}), std::sqrt(gain / static_cast<double>(cin)), rng));
}

template <typename T>
Parameter<T>& zeros(ParamSet<T>& ps, const std::string& name, std::size_t n, bool trainable = true) {
  return ps.add(name, Tensor<T>(Shape{n}), trainable);
}

template <typename T>
Parameter<T>& ones(ParamSet<T>& ps, const std::string& name, std::size_t n, bool trainable = true) {
  return ps.add(name, Tensor<T>(Shape{n}, T(1)), trainable);
}

}  // namespace

void NetConfig::validate() const {
  if (height < 16 || width < 16 || height % 16 != 0 || width % 16 != 0) {
    throw ConfigError("input extents must be positive multiples of 16");
  }
  if (image_channels < 1) throw ConfigError("image_channels must be >= 1");
  if (encoder_dims.size() != 4) throw ConfigError("encoder needs exactly 4 stage dims");
  if (decoder_dims.size() != 4) throw ConfigError("decoder needs exactly 4 Freq layers");
  for (auto d : encoder_dims) {
    if (d == 0) throw ConfigError("encoder dims must be positive");
  }
  for (auto d : decoder_dims) {
    if (d == 0 || d % 4 != 0) throw ConfigError("decoder dims must be positive multiples of 4");
  }
  if (align_dim == 0) throw ConfigError("align_dim must be positive");
  if (blocks_per_layer < 1) throw ConfigError("blocks_per_layer must be >= 1");
  if (max_gn_groups < 1) throw ConfigError("max_gn_groups must be >= 1");
  if (ffn_ratio < 1) throw ConfigError("ffn_ratio must be >= 1");
  if (refine_dim == 0) throw ConfigError("refine_dim must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

std::map<std::string, std::string> NetConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["net.height"] = std::to_string(height);
  kv["net.width"] = std::to_string(width);
  kv["net.image_channels"] = std::to_string(image_channels);
  kv["net.encoder_dims"] = join(encoder_dims);
  kv["net.align_dim"] = std::to_string(align_dim);
  kv["net.decoder_dims"] = join(decoder_dims);
  kv["net.blocks_per_layer"] = std::to_string(blocks_per_layer);
  kv["net.max_gn_groups"] = std::to_string(max_gn_groups);
  kv["net.ffn_ratio"] = std::to_string(ffn_ratio);
  kv["net.refine_dim"] = std::to_string(refine_dim);
  kv["net.num_classes"] = std::to_string(num_classes);
  kv["net.branches"] = std::string(branches[0] ? "1" : "0") + (branches[1] ? "1" : "0") + (branches[2] ? "1" : "0");
  kv["net.filter_mode"] = filter_mode == FilterMode::kPerBin ? "per-bin" : "scalar";
  kv["net.identity_dw_init"] = identity_dw_init ? "1" : "0";
  return kv;
}

NetConfig NetConfig::from_kv(const std::map<std::string, std::string>& kv) {
  NetConfig c;
  auto get = [&](const char* k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto num = [&](const char* k, auto& dst) {
    if (const auto* v = get(k)) {
      try {
        dst = static_cast<std::remove_reference_t<decltype(dst)>>(std::stoll(*v));
      } catch (const std::exception&) {
        throw ConfigError(std::string("bad value for ") + k + ": '" + *v + "'");
      }
    }
  };
  num("net.height", c.height);
  num("net.width", c.width);
  num("net.image_channels", c.image_channels);
  if (const auto* v = get("net.encoder_dims")) c.encoder_dims = split_dims(*v);
  num("net.align_dim", c.align_dim);
  if (const auto* v = get("net.decoder_dims")) c.decoder_dims = split_dims(*v);
  num("net.blocks_per_layer", c.blocks_per_layer);
  num("net.max_gn_groups", c.max_gn_groups);
  num("net.ffn_ratio", c.ffn_ratio);
  num("net.refine_dim", c.refine_dim);
  num("net.num_classes", c.num_classes);
  if (const auto* v = get("net.branches")) {
    if (v->size() != 3 || v->find_first_not_of("01") != std::string::npos) {
      throw ConfigError("net.branches must be three 0/1 flags, got '" + *v + "'");
    }
    for (int i = 0; i < 3; ++i) c.branches[i] = (*v)[i] == '1';
  }
  if (const auto* v = get("net.filter_mode")) {
    if (*v == "per-bin") c.filter_mode = FilterMode::kPerBin;
    else if (*v == "scalar") c.filter_mode = FilterMode::kScalar;
    else throw ConfigError("net.filter_mode must be per-bin or scalar");
  }
  if (const auto* v = get("net.identity_dw_init")) c.identity_dw_init = *v == "1";
  c.validate();
  return c;
}

int gn_groups(const NetConfig& cfg, std::size_t channels) {
  int g = std::min<int>(cfg.max_gn_groups, static_cast<int>(channels));
  while (channels % static_cast<std::size_t>(g) != 0) --g;
  return g;
}

template <typename T>
FreqModuleParams<T> make_freq_module(ParamSet<T>& ps, const std::string& prefix, std::size_t h, std::size_t w,
                                     std::size_t c, const NetConfig& cfg, Rng& rng) {
  if (c % 4 != 0) throw ConfigError("FreqModule channel count " + std::to_string(c) + " is not divisible by 4");
  const std::size_t q = c / 4;
  FreqModuleParams<T> p;
  Tensor<T> dw(Shape{3, 3, q});
  if (cfg.identity_dw_init) {
    for (std::size_t ch = 0; ch < q; ++ch) dw.at({1, 1, ch}) = T(1);
  } else {
    dw = random_normal<T>(Shape{3, 3, q}, std::sqrt(2.0 / 9.0), rng);
  }
  p.dw_weight = &ps.add(prefix + ".dw.weight", std::move(dw));
  p.dw_bias = &zeros(ps, prefix + ".dw.bias", q);
  const Shape sub{h, w, q};
  const char* names[3] = {".filter_hw", ".filter_hc", ".filter_wc"};
  const AxisPair pairs[3] = {kAxesHW, kAxesHC, kAxesWC};
  for (int i = 0; i < 3; ++i) {
    std::vector<std::size_t> dims = cfg.filter_mode == FilterMode::kPerBin ? filter_shape(sub, pairs[i]).dims()
                                                                          : std::vector<std::size_t>{1, 1, 1};
    dims.push_back(2);
    Tensor<T> f(Shape(dims, std::vector<Axis>(4, Axis::kNone)));
    for (std::size_t k = 0; k < f.numel(); k += 2) f[k] = T(1);
    p.filters[i] = &ps.add(prefix + names[i], std::move(f), true, true);
  }
  return p;
}

template <typename T>
FreqBlockParams<T> make_freq_block(ParamSet<T>& ps, const std::string& prefix, std::size_t h, std::size_t w,
                                   std::size_t c, const NetConfig& cfg, Rng& rng) {
  FreqBlockParams<T> p;
  p.gn1_gamma = &ones(ps, prefix + ".gn1.gamma", c);
  p.gn1_beta = &zeros(ps, prefix + ".gn1.beta", c);
  p.freq = make_freq_module(ps, prefix + ".freq", h, w, c, cfg, rng);
  p.gn2_gamma = &ones(ps, prefix + ".gn2.gamma", c);
  p.gn2_beta = &zeros(ps, prefix + ".gn2.beta", c);
  const std::size_t hidden = c * static_cast<std::size_t>(cfg.ffn_ratio);
  p.fc1_weight = &dense_weight(ps, prefix + ".ffn.fc1.weight", c, hidden, rng);
  p.fc1_bias = &zeros(ps, prefix + ".ffn.fc1.bias", hidden);
  p.fc2_weight = &dense_weight(ps, prefix + ".ffn.fc2.weight", hidden, c, rng, 0.1);
  p.fc2_bias = &zeros(ps, prefix + ".ffn.fc2.bias", c);
  return p;
}

template <typename T>
RefineHeadParams<T> make_refine_head(ParamSet<T>& ps, const std::string& prefix, std::size_t c_in,
                                     const NetConfig& cfg, Rng& rng) {
  const std::size_t r = cfg.refine_dim;
  RefineHeadParams<T> p;
  p.conv_weight = &conv_weight(ps, prefix + ".conv.weight", 3, 3, c_in, r, rng);
  p.conv_bias = &zeros(ps, prefix + ".conv.bias", r);
  p.bn1_gamma = &ones(ps, prefix + ".bn1.gamma", r);
  p.bn1_beta = &zeros(ps, prefix + ".bn1.beta", r);
  p.bn1_mean = &zeros(ps, prefix + ".bn1.running_mean", r, false);
  p.bn1_var = &ones(ps, prefix + ".bn1.running_var", r, false);
  p.xconv3_weight = &conv_weight(ps, prefix + ".xconv3.weight", 3, 3, r, r, rng);
  p.xconv3_bias = &zeros(ps, prefix + ".xconv3.bias", r);
  p.xconv1_weight = &conv_weight(ps, prefix + ".xconv1.weight", 1, 1, r, r, rng);
  p.xconv1_bias = &zeros(ps, prefix + ".xconv1.bias", r);
  p.bn2_gamma = &ones(ps, prefix + ".bn2.gamma", r);
  p.bn2_beta = &zeros(ps, prefix + ".bn2.beta", r);
  p.bn2_mean = &zeros(ps, prefix + ".bn2.running_mean", r, false);
  p.bn2_var = &ones(ps, prefix + ".bn2.running_var", r, false);
  p.proj_weight = &conv_weight(ps, prefix + ".proj.weight", 1, 1, r, static_cast<std::size_t>(cfg.num_classes), rng);
  p.proj_bias = &zeros(ps, prefix + ".proj.bias", static_cast<std::size_t>(cfg.num_classes));
  return p;
}

template <typename T>
Var<T> freq_module(Var<T> x, const FreqModuleParams<T>& p, const NetConfig& cfg) {
  Tape<T>& tape = *x.tape;
  const std::size_t c = x.shape()[x.shape().rank() - 1];
  if (c % 4 != 0) throw ConfigError("FreqModule channel count " + std::to_string(c) + " is not divisible by 4");
  const std::size_t q = c / 4;
  std::vector<Var<T>> parts;
  parts.reserve(4);
  parts.push_back(ag::depthwise_conv2d(ag::slice_channels(x, 0, q), tape.param(*p.dw_weight), tape.param(*p.dw_bias)));
  const AxisPair pairs[3] = {kAxesHW, kAxesHC, kAxesWC};
  for (std::size_t i = 0; i < 3; ++i) {
    auto sub = ag::slice_channels(x, (i + 1) * q, (i + 2) * q);
    parts.push_back(cfg.branches[i] ? ag::spectral_branch(sub, pairs[i], tape.param(*p.filters[i])) : sub);
  }
  return ag::concat_channels(parts);
}

template <typename T>
Var<T> freq_block(Var<T> x, const FreqBlockParams<T>& p, const NetConfig& cfg) {
  Tape<T>& tape = *x.tape;
  const std::size_t c = x.shape()[x.shape().rank() - 1];
  if (p.gn1_gamma->value.numel() != c) {
    throw ShapeError("Freq block built for C=" + std::to_string(p.gn1_gamma->value.numel()) + ", input is " +
                     x.shape().str());
  }
  const int groups = gn_groups(cfg, c);
  const T eps = static_cast<T>(1e-5);
  auto n1 = ag::group_norm(x, tape.param(*p.gn1_gamma), tape.param(*p.gn1_beta), groups, eps);
  auto y = ag::add(x, freq_module(n1, p.freq, cfg));
  auto n2 = ag::group_norm(y, tape.param(*p.gn2_gamma), tape.param(*p.gn2_beta), groups, eps);
  auto hidden = ag::relu(ag::dense(n2, tape.param(*p.fc1_weight), tape.param(*p.fc1_bias)));
  auto ffn = ag::dense(hidden, tape.param(*p.fc2_weight), tape.param(*p.fc2_bias));
  return ag::add(y, ffn);
}

template <typename T>
Var<T> refine_head(Var<T> x, const RefineHeadParams<T>& p, std::size_t out_h, std::size_t out_w, bool training) {
  Tape<T>& tape = *x.tape;
  ag::BatchNormOptions bn;
  bn.training = training;
  auto h = ag::conv2d(x, tape.param(*p.conv_weight), tape.param(*p.conv_bias), 1, 1);
  h = ag::relu(ag::batch_norm(h, tape.param(*p.bn1_gamma), tape.param(*p.bn1_beta), *p.bn1_mean, *p.bn1_var, bn));
  h = ag::conv2d(h, tape.param(*p.xconv3_weight), tape.param(*p.xconv3_bias), 1, 1);
  h = ag::conv2d(h, tape.param(*p.xconv1_weight), tape.param(*p.xconv1_bias), 1, 0);
  h = ag::relu(ag::batch_norm(h, tape.param(*p.bn2_gamma), tape.param(*p.bn2_beta), *p.bn2_mean, *p.bn2_var, bn));
  auto logits = ag::conv2d(h, tape.param(*p.proj_weight), tape.param(*p.proj_bias), 1, 0);
  return ag::resize_bilinear(logits, out_h, out_w);
}

template <typename T>
SegModel<T>::SegModel(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  std::size_t cin = cfg_.input_channels();
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string n = "enc.stage" + std::to_string(s);
    const std::size_t cout = cfg_.encoder_dims[s];
    auto& w = conv_weight(params_, n + ".weight", 3, 3, cin, cout, rng);
    auto& b = zeros(params_, n + ".bias", cout);
    encoder_.push_back({&w, &b});
    cin = cout;
  }
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string n = "align.stage" + std::to_string(s);
    auto& w = dense_weight(params_, n + ".weight", cfg_.encoder_dims[s], cfg_.align_dim, rng, 1.0);
    auto& b = zeros(params_, n + ".bias", cfg_.align_dim);
    align_.push_back({&w, &b});
  }
  const std::size_t fh = cfg_.feature_height(), fw = cfg_.feature_width();
  std::size_t c = 4 * cfg_.align_dim;
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string n = "dec.layer" + std::to_string(l);
    const std::size_t d = cfg_.decoder_dims[l];
    auto& w = dense_weight(params_, n + ".proj.weight", c, d, rng, 1.0);
    auto& b = zeros(params_, n + ".proj.bias", d);
    proj_.push_back({&w, &b});
    std::vector<FreqBlockParams<T>> blocks;
    for (int k = 0; k < cfg_.blocks_per_layer; ++k) {
      blocks.push_back(make_freq_block(params_, n + ".block" + std::to_string(k), fh, fw, d, cfg_, rng));
    }
    layers_.push_back(std::move(blocks));
    c = d;
  }
  head_ = make_refine_head(params_, "head", c, cfg_, rng);
}

template <typename T>
void SegModel<T>::check_input(const Shape& s) const {
  if (s.rank() != 4) throw ShapeError("model input must be [B,H,W,C], got " + s.str());
  if (s[3] != cfg_.input_channels()) {
    throw ConfigError("model expects " + std::to_string(cfg_.input_channels()) + " input channels, got " +
                      std::to_string(s[3]));
  }
  if (s[1] != cfg_.height || s[2] != cfg_.width) {
    throw ShapeError("model built for " + std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width) +
                     " inputs, got " + s.str());
  }
}

template <typename T>
Var<T> SegModel<T>::forward(Tape<T>& tape, const Tensor<T>& input, bool training) {
  check_input(input.shape());
  const std::size_t fh = cfg_.feature_height(), fw = cfg_.feature_width();
  auto h = tape.constant(input);
  std::vector<Var<T>> aligned;
  for (std::size_t s = 0; s < 4; ++s) {
    h = ag::relu(ag::conv2d(h, tape.param(*encoder_[s].weight), tape.param(*encoder_[s].bias), 2, 1));
    auto a = ag::dense(h, tape.param(*align_[s].weight), tape.param(*align_[s].bias));
    aligned.push_back(a.shape()[1] == fh && a.shape()[2] == fw ? a : ag::resize_bilinear(a, fh, fw));
  }
  auto x = ag::concat_channels(aligned);
  for (std::size_t l = 0; l < 4; ++l) {
    x = ag::dense(x, tape.param(*proj_[l].weight), tape.param(*proj_[l].bias));
    for (const auto& block : layers_[l]) x = freq_block(x, block, cfg_);
  }
  return refine_head(x, head_, cfg_.height, cfg_.width, training);
}

template <typename T>
Tensor<T> SegModel<T>::predict(const Tensor<T>& input) {
  Tape<T> tape(false);
  auto logits = forward(tape, input, false);
  return softmax(logits.value());
}

template <typename T>
void SegModel<T>::zero_weights() {
  for (auto* p : params_.all()) {
    const bool is_var = p->name.find("running_var") != std::string::npos;
    std::fill(p->value.vec().begin(), p->value.vec().end(), is_var ? T(1) : T(0));
  }
}

#define FREQCLICK_FREQNET_INSTANTIATE(T)                                                                          \
  template FreqModuleParams<T> make_freq_module(ParamSet<T>&, const std::string&, std::size_t, std::size_t,       \
                                                std::size_t, const NetConfig&, Rng&);                             \
  template FreqBlockParams<T> make_freq_block(ParamSet<T>&, const std::string&, std::size_t, std::size_t,         \
                                              std::size_t, const NetConfig&, Rng&);                               \
  template RefineHeadParams<T> make_refine_head(ParamSet<T>&, const std::string&, std::size_t, const NetConfig&,  \
                                                Rng&);                                                            \
  template Var<T> freq_module(Var<T>, const FreqModuleParams<T>&, const NetConfig&);                              \
  template Var<T> freq_block(Var<T>, const FreqBlockParams<T>&, const NetConfig&);                                \
  template Var<T> refine_head(Var<T>, const RefineHeadParams<T>&, std::size_t, std::size_t, bool);                \
  template class SegModel<T>;

FREQCLICK_FREQNET_INSTANTIATE(float)
FREQCLICK_FREQNET_INSTANTIATE(double)

}  // namespace freqclick
