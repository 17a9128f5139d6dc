#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "freqclick/autograd.h"
#include "freqclick/rng.h"
#include "freqclick/spectral.h"

namespace freqclick {

// How a spectral branch weights its spectrum.
enum class FilterMode {
  kPerBin,  // one learnable complex weight per frequency bin
  kScalar,  // one complex weight for the whole branch
};

struct NetConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t image_channels = 1;
  std::vector<std::size_t> encoder_dims{16, 32, 48, 64};
  std::size_t align_dim = 16;
  std::vector<std::size_t> decoder_dims{64, 32, 16, 8};
  int blocks_per_layer = 1;
  int max_gn_groups = 8;
  int ffn_ratio = 4;
  std::size_t refine_dim = 8;
  int num_classes = 2;
  // Enabled spectral branches in order (H,W), (H,C), (W,C). A disabled
  // branch passes its sub-map through unchanged.
  std::array<bool, 3> branches{true, true, true};
  FilterMode filter_mode = FilterMode::kPerBin;
  // Initialize depthwise kernels to a centered 1 instead of random weights.
  bool identity_dw_init = false;

  // image + positive clicks + negative clicks + previous mask
  std::size_t input_channels() const { return image_channels + 3; }
  // Decoder runs at 1/4 of the input resolution.
  std::size_t feature_height() const { return height / 4; }
  std::size_t feature_width() const { return width / 4; }

  // Throws ConfigError.
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  static NetConfig from_kv(const std::map<std::string, std::string>& kv);
};

int gn_groups(const NetConfig& cfg, std::size_t channels);

template <typename T>
struct FreqModuleParams {
  Parameter<T>* dw_weight = nullptr;  // [3,3,C/4]
  Parameter<T>* dw_bias = nullptr;    // [C/4]
  // Interleaved complex filters for (H,W), (H,C'), (W,C').
  std::array<Parameter<T>*, 3> filters{};
};

template <typename T>
struct FreqBlockParams {
  Parameter<T>* gn1_gamma = nullptr;
  Parameter<T>* gn1_beta = nullptr;
  Parameter<T>* gn2_gamma = nullptr;
  Parameter<T>* gn2_beta = nullptr;
  FreqModuleParams<T> freq;
  Parameter<T>* fc1_weight = nullptr;
  Parameter<T>* fc1_bias = nullptr;
  Parameter<T>* fc2_weight = nullptr;
  Parameter<T>* fc2_bias = nullptr;
};

template <typename T>
struct RefineHeadParams {
  Parameter<T>* conv_weight = nullptr;  // ConvBlock: 3x3
  Parameter<T>* conv_bias = nullptr;
  Parameter<T>* bn1_gamma = nullptr;
  Parameter<T>* bn1_beta = nullptr;
  Parameter<T>* bn1_mean = nullptr;
  Parameter<T>* bn1_var = nullptr;
  Parameter<T>* xconv3_weight = nullptr;  // XConvBlock: 3x3 then 1x1
  Parameter<T>* xconv3_bias = nullptr;
  Parameter<T>* xconv1_weight = nullptr;
  Parameter<T>* xconv1_bias = nullptr;
  Parameter<T>* bn2_gamma = nullptr;
  Parameter<T>* bn2_beta = nullptr;
  Parameter<T>* bn2_mean = nullptr;
  Parameter<T>* bn2_var = nullptr;
  Parameter<T>* proj_weight = nullptr;  // 1x1 to class logits
  Parameter<T>* proj_bias = nullptr;
};

// Registers FreqModule parameters for feature maps of H x W x C.
template <typename T>
FreqModuleParams<T> make_freq_module(ParamSet<T>& ps, const std::string& prefix, std::size_t h, std::size_t w,
                                     std::size_t c, const NetConfig& cfg, Rng& rng);
template <typename T>
FreqBlockParams<T> make_freq_block(ParamSet<T>& ps, const std::string& prefix, std::size_t h, std::size_t w,
                                   std::size_t c, const NetConfig& cfg, Rng& rng);
template <typename T>
RefineHeadParams<T> make_refine_head(ParamSet<T>& ps, const std::string& prefix, std::size_t c_in,
                                     const NetConfig& cfg, Rng& rng);

// Channel split into four quarters: depthwise conv on the first, spectral
// branches over (H,W), (H,C'), (W,C') on the rest, concatenated back.
// Throws ConfigError when C is not divisible by 4.
template <typename T>
Var<T> freq_module(Var<T> x, const FreqModuleParams<T>& p, const NetConfig& cfg);

// y = x + freq_module(GN1(x)); out = y + FFN(GN2(y)).
template <typename T>
Var<T> freq_block(Var<T> x, const FreqBlockParams<T>& p, const NetConfig& cfg);

// Logits at (out_h, out_w): XConvBlock(ConvBlock(x)) -> 1x1 projection ->
// bilinear resize.
template <typename T>
Var<T> refine_head(Var<T> x, const RefineHeadParams<T>& p, std::size_t out_h, std::size_t out_w, bool training);

// The full segmentation network and its parameters.
template <typename T>
class SegModel {
 public:
  SegModel(NetConfig cfg, std::uint64_t seed);

  const NetConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  // input: [B, H, W, input_channels]. Returns class logits [B, H, W, K].
  Var<T> forward(Tape<T>& tape, const Tensor<T>& input, bool training);

  // Softmax probabilities [B, H, W, K] in inference mode.
  Tensor<T> predict(const Tensor<T>& input);

  // Set every parameter (including buffers other than running variances) to 0.
  void zero_weights();

 private:
  void check_input(const Shape& s) const;

  NetConfig cfg_;
  ParamSet<T> params_;
  struct Stage {
    Parameter<T>* weight;
    Parameter<T>* bias;
  };
  std::vector<Stage> encoder_;
  std::vector<Stage> align_;
  std::vector<Stage> proj_;
  std::vector<std::vector<FreqBlockParams<T>>> layers_;
  RefineHeadParams<T> head_;
};

}  // namespace freqclick
