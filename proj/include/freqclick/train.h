#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "freqclick/click_loop.h"
#include "freqclick/freqnet.h"
#include "freqclick/synth.h"

namespace freqclick {

struct TrainConfig {
  double lr = 2e-3;
  int epochs = 20;
  int batch = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  // Click simulation: share of samples trained from the zero-click state,
  // and the most clicks simulated on a corrupted previous mask.
  double zero_click_prob = 0.3;
  int max_sim_clicks = 3;
  int click_radius = 5;
  // Share of click-state samples whose previous mask comes from the model
  // being trained (its zero-click output refined by earlier simulated
  // clicks) instead of a corrupted gt.
  double iterative_prob = 0.5;
  // Random flip / rotate90 / brightness per sample.
  bool augment = true;

  // Throws ConfigError.
  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

// Adam with bias correction over the trainable parameters of a set.
template <typename T>
class Adam {
 public:
  Adam(ParamSet<T>& params, double lr, double beta1, double beta2, double eps);
  void step();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// One training example in the model's input layout.
struct TrainExample {
  Tensor<double> image;  // [H, W, C]
  ClickMaps clicks;
  LabelMap prev;
  LabelMap target;
};

// Simulated interaction state for a sample: the zero-click state, a
// corrupted previous mask with clicks on some of its error regions (earlier
// clicks already corrected), or, when `refiner` is given, the refiner's own
// trajectory after some simulated clicks. The target is always gt.
TrainExample simulate_example(const Sample& s, const TrainConfig& cfg, Rng& rng, const Refiner* refiner = nullptr);

// Stacks examples into [B, H, W, C + 3].
Tensor<float> make_batch(const std::vector<TrainExample>& xs);

struct TrainResult {
  std::vector<double> loss_curve;  // mean loss per epoch
  std::int64_t steps = 0;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

// Mini-batch training with per-pixel cross-entropy. Throws TrainingError
// (carrying the epoch) when the loss or any parameter becomes non-finite,
// and ContractError on an empty dataset.
TrainResult train(SegModel<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = nullptr);

// Mean zero-click IoU of the model's prediction against gt.
double zero_click_iou(SegModel<float>& model, const std::vector<Sample>& data);

// Share of pixels whose zero-click prediction matches gt.
double pixel_accuracy(SegModel<float>& model, const std::vector<Sample>& data);

}  // namespace freqclick
