#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "freqclick/acselect.h"
#include "freqclick/freqnet.h"
#include "freqclick/synth.h"

namespace freqclick {

enum class ClickPolarity : std::uint8_t { kPositive, kNegative };

const char* click_polarity_name(ClickPolarity p);
ClickPolarity parse_click_polarity(const std::string& s);
// Positive for FN regions, negative for FP regions.
ClickPolarity polarity_for(Polarity region);

struct ClickRecord {
  int index = 0;  // 1-based
  Pixel position;
  ClickPolarity polarity = ClickPolarity::kPositive;
  int source_region_id = -1;  // -1 for clicks not derived from a region

  bool operator==(const ClickRecord&) const = default;
};

enum class RefinerMode : std::uint8_t { kModel, kOracle };

const char* refiner_name(RefinerMode m);
RefinerMode parse_refiner(const std::string& s);

struct EvalConfig {
  std::vector<double> iou_thresholds{0.80, 0.85, 0.90};
  int click_cap = 20;
  int click_radius = 5;
  RefinerMode refiner = RefinerMode::kOracle;
  SelectionPolicy policy;
  std::uint64_t seed = 0;
  // Worker threads for per-image evaluation; results do not depend on it.
  int workers = 1;

  // Throws ConfigError.
  void validate() const;
  // Workers are omitted: they never change a result.
  std::map<std::string, std::string> to_kv() const;
  // Reads every to_kv key plus eval.workers and ignores other keys.
  // Throws ConfigError.
  static EvalConfig from_kv(const std::map<std::string, std::string>& kv);
};

// |pred & gt| / |pred | gt|, 1 when both are empty. Throws ShapeError on
// extent mismatch.
double iou(const LabelMap& pred, const LabelMap& gt);

// Deepest pixel of `r` by chessboard distance to its complement, where
// pixels outside the h x w image count as complement. Ties go to the
// smallest row-major index.
ClickRecord place_click(const Region& r, std::size_t height, std::size_t width);

// Euclidean disk test used by every click map.
bool in_disk(const Pixel& center, int row, int col, int radius);

struct ClickMaps {
  LabelMap positive;
  LabelMap negative;
};

// Throws ContractError on an out-of-bounds click.
ClickMaps encode_clicks(const std::vector<ClickRecord>& clicks, std::size_t height, std::size_t width, int radius);

// Current segmentation of one image.
struct MaskState {
  ProbMap probs;
  LabelMap labels;
};

// Binary probability map that is one-hot on `labels`.
ProbMap one_hot(const LabelMap& labels);

// Runs a trained model on (image, clicks, previous mask). Inputs whose
// extents differ from the model's are resized bilinearly on the way in and
// the probabilities resized back on the way out. Thread-safe for concurrent
// calls: inference keeps no shared mutable state.
class ModelRunner {
 public:
  explicit ModelRunner(std::shared_ptr<SegModel<float>> model);

  ProbMap run(const Tensor<double>& image, const ClickMaps& clicks, const LabelMap& prev) const;
  const SegModel<float>& model() const { return *model_; }

 private:
  std::shared_ptr<SegModel<float>> model_;
};

// Produces the coarse mask and applies each click.
class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual RefinerMode mode() const = 0;
  virtual MaskState initial(const Tensor<double>& image) const = 0;
  // State after `clicks.back()` was appended. `gt` may be null when the
  // mode allows it.
  virtual MaskState refine(const Tensor<double>& image, const std::vector<ClickRecord>& clicks,
                           const MaskState& prev, const LabelMap* gt, int radius) const = 0;
};

// Sets labels to gt inside the newest click's disk (one-hot probabilities
// there). The coarse mask is empty unless a model supplies it.
class OracleRefiner : public Refiner {
 public:
  explicit OracleRefiner(std::shared_ptr<const ModelRunner> coarse = nullptr) : coarse_(std::move(coarse)) {}
  RefinerMode mode() const override { return RefinerMode::kOracle; }
  MaskState initial(const Tensor<double>& image) const override;
  // Throws ContractError without gt.
  MaskState refine(const Tensor<double>& image, const std::vector<ClickRecord>& clicks, const MaskState& prev,
                   const LabelMap* gt, int radius) const override;

 private:
  std::shared_ptr<const ModelRunner> coarse_;
};

// Re-runs the model with the updated click maps and previous mask, then
// freezes pixels the click should not touch. With gt: only pixels inside
// the bounding box (dilated by the radius) of some current error region may
// change. Without gt: only connected components of changed pixels that meet
// the newest click's disk may change.
class ModelRefiner : public Refiner {
 public:
  explicit ModelRefiner(std::shared_ptr<const ModelRunner> runner) : runner_(std::move(runner)) {}
  RefinerMode mode() const override { return RefinerMode::kModel; }
  MaskState initial(const Tensor<double>& image) const override;
  MaskState refine(const Tensor<double>& image, const std::vector<ClickRecord>& clicks, const MaskState& prev,
                   const LabelMap* gt, int radius) const override;

 private:
  std::shared_ptr<const ModelRunner> runner_;
};

struct Trajectory {
  std::string image_id;
  double initial_iou = 0;
  std::vector<double> ious;  // IoU after click k at index k-1
  std::vector<ClickRecord> clicks;
  bool converged = false;

  // IoU after exactly k clicks; the last value carries forward past the end.
  double iou_after(int k) const;
};

struct NocResult {
  int noc = 0;
  bool failed = false;
};

// First 1-based click index whose IoU reaches t; `cap` with failed = true
// when none does. An already-perfect initial mask counts as 1 click.
NocResult noc_at(const std::vector<double>& ious, double initial_iou, double t, int cap);

// Loop state for one image, shared by the evaluator and the service.
class ClickSession {
 public:
  ClickSession(const Refiner& refiner, Tensor<double> image, std::optional<LabelMap> gt, int radius);

  const MaskState& state() const { return state_; }
  const std::vector<ClickRecord>& clicks() const { return clicks_; }
  const std::vector<double>& ious() const { return ious_; }
  const Tensor<double>& image() const { return image_; }
  const std::optional<LabelMap>& gt() const { return gt_; }
  std::optional<double> current_iou() const;

  // Append a click (index assigned here) and refine. Throws ContractError
  // when the position is out of bounds; state is then unchanged.
  const MaskState& click(Pixel position, ClickPolarity polarity, int source_region_id = -1);

  // Scored regions of the current mask against gt (ContractError without gt).
  std::vector<Region> regions(const SelectionPolicy& policy, Rng& rng, std::size_t& chosen) const;

 private:
  const Refiner& refiner_;
  Tensor<double> image_;
  std::optional<LabelMap> gt_;
  int radius_;
  MaskState state_;
  std::vector<ClickRecord> clicks_;
  std::vector<double> ious_;
};

// Robot-user loop for one image. `image_index` seeds the Random policy.
Trajectory run_trajectory(const Sample& sample, const Refiner& refiner, const EvalConfig& cfg,
                          std::size_t image_index);

// Masks after each click of a recorded sequence, starting with the coarse mask.
std::vector<LabelMap> replay(const Tensor<double>& image, const LabelMap* gt, const std::vector<ClickRecord>& clicks,
                             const Refiner& refiner, int radius);

struct EvalSummary {
  std::string policy;
  std::size_t images = 0;
  std::vector<double> thresholds;
  std::vector<double> mean_noc;
  std::vector<int> failures;
  std::vector<double> miou;  // mIoU@k at index k-1, k = 1..cap
};

struct EvalReport {
  EvalConfig config;
  std::vector<Trajectory> trajectories;

  EvalSummary summary() const;
  // One row per click: image_id,click,row,col,polarity,region_id,iou
  void write_trajectories_csv(std::ostream& os) const;
  // Human-readable key/value summary echoing `run_config` and the seed.
  void write_summary(std::ostream& os, const std::map<std::string, std::string>& run_config) const;
};

// Throws ContractError on an empty dataset.
EvalReport evaluate(const std::vector<Sample>& dataset, const Refiner& refiner, const EvalConfig& cfg);

}  // namespace freqclick
