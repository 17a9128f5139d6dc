#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "freqclick/rng.h"
#include "freqclick/tensor.h"

namespace freqclick {

// Per-pixel class probabilities [H, W, K], K >= 2. Class 1 is foreground.
using ProbMap = Tensor<double>;
// Binary labels [H, W] with values 0 (background) and 1 (foreground).
using LabelMap = Tensor<std::uint8_t>;

LabelMap make_labels(std::size_t h, std::size_t w);
// Argmax over classes; ties resolve to the lower class index.
LabelMap argmax_labels(const ProbMap& probs);
// Throws ContractError unless every pixel sums to 1 within `tol` and lies in [0,1].
void check_probmap(const ProbMap& probs, double tol = 1e-6);

enum class Polarity : std::uint8_t {
  kFP,  // predicted foreground, truly background: fixed by a negative click
  kFN,  // predicted background, truly foreground: fixed by a positive click
};

const char* polarity_name(Polarity p);

struct Pixel {
  int row = 0;
  int col = 0;

  bool operator==(const Pixel&) const = default;
};

struct RegionScores {
  double mpe = 0;
  double ape = 0;
  double rgu = 0;
  // Largest 1 - max_c p over the region; drives the least-confidence baseline.
  double lc = 0;
  double mpe_n = 0;
  double ape_n = 0;
  double rgu_n = 0;
  double rs = 0;
};

// One 8-connected component of mislabeled pixels sharing a polarity.
struct Region {
  int id = 0;
  Polarity polarity = Polarity::kFP;
  std::vector<Pixel> pixels;  // row-major order
  RegionScores scores;

  std::size_t size() const { return pixels.size(); }
};

// Components of {pred != gt} under 8-connectivity, split by polarity so each
// region is uniformly FP or FN. Ids follow the row-major order of each
// region's first pixel. Throws ShapeError on extent mismatch.
std::vector<Region> extract_regions(const LabelMap& pred, const LabelMap& gt);

// -sum_c p_c ln p_c with 0 ln 0 = 0.
double pixel_entropy(std::span<const double> p);

// Throw ContractError on an empty region.
double mpe(const Region& r, const ProbMap& probs);
double ape(const Region& r, const ProbMap& probs);
double least_confidence(const Region& r, const ProbMap& probs);

inline constexpr double kRguEps = 1e-6;

// 1 - ln(clamp(|P_e - mean P|, 1e-6, 1)) over foreground probabilities P,
// with P_e the max for FP regions and the min for FN regions. Binary maps
// only (ContractError otherwise).
double rgu(const Region& r, const ProbMap& probs);

struct ScoreWeights {
  double w_a = 0.35;  // MPE
  double w_b = 0.35;  // APE
  double w_c = 0.30;  // RGU

  // Throws ConfigError on a negative weight or a zero sum.
  void validate() const;
};

// Which metrics contribute to rs; a disabled metric has weight 0.
struct MetricSet {
  bool mpe = true;
  bool ape = true;
  bool rgu = true;

  bool any() const { return mpe || ape || rgu; }
};

struct ScoreOptions {
  ScoreWeights weights;
  MetricSet metrics;
  // Min-max normalize each metric across the candidates before weighting.
  bool normalize = true;
};

// Fill mpe, ape, rgu and lc of every region.
void compute_metrics(std::vector<Region>& regions, const ProbMap& probs);

// Fill the normalized metrics and rs from the raw ones. A metric that is
// constant across the candidates normalizes to 0. Without normalization the
// *_n fields hold the raw values.
void region_score(std::vector<Region>& regions, const ScoreOptions& opt = {});

enum class PolicyKind : std::uint8_t { kAcSelect, kRandom, kEntropy, kLeastConfidence, kLargestRegion };

const char* policy_name(PolicyKind k);
// Accepts acselect, random, entropy, least-confidence, largest-region.
PolicyKind parse_policy(const std::string& s);

struct SelectionPolicy {
  PolicyKind kind = PolicyKind::kAcSelect;
  std::uint64_t seed = 0;
  ScoreOptions score;
  // Entropy baseline ranks by region entropy sum instead of mean.
  bool entropy_sum = false;
};

// Index into `regions` of the chosen region. Regions must carry metrics and
// rs. Ties go to the smallest region id. `rng` is consumed only by Random.
// Throws ContractError on an empty list.
std::size_t select(const std::vector<Region>& regions, const SelectionPolicy& policy, Rng& rng);

// Convenience: extract, score, and select in one pass. Returns the scored
// regions and writes the chosen index into `chosen` (untouched if empty).
std::vector<Region> score_and_select(const LabelMap& pred, const LabelMap& gt, const ProbMap& probs,
                                     const SelectionPolicy& policy, Rng& rng, std::size_t& chosen);

// CSV with header: image_id,region_id,polarity,size,mpe,ape,rgu,rs,selected
void write_region_csv_header(std::ostream& os);
void write_region_csv(std::ostream& os, const std::string& image_id, const std::vector<Region>& regions,
                      int selected_id);

}  // namespace freqclick
