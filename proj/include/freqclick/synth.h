#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "freqclick/acselect.h"
#include "freqclick/image_io.h"
#include "freqclick/rng.h"
#include "freqclick/tensor.h"

namespace freqclick {

enum class ShapeFamily : std::uint8_t { kEllipseUnion, kBlob, kRing };

const char* family_name(ShapeFamily f);
ShapeFamily parse_family(const std::string& s);

struct GenConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 1;
  ShapeFamily family = ShapeFamily::kEllipseUnion;
  int min_shapes = 2;
  int max_shapes = 4;
  double fg_mean = 0.65;
  double bg_mean = 0.35;
  double noise = 0.15;
  // Per-shape intensity offset drawn uniformly from [-contrast_jitter, contrast_jitter].
  double contrast_jitter = 0.25;
  // Amplitude of high-frequency boundary perturbation, relative to the radius.
  double jaggedness = 0.0;
  std::uint64_t seed = 0;

  // Throws ConfigError, including for an unlearnable setup (equal means, no noise).
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  static GenConfig from_kv(const std::map<std::string, std::string>& kv);
};

// A radially perturbed, rotated ellipse in pixel coordinates (row, col of
// the pixel index). In local axes (u along the rotated column axis, v along
// the rotated row axis) with rho^2 = (u/rx)^2 + (v/ry)^2 and phi = atan2(v/ry, u/rx),
// a pixel is inside iff rho <= 1 + sum_k amp_k cos(k phi + phase_k), and,
// for rings, rho >= inner * (same boundary factor).
struct ShapeSpec {
  double cy = 0;
  double cx = 0;
  double ry = 1;
  double rx = 1;
  double theta = 0;
  double inner = 0;  // 0 for filled shapes
  double intensity_offset = 0;
  std::vector<int> harmonics;
  std::vector<double> amplitudes;
  std::vector<double> phases;

  bool contains(double row, double col) const;
};

struct Sample {
  std::string id;
  Tensor<double> image;  // [H, W, C], values in [0,1] on the 1/255 grid
  LabelMap gt;           // [H, W]
};

// Shapes of sample `index` (deterministic in cfg.seed and index).
std::vector<ShapeSpec> sample_shapes(const GenConfig& cfg, std::size_t index);
LabelMap rasterize(const std::vector<ShapeSpec>& shapes, std::size_t height, std::size_t width);

Sample generate_one(const GenConfig& cfg, std::size_t index);
// Samples `first, first+1, ...`; each uses sub-seed derive_seed(seed, index).
std::vector<Sample> generate(const GenConfig& cfg, std::size_t n, std::size_t first = 0);

enum class AugmentOp : std::uint8_t { kFlip, kRotate90, kBrightness, kResizeCrop };

AugmentOp parse_augment_op(const std::string& s);

// Applies `ops` in order. Flip is horizontal; rotate90 turns a quarter
// counter-clockwise; brightness shifts the image only by a seeded offset in
// [-0.1, 0.1]; resize-crop rescales by a seeded factor in [0.75, 1.25]
// (bilinear for the image, nearest for the mask) and crops or pads back
// to the original extents. A resize-crop that would empty the mask is skipped.
Sample augment(const Sample& s, const std::vector<AugmentOp>& ops, std::uint64_t seed);

enum class Split : std::uint8_t { kTrain, kVal, kTest };
const char* split_name(Split s);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the manifest directory
  std::string mask_path;
  Split split = Split::kTrain;
};

struct Dataset {
  GenConfig config;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;
};

// Generates n_train + n_val + n_test samples (indices in that order) and
// writes PNGs plus manifest.json under `dir`. Single-channel only.
Dataset write_dataset(const std::filesystem::path& dir, const GenConfig& cfg, std::size_t n_train, std::size_t n_val,
                      std::size_t n_test);
// Throws FormatError on a malformed manifest.
Dataset read_dataset(const std::filesystem::path& dir);
std::vector<Sample> load_split(const Dataset& ds, Split split);

GrayImage to_gray(const Tensor<double>& image);
Tensor<double> from_gray(const GrayImage& g);
GrayImage mask_to_gray(const LabelMap& m);
// Pixels >= 128 are foreground.
LabelMap gray_to_mask(const GrayImage& g);

}  // namespace freqclick
