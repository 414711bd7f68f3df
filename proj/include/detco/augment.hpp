#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "detco/image.hpp"

namespace detco::augment {

/// Hyperparameters of the global (T_g) and jigsaw (T_l) view pipelines.
/// Defaults are the desk geometry: 64 px global views, a 120 px jigsaw
/// intermediate split into 40 px cells, and 32 px patches.
struct AugmentConfig {
  int global_side = 64;
  int patch_side = 32;
  int jigsaw_intermediate_side = 120;

  // Random-resized-crop area/aspect bounds.
  double global_crop_scale_min = 0.2;
  double global_crop_scale_max = 1.0;
  double crop_area_min = 0.6;  // jigsaw crop keeps at least this fraction of the image
  double crop_ratio_min = 3.0 / 4.0;
  double crop_ratio_max = 4.0 / 3.0;

  double flip_prob = 0.5;
  double jitter_prob = 0.8;
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  // Blur sigma range in pixels at a 224 px reference; scaled by side / 224.
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  int randaug_ops = 2;
  int randaug_magnitude = 9;  // of 30

  int cell_side() const { return jigsaw_intermediate_side / 3; }
  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// Full-scale geometry: 224 px global views, 255 px intermediate, 64 px patches.
  static AugmentConfig full_geometry();
};

struct GlobalView {
  Image pixels;
  CropRect source_crop;
  bool flipped = false;
};

struct GridCell {
  int row = 0;
  int col = 0;
  int side = 0;
  CropRect rect() const { return {row * side, col * side, side, side}; }
};

inline constexpr int kJigsawPatches = 9;

/// Nine shuffled jigsaw patches. Output position j holds a crop of source
/// cell permutation[j]; grid_cells[j] and crops[j] are in intermediate
/// (jigsaw_intermediate_side) coordinates.
struct PatchSet {
  std::vector<Image> patches;
  std::array<int, kJigsawPatches> permutation{};
  std::array<GridCell, kJigsawPatches> grid_cells{};
  std::array<CropRect, kJigsawPatches> crops{};
  CropRect source_crop;
};

struct ViewBundle {
  GlobalView i_q;
  GlobalView i_k;
  PatchSet p_q;
  PatchSet p_k;
  std::uint64_t seed = 0;
};

/// The RandAugment operation list, in policy order.
enum class RandAugOp {
  kIdentity,
  kAutoContrast,
  kEqualize,
  kRotate,
  kSolarize,
  kColor,
  kPosterize,
  kContrast,
  kBrightness,
  kSharpness,
  kShearX,
  kShearY,
  kTranslateX,
  kTranslateY,
};
inline constexpr int kNumRandAugOps = 14;
std::string randaug_op_name(RandAugOp op);

/// Applies one RandAugment op at `magnitude` (0..30); `negate` flips the
/// sign of signed ops.
Image apply_randaug_op(const Image& img, RandAugOp op, int magnitude, bool negate);

/// Random-resized-crop rectangle. Area fraction in [scale_min, scale_max],
/// aspect log-uniform in [ratio_min, ratio_max]; falls back to the largest
/// centered crop with a clamped aspect ratio after 10 rejected draws.
CropRect sample_resized_crop(int height, int width, double scale_min, double scale_max,
                             double ratio_min, double ratio_max, std::uint64_t seed);

GlobalView global_view(const Image& img, std::uint64_t seed, const AugmentConfig& cfg);
PatchSet jigsaw_views(const Image& img, std::uint64_t seed, const AugmentConfig& cfg);
/// Four views from four counter-derived sub-seeds of `seed`.
ViewBundle make_bundle(const Image& img, std::uint64_t seed, const AugmentConfig& cfg);

}  // namespace detco::augment
