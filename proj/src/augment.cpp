#include "detco/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "detco/errors.hpp"
#include "detco/rng.hpp"

namespace detco::augment {
namespace {

constexpr double kBlurReferenceSide = 224.0;
constexpr double kMaxMagnitude = 30.0;

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("augment." + key + ": " + what);
}

void require_prob(double p, const std::string& key) {
  require(p >= 0.0 && p <= 1.0, key, "expected probability in [0,1], got " + std::to_string(p));
}

Image color_jitter(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  std::array<int, 4> order{0, 1, 2, 3};
  std::shuffle(order.begin(), order.end(), rng.engine());
  const double b = rng.uniform(std::max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness);
  const double c = rng.uniform(std::max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast);
  const double s = rng.uniform(std::max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation);
  const double h = rng.uniform(-cfg.hue, cfg.hue);
  Image out = img;
  for (int op : order) {
    switch (op) {
      case 0: out = adjust_brightness(out, static_cast<float>(b)); break;
      case 1: out = adjust_contrast(out, static_cast<float>(c)); break;
      case 2: out = adjust_saturation(out, static_cast<float>(s)); break;
      default: out = adjust_hue(out, static_cast<float>(h)); break;
    }
  }
  return out;
}

Image maybe_blur(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  const bool apply = rng.bernoulli(cfg.blur_prob);
  const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  if (!apply) return img;
  return gaussian_blur(img, sigma * img.width() / kBlurReferenceSide);
}

// Flip, color jitter and blur share hyperparameters between the global and
// jigsaw pipelines; each view draws its own values.
Image photometric(Image img, const AugmentConfig& cfg, Rng& rng, bool* flipped) {
  const bool flip = rng.bernoulli(cfg.flip_prob);
  if (flip) img = flip_horizontal(img);
  if (flipped) *flipped = flip;
  if (rng.bernoulli(cfg.jitter_prob)) img = color_jitter(img, cfg, rng);
  return img;
}

}  // namespace

void AugmentConfig::validate() const {
  require(global_side > 0, "global_side", "must be positive");
  require(patch_side > 0, "patch_side", "must be positive");
  require(jigsaw_intermediate_side > 0 && jigsaw_intermediate_side % 3 == 0,
          "jigsaw_intermediate_side", "must be a positive multiple of 3, got " +
                                          std::to_string(jigsaw_intermediate_side));
  require(patch_side <= cell_side(), "patch_side",
          "must not exceed the grid cell side " + std::to_string(cell_side()));
  require(global_crop_scale_min > 0.0 && global_crop_scale_min <= global_crop_scale_max &&
              global_crop_scale_max <= 1.0,
          "global_crop_scale_min", "expected 0 < min <= max <= 1");
  require(crop_area_min > 0.0 && crop_area_min <= 1.0, "crop_area_min", "expected value in (0,1]");
  require(crop_ratio_min > 0.0 && crop_ratio_min <= crop_ratio_max, "crop_ratio_min",
          "expected 0 < min <= max");
  require_prob(flip_prob, "flip_prob");
  require_prob(jitter_prob, "jitter_prob");
  require_prob(grayscale_prob, "grayscale_prob");
  require_prob(blur_prob, "blur_prob");
  require(brightness >= 0.0, "brightness", "must be non-negative");
  require(contrast >= 0.0, "contrast", "must be non-negative");
  require(saturation >= 0.0, "saturation", "must be non-negative");
  require(hue >= 0.0 && hue <= 0.5, "hue", "expected value in [0, 0.5]");
  require(blur_sigma_min >= 0.0 && blur_sigma_min <= blur_sigma_max, "blur_sigma_min",
          "expected 0 <= min <= max");
  require(randaug_ops >= 0, "randaug_ops", "must be non-negative");
  require(randaug_magnitude >= 0 && randaug_magnitude <= 30, "randaug_magnitude",
          "expected value in [0, 30]");
}

AugmentConfig AugmentConfig::full_geometry() {
  AugmentConfig cfg;
  cfg.global_side = 224;
  cfg.jigsaw_intermediate_side = 255;
  cfg.patch_side = 64;
  return cfg;
}

std::string randaug_op_name(RandAugOp op) {
  static const char* names[] = {"Identity",   "AutoContrast", "Equalize",   "Rotate",   "Solarize",
                                "Color",      "Posterize",    "Contrast",   "Brightness", "Sharpness",
                                "ShearX",     "ShearY",       "TranslateX", "TranslateY"};
  return names[static_cast<int>(op)];
}

Image apply_randaug_op(const Image& img, RandAugOp op, int magnitude, bool negate) {
  const double level = magnitude / kMaxMagnitude;
  const double sign = negate ? -1.0 : 1.0;
  switch (op) {
    case RandAugOp::kIdentity: return img;
    case RandAugOp::kAutoContrast: return autocontrast(img);
    case RandAugOp::kEqualize: return equalize(img);
    case RandAugOp::kRotate: return rotate(img, sign * 30.0 * level);
    case RandAugOp::kSolarize: return solarize(img, static_cast<float>(1.0 - level));
    case RandAugOp::kColor: return adjust_saturation(img, static_cast<float>(1.0 + sign * 0.9 * level));
    case RandAugOp::kPosterize:
      return posterize(img, 8 - static_cast<int>(std::lround(magnitude / (kMaxMagnitude / 4.0))));
    case RandAugOp::kContrast: return adjust_contrast(img, static_cast<float>(1.0 + sign * 0.9 * level));
    case RandAugOp::kBrightness:
      return adjust_brightness(img, static_cast<float>(1.0 + sign * 0.9 * level));
    case RandAugOp::kSharpness: return adjust_sharpness(img, static_cast<float>(1.0 + sign * 0.9 * level));
    case RandAugOp::kShearX: return shear_x(img, sign * 0.3 * level);
    case RandAugOp::kShearY: return shear_y(img, sign * 0.3 * level);
    case RandAugOp::kTranslateX: return translate(img, sign * (150.0 / 331.0) * img.width() * level, 0.0);
    case RandAugOp::kTranslateY: return translate(img, 0.0, sign * (150.0 / 331.0) * img.height() * level);
  }
  return img;
}

CropRect sample_resized_crop(int height, int width, double scale_min, double scale_max,
                             double ratio_min, double ratio_max, std::uint64_t seed) {
  Rng rng(seed);
  const double area = static_cast<double>(height) * width;
  const double log_lo = std::log(ratio_min), log_hi = std::log(ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale_min, scale_max);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (w > 0 && h > 0 && w <= width && h <= height &&
        static_cast<double>(w) * h >= scale_min * area) {
      const int y = rng.uniform_int(0, height - h);
      const int x = rng.uniform_int(0, width - w);
      return {y, x, h, w};
    }
  }
  const double in_ratio = static_cast<double>(width) / height;
  int w = width, h = height;
  if (in_ratio < ratio_min) {
    h = std::min(height, static_cast<int>(std::lround(w / ratio_min)));
  } else if (in_ratio > ratio_max) {
    w = std::min(width, static_cast<int>(std::lround(h * ratio_max)));
  }
  if (static_cast<double>(w) * h < scale_min * area) {
    w = width;
    h = height;
  }
  return {(height - h) / 2, (width - w) / 2, h, w};
}

GlobalView global_view(const Image& img, std::uint64_t seed, const AugmentConfig& cfg) {
  Rng rng(seed);
  GlobalView view;
  view.source_crop = sample_resized_crop(img.height(), img.width(), cfg.global_crop_scale_min,
                                         cfg.global_crop_scale_max, cfg.crop_ratio_min,
                                         cfg.crop_ratio_max, rng.engine()());
  Image out = resize_bilinear(crop(img, view.source_crop), cfg.global_side, cfg.global_side);
  out = photometric(std::move(out), cfg, rng, &view.flipped);
  if (rng.bernoulli(cfg.grayscale_prob)) out = to_grayscale(out);
  out = maybe_blur(out, cfg, rng);
  for (int i = 0; i < cfg.randaug_ops; ++i) {
    const auto op = static_cast<RandAugOp>(rng.uniform_int(0, kNumRandAugOps - 1));
    const bool negate = rng.bernoulli(0.5);
    out = apply_randaug_op(out, op, cfg.randaug_magnitude, negate);
  }
  out.clamp01();
  view.pixels = std::move(out);
  return view;
}

PatchSet jigsaw_views(const Image& img, std::uint64_t seed, const AugmentConfig& cfg) {
  Rng rng(seed);
  PatchSet set;
  set.source_crop = sample_resized_crop(img.height(), img.width(), cfg.crop_area_min, 1.0,
                                        cfg.crop_ratio_min, cfg.crop_ratio_max, rng.engine()());
  const int side = cfg.jigsaw_intermediate_side;
  Image inter = resize_bilinear(crop(img, set.source_crop), side, side);
  inter = photometric(std::move(inter), cfg, rng, nullptr);
  inter = maybe_blur(inter, cfg, rng);
  inter.clamp01();

  std::iota(set.permutation.begin(), set.permutation.end(), 0);
  std::shuffle(set.permutation.begin(), set.permutation.end(), rng.engine());

  const int cell = cfg.cell_side();
  const int slack = cell - cfg.patch_side;
  set.patches.reserve(kJigsawPatches);
  for (int j = 0; j < kJigsawPatches; ++j) {
    const int src = set.permutation[j];
    set.grid_cells[j] = GridCell{src / 3, src % 3, cell};
    const CropRect cell_rect = set.grid_cells[j].rect();
    const int dy = rng.uniform_int(0, slack);
    const int dx = rng.uniform_int(0, slack);
    set.crops[j] = CropRect{cell_rect.y + dy, cell_rect.x + dx, cfg.patch_side, cfg.patch_side};
    set.patches.push_back(crop(inter, set.crops[j]));
  }
  return set;
}

ViewBundle make_bundle(const Image& img, std::uint64_t seed, const AugmentConfig& cfg) {
  ViewBundle b;
  b.seed = seed;
  b.i_q = global_view(img, derive_seed(seed, {0}), cfg);
  b.i_k = global_view(img, derive_seed(seed, {1}), cfg);
  b.p_q = jigsaw_views(img, derive_seed(seed, {2}), cfg);
  b.p_k = jigsaw_views(img, derive_seed(seed, {3}), cfg);
  return b;
}

}  // namespace detco::augment
