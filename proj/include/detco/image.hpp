#pragma once

#include <filesystem>
#include <vector>

#include "detco/tensor.hpp"

namespace detco {

/// H x W x 3 interleaved RGB image, values nominally in [0,1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  static constexpr int channels() { return 3; }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::vector<float>& pixels() { return pixels_; }
  const std::vector<float>& pixels() const { return pixels_; }

  void clamp01();

  friend bool operator==(const Image& a, const Image& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.pixels_ == b.pixels_;
  }

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

struct CropRect {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;

  long area() const { return static_cast<long>(height) * width; }
  bool contains(const CropRect& inner) const {
    return inner.y >= y && inner.x >= x && inner.y + inner.height <= y + height &&
           inner.x + inner.width <= x + width;
  }
  friend bool operator==(const CropRect&, const CropRect&) = default;
};

/// Smallest side accepted as a source image; smaller inputs are upscaled.
inline constexpr int kMinSourceSide = 64;

/// Normalizes an arbitrary decoded image into a valid source image: values
/// clamped to [0,1], bilinearly upscaled so both sides are >= 64.
Image ingest_source(Image img);

Image crop(const Image& img, const CropRect& rect);

/// Bilinear resize with half-pixel centers (align_corners = false).
Image resize_bilinear(const Image& img, int out_height, int out_width);

Image flip_horizontal(const Image& img);

/// ITU-R 601 luma, computed so that equal channels map to themselves exactly.
float luma(float r, float g, float b);

Image to_grayscale(const Image& img);
Image adjust_brightness(const Image& img, float factor);
Image adjust_contrast(const Image& img, float factor);
Image adjust_saturation(const Image& img, float factor);
/// Rotates hue by `shift` turns (in [-0.5, 0.5]).
Image adjust_hue(const Image& img, float shift);
/// Separable gaussian blur with reflected borders. Constant regions are
/// reproduced exactly.
Image gaussian_blur(const Image& img, double sigma);
Image autocontrast(const Image& img);
Image equalize(const Image& img);
Image solarize(const Image& img, float threshold);
Image posterize(const Image& img, int bits);
Image adjust_sharpness(const Image& img, float factor);

/// Inverse-mapped affine warp with nearest sampling and zero fill.
/// (sx, sy) = (a*x + b*y + c, d*x + e*y + f) in pixel-center coordinates.
struct Affine {
  double a = 1, b = 0, c = 0, d = 0, e = 1, f = 0;
};
Image warp_affine_nearest(const Image& img, const Affine& inverse);
Image rotate(const Image& img, double degrees);
Image shear_x(const Image& img, double amount);
Image shear_y(const Image& img, double amount);
Image translate(const Image& img, double dx, double dy);

/// Packs images (all the same size) into an N x 3 x H x W tensor.
Tensor images_to_tensor(const std::vector<const Image*>& images);

/// Decodes PNG/JPEG into RGB [0,1]. Throws FileNotFoundError / IoError.
Image load_image(const std::filesystem::path& path);
/// Writes an 8-bit RGB PNG with fixed compression settings.
void save_png(const Image& img, const std::filesystem::path& path);

}  // namespace detco
