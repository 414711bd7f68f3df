#include "detco/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <opencv2/imgcodecs.hpp>

#include "detco/errors.hpp"

namespace detco {
namespace {

constexpr float kLumaG = 0.587f;
constexpr float kLumaB = 0.114f;

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

template <typename Fn>
Image map_pixels(const Image& img, Fn&& fn) {
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      std::array<float, 3> rgb{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
      fn(rgb);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgb[c];
    }
  }
  out.clamp01();
  return out;
}

// a + t*(b - a): exact when a == b.
inline float blend(float a, float b, float t) { return a + t * (b - a); }

}  // namespace

Image::Image(int height, int width, float fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0) * 3, fill) {
  if (height <= 0 || width <= 0) {
    throw InputError("image dimensions must be positive, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
}

void Image::clamp01() {
  for (float& v : pixels_) v = std::clamp(v, 0.0f, 1.0f);
}

Image ingest_source(Image img) {
  if (img.empty()) throw InputError("empty source image");
  for (float& v : img.pixels()) {
    if (!std::isfinite(v)) v = 0.0f;
  }
  img.clamp01();
  if (img.height() >= kMinSourceSide && img.width() >= kMinSourceSide) return img;
  const double scale = static_cast<double>(kMinSourceSide) / std::min(img.height(), img.width());
  const int h = std::max(kMinSourceSide, static_cast<int>(std::ceil(img.height() * scale)));
  const int w = std::max(kMinSourceSide, static_cast<int>(std::ceil(img.width() * scale)));
  return resize_bilinear(img, h, w);
}

Image crop(const Image& img, const CropRect& r) {
  if (r.height <= 0 || r.width <= 0 || r.y < 0 || r.x < 0 || r.y + r.height > img.height() ||
      r.x + r.width > img.width()) {
    throw InputError("crop rectangle outside image");
  }
  Image out(r.height, r.width);
  for (int y = 0; y < r.height; ++y) {
    const float* src = &img.pixels()[(static_cast<std::size_t>(r.y + y) * img.width() + r.x) * 3];
    std::copy(src, src + static_cast<std::size_t>(r.width) * 3,
              &out.pixels()[static_cast<std::size_t>(y) * r.width * 3]);
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_height, int out_width) {
  Image out(out_height, out_width);
  const double sy = static_cast<double>(img.height()) / out_height;
  const double sx = static_cast<double>(img.width()) / out_width;
  std::vector<int> x0(out_width), x1(out_width);
  std::vector<float> fx(out_width);
  for (int x = 0; x < out_width; ++x) {
    double src = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width() - 1));
    x0[x] = static_cast<int>(std::floor(src));
    x1[x] = std::min(x0[x] + 1, img.width() - 1);
    fx[x] = static_cast<float>(src - x0[x]);
  }
  for (int y = 0; y < out_height; ++y) {
    double src = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height() - 1));
    const int y0 = static_cast<int>(std::floor(src));
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const float fy = static_cast<float>(src - y0);
    for (int x = 0; x < out_width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float top = blend(img.at(y0, x0[x], c), img.at(y0, x1[x], c), fx[x]);
        const float bot = blend(img.at(y1, x0[x], c), img.at(y1, x1[x], c), fx[x]);
        out.at(y, x, c) = blend(top, bot, fy);
      }
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, img.width() - 1 - x, c) = img.at(y, x, c);
    }
  }
  return out;
}

float luma(float r, float g, float b) { return r + kLumaG * (g - r) + kLumaB * (b - r); }

Image to_grayscale(const Image& img) {
  return map_pixels(img, [](std::array<float, 3>& p) {
    const float l = luma(p[0], p[1], p[2]);
    p = {l, l, l};
  });
}

Image adjust_brightness(const Image& img, float factor) {
  return map_pixels(img, [factor](std::array<float, 3>& p) {
    for (float& v : p) v *= factor;
  });
}

Image adjust_contrast(const Image& img, float factor) {
  double mean = 0.0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      mean += luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
    }
  }
  const float m = static_cast<float>(mean / (static_cast<double>(img.height()) * img.width()));
  return map_pixels(img, [m, factor](std::array<float, 3>& p) {
    for (float& v : p) v = blend(m, v, factor);
  });
}

Image adjust_saturation(const Image& img, float factor) {
  return map_pixels(img, [factor](std::array<float, 3>& p) {
    const float l = luma(p[0], p[1], p[2]);
    for (float& v : p) v = blend(l, v, factor);
  });
}

Image adjust_hue(const Image& img, float shift) {
  return map_pixels(img, [shift](std::array<float, 3>& p) {
    const float r = p[0], g = p[1], b = p[2];
    const float mx = std::max({r, g, b});
    const float mn = std::min({r, g, b});
    const float delta = mx - mn;
    if (delta <= 0.0f) return;  // achromatic, hue undefined
    float h;
    if (mx == r) {
      h = (g - b) / delta;
    } else if (mx == g) {
      h = 2.0f + (b - r) / delta;
    } else {
      h = 4.0f + (r - g) / delta;
    }
    h = h / 6.0f + shift;
    h -= std::floor(h);
    const float s = delta / mx;
    const float v = mx;
    const float h6 = h * 6.0f;
    const int sector = static_cast<int>(std::floor(h6)) % 6;
    const float f = h6 - std::floor(h6);
    const float pp = v * (1.0f - s);
    const float q = v * (1.0f - s * f);
    const float t = v * (1.0f - s * (1.0f - f));
    switch (sector) {
      case 0: p = {v, t, pp}; break;
      case 1: p = {q, v, pp}; break;
      case 2: p = {pp, v, t}; break;
      case 3: p = {pp, q, v}; break;
      case 4: p = {t, pp, v}; break;
      default: p = {v, pp, q}; break;
    }
  });
}

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(i * i) / (2.0 * sigma * sigma));
    kernel[i + radius] = static_cast<float>(w);
    total += w;
  }
  for (float& k : kernel) k = static_cast<float>(k / total);

  // center + sum_i k_i (x_i - center) == sum_i k_i x_i for normalized k.
  auto pass = [&](const Image& src, bool horizontal) {
    Image out(src.height(), src.width());
    for (int y = 0; y < src.height(); ++y) {
      for (int x = 0; x < src.width(); ++x) {
        for (int c = 0; c < 3; ++c) {
          const float center = src.at(y, x, c);
          float acc = 0.0f;
          for (int i = -radius; i <= radius; ++i) {
            const float v = horizontal ? src.at(y, reflect101(x + i, src.width()), c)
                                       : src.at(reflect101(y + i, src.height()), x, c);
            acc += kernel[i + radius] * (v - center);
          }
          out.at(y, x, c) = center + acc;
        }
      }
    }
    return out;
  };
  Image out = pass(pass(img, true), false);
  out.clamp01();
  return out;
}

Image autocontrast(const Image& img) {
  std::array<float, 3> lo{1.0f, 1.0f, 1.0f}, hi{0.0f, 0.0f, 0.0f};
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], img.at(y, x, c));
        hi[c] = std::max(hi[c], img.at(y, x, c));
      }
    }
  }
  return map_pixels(img, [&](std::array<float, 3>& p) {
    for (int c = 0; c < 3; ++c) {
      if (hi[c] > lo[c]) p[c] = (p[c] - lo[c]) / (hi[c] - lo[c]);
    }
  });
}

namespace {
int quantize8(float v) { return static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }
}  // namespace

Image equalize(const Image& img) {
  // Per-channel histogram equalization over 256 levels.
  std::array<std::array<int, 256>, 3> lut{};
  for (int c = 0; c < 3; ++c) {
    std::array<long, 256> hist{};
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) ++hist[quantize8(img.at(y, x, c))];
    }
    int last = 255;
    while (last > 0 && hist[last] == 0) --last;
    long total = 0;
    for (long h : hist) total += h;
    const long step = (total - hist[last]) / 255;
    for (int i = 0; i < 256; ++i) lut[c][i] = i;
    if (step == 0) continue;
    long n = step / 2;
    for (int i = 0; i < 256; ++i) {
      lut[c][i] = static_cast<int>(std::min<long>(255, n / step));
      n += hist[i];
    }
  }
  return map_pixels(img, [&](std::array<float, 3>& p) {
    for (int c = 0; c < 3; ++c) p[c] = lut[c][quantize8(p[c])] / 255.0f;
  });
}

Image solarize(const Image& img, float threshold) {
  return map_pixels(img, [threshold](std::array<float, 3>& p) {
    for (float& v : p) {
      if (v >= threshold) v = 1.0f - v;
    }
  });
}

Image posterize(const Image& img, int bits) {
  bits = std::clamp(bits, 1, 8);
  const int mask = (0xFF << (8 - bits)) & 0xFF;
  return map_pixels(img, [mask](std::array<float, 3>& p) {
    for (float& v : p) v = static_cast<float>(quantize8(v) & mask) / 255.0f;
  });
}

Image adjust_sharpness(const Image& img, float factor) {
  if (img.height() < 3 || img.width() < 3) return img;
  Image smooth = img;
  for (int y = 1; y < img.height() - 1; ++y) {
    for (int x = 1; x < img.width() - 1; ++x) {
      for (int c = 0; c < 3; ++c) {
        float acc = 4.0f * img.at(y, x, c);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) acc += img.at(y + dy, x + dx, c);
        }
        smooth.at(y, x, c) = acc / 13.0f;
      }
    }
  }
  Image out(img.height(), img.width());
  for (std::size_t i = 0; i < out.pixels().size(); ++i) {
    out.pixels()[i] = blend(smooth.pixels()[i], img.pixels()[i], factor);
  }
  out.clamp01();
  return out;
}

Image warp_affine_nearest(const Image& img, const Affine& m) {
  Image out(img.height(), img.width(), 0.0f);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double sx = m.a * x + m.b * y + m.c;
      const double sy = m.d * x + m.e * y + m.f;
      const int ix = static_cast<int>(std::lround(sx));
      const int iy = static_cast<int>(std::lround(sy));
      if (ix < 0 || iy < 0 || ix >= img.width() || iy >= img.height()) continue;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(iy, ix, c);
    }
  }
  return out;
}

Image rotate(const Image& img, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double cx = (img.width() - 1) / 2.0;
  const double cy = (img.height() - 1) / 2.0;
  const double cs = std::cos(t), sn = std::sin(t);
  // inverse rotation about the center
  Affine m{cs, -sn, 0, sn, cs, 0};
  m.c = cx - cs * cx + sn * cy;
  m.f = cy - sn * cx - cs * cy;
  return warp_affine_nearest(img, m);
}

Image shear_x(const Image& img, double amount) { return warp_affine_nearest(img, {1, -amount, 0, 0, 1, 0}); }

Image shear_y(const Image& img, double amount) { return warp_affine_nearest(img, {1, 0, 0, -amount, 1, 0}); }

Image translate(const Image& img, double dx, double dy) {
  return warp_affine_nearest(img, {1, 0, -dx, 0, 1, -dy});
}

Tensor images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw InputError("cannot batch zero images");
  const int h = images.front()->height(), w = images.front()->width();
  Tensor out({static_cast<int>(images.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height() != h || img.width() != w) throw InputError("batched images differ in size");
    float* dst = out.data() + n * 3 * plane;
    const float* src = img.pixels().data();
    for (std::size_t p = 0; p < plane; ++p) {
      dst[p] = src[3 * p];
      dst[plane + p] = src[3 * p + 1];
      dst[2 * plane + p] = src[3 * p + 2];
    }
  }
  return out;
}

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("no such file: " + path.string());
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image: " + path.string());
  Image img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.0f;
      img.at(y, x, 1) = row[x][1] / 255.0f;
      img.at(y, x, 2) = row[x][0] / 255.0f;
    }
  }
  return img;
}

void save_png(const Image& img, const std::filesystem::path& path) {
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      row[x][2] = static_cast<unsigned char>(quantize8(img.at(y, x, 0)));
      row[x][1] = static_cast<unsigned char>(quantize8(img.at(y, x, 1)));
      row[x][0] = static_cast<unsigned char>(quantize8(img.at(y, x, 2)));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr, params);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

}  // namespace detco
