#include "detco/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

#include "detco/errors.hpp"
#include "detco/rng.hpp"

namespace detco::data {
namespace {

constexpr double kPi = 3.14159265358979323846;

const char* const kShapeNames[kToyShapes] = {"disk", "square", "triangle", "ring", "cross", "star"};
const char* const kColorNames[kToyColorFamilies] = {"red", "green", "blue", "yellow"};
constexpr double kFamilyHue[kToyColorFamilies] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0 / 6.0};

// Class c -> (shape, color). Walking shapes and colors at different rates
// makes neither attribute alone identify the class.
int class_shape(int c) { return c % kToyShapes; }
int class_color(int c) { return (c / kToyShapes + c) % kToyColorFamilies; }

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (static_cast<int>(i) % 6) {
    case 0: rgb[0] = v, rgb[1] = t, rgb[2] = p; break;
    case 1: rgb[0] = q, rgb[1] = v, rgb[2] = p; break;
    case 2: rgb[0] = p, rgb[1] = v, rgb[2] = t; break;
    case 3: rgb[0] = p, rgb[1] = q, rgb[2] = v; break;
    case 4: rgb[0] = t, rgb[1] = p, rgb[2] = v; break;
    default: rgb[0] = v, rgb[1] = p, rgb[2] = q; break;
  }
}

// Point (u, v) in the shape's unit frame.
bool inside_shape(int shape, double u, double v) {
  const double r = std::hypot(u, v);
  switch (shape) {
    case 0: return r <= 1.0;
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8;
    case 2:
      for (int k = 0; k < 3; ++k) {
        const double a = kPi / 2 + k * 2 * kPi / 3;
        if (u * std::cos(a) + v * std::sin(a) < -0.5) return false;
      }
      return r <= 1.0;
    case 3: return r <= 1.0 && r >= 0.55;
    case 4:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    default: {
      const double theta = std::atan2(v, u);
      return r <= 0.6 + 0.4 * std::cos(5 * theta);
    }
  }
}

Image render_toy(int label, std::uint64_t seed, int side) {
  Rng rng(seed);
  Image img(side, side);

  // Background: tinted low-frequency waves plus pixel noise; its color is
  // unrelated to the class.
  double bg[3];
  hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.45), rng.uniform(0.3, 0.75), bg);
  struct Wave {
    double fx, fy, phase, amp;
    int channel;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i) {
    waves.push_back({rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), rng.uniform(0.0, 2 * kPi),
                     rng.uniform(0.03, 0.12), rng.uniform_int(0, 2)});
  }
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double px[3] = {bg[0], bg[1], bg[2]};
      for (const Wave& w : waves) px[w.channel] += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(px[c] + rng.normal(0.0, 0.04));
    }
  }

  // Foreground shape with in-family hue jitter and a faint stripe texture.
  const int shape = class_shape(label);
  double fg[3];
  hsv_to_rgb(kFamilyHue[class_color(label)] + rng.uniform(-0.04, 0.04), rng.uniform(0.65, 1.0),
             rng.uniform(0.6, 1.0), fg);
  const double radius = side * rng.uniform(0.2, 0.34);
  const double cx = rng.uniform(radius, side - radius);
  const double cy = rng.uniform(radius, side - radius);
  const double angle = rng.uniform(0.0, 2 * kPi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double stripe_freq = rng.uniform(0.6, 1.2);
  constexpr int kSuper = 2;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double dx = x + (sx + 0.5) / kSuper - cx;
          const double dy = y + (sy + 0.5) / kSuper - cy;
          const double u = (ca * dx + sa * dy) / radius;
          const double v = (-sa * dx + ca * dy) / radius;
          hits += inside_shape(shape, u, v);
        }
      }
      if (!hits) continue;
      const double cover = static_cast<double>(hits) / (kSuper * kSuper);
      const double shade = 1.0 + 0.08 * std::sin(stripe_freq * (ca * x + sa * y));
      for (int c = 0; c < 3; ++c) {
        const float v = img.at(y, x, c);
        img.at(y, x, c) = static_cast<float>(v + cover * (fg[c] * shade + rng.normal(0.0, 0.03) - v));
      }
    }
  }
  img.clamp01();
  return img;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

void LabeledDataset::validate() const {
  if (items.empty()) throw InputError("dataset is empty");
  if (num_classes <= 0) throw InputError("dataset has no classes");
  for (const auto& item : items) {
    if (item.label < 0 || item.label >= num_classes) {
      throw InputError("label " + std::to_string(item.label) + " of '" + item.source + "' outside [0, " +
                       std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset load_image_folder(const std::filesystem::path& root, LoadReport* report) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw FileNotFoundError("dataset directory not found: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  LabeledDataset ds;
  LoadReport local;
  for (const auto& dir : class_dirs) {
    const int label = static_cast<int>(ds.class_names.size());
    ds.class_names.push_back(dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string ext = lower(e.path().extension().string());
      if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        auto img = std::make_shared<const Image>(ingest_source(load_image(f)));
        ds.items.push_back({std::move(img), label, f.string()});
        ++local.loaded;
      } catch (const IoError& e) {
        std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
        ++local.skipped;
        local.skipped_files.push_back(f.string());
      }
    }
  }
  ds.num_classes = static_cast<int>(ds.class_names.size());
  if (report) *report = local;
  if (ds.items.empty()) throw InputError("no readable images under " + root.string());
  return ds;
}

void ToySpec::validate() const {
  const int max_classes = kToyShapes * kToyColorFamilies;
  if (num_classes < 2 || num_classes > max_classes) {
    throw ConfigError("data.toy.num_classes: expected value in [2, " + std::to_string(max_classes) + "], got " +
                      std::to_string(num_classes));
  }
  if (samples_per_class < 1) throw ConfigError("data.toy.samples_per_class: must be positive");
  if (image_side < kMinSourceSide) {
    throw ConfigError("data.toy.image_side: must be >= " + std::to_string(kMinSourceSide) + ", got " +
                      std::to_string(image_side));
  }
}

std::string toy_class_name(int label, const ToySpec& spec) {
  char prefix[16];
  std::snprintf(prefix, sizeof(prefix), "%02d", label);
  (void)spec;
  return std::string(prefix) + "_" + kShapeNames[class_shape(label)] + "_" + kColorNames[class_color(label)];
}

LabeledDataset generate_toy(const ToySpec& spec) {
  spec.validate();
  LabeledDataset ds;
  ds.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c) ds.class_names.push_back(toy_class_name(c, spec));
  ds.items.reserve(static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class);
  // Class-interleaved order; every image has its own counter-derived seed.
  for (int i = 0; i < spec.samples_per_class; ++i) {
    for (int c = 0; c < spec.num_classes; ++c) {
      const std::uint64_t seed = derive_seed(spec.seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
      auto img = std::make_shared<const Image>(render_toy(c, seed, spec.image_side));
      ds.items.push_back({std::move(img), c, "toy/" + ds.class_names[c] + "/" + std::to_string(i)});
    }
  }
  return ds;
}

void write_image_folder(const LabeledDataset& ds, const std::filesystem::path& root) {
  ds.validate();
  std::vector<int> counters(ds.num_classes, 0);
  for (const auto& item : ds.items) {
    const std::string cls = item.label < static_cast<int>(ds.class_names.size())
                                ? ds.class_names[item.label]
                                : "class_" + std::to_string(item.label);
    char name[32];
    std::snprintf(name, sizeof(name), "%05d.png", counters[item.label]++);
    save_png(*item.image, root / cls / name);
  }
}

}  // namespace detco::data
