#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "detco/config.hpp"
#include "detco/image.hpp"
#include "detco/matrix.hpp"

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  static std::mt19937_64 salt(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() / ("detco_test_" + name + "_" + std::to_string(salt()));
  std::filesystem::create_directories(dir);
  return dir;
}

inline detco::Matrix random_unit_rows(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  detco::Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
    m.row(i).normalize();
  }
  return m;
}

inline detco::Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  detco::Image img(h, w);
  for (auto& v : img.pixels()) v = u(rng);
  return img;
}

/// Small, fast experiment used by trainer/eval tests.
inline detco::ExperimentConfig tiny_config() {
  return detco::parse_config_text(
      "model.stage_channels = 4, 8, 8, 8\n"
      "model.embed_dim = 16\n"
      "model.norm_groups = 4\n"
      "memory.capacity = 32\n"
      "trainer.batch_size = 4\n"
      "trainer.total_steps = 6\n"
      "trainer.learning_rate = 0.05\n"
      "trainer.momentum = 0.9\n"
      "trainer.checkpoint_every = 0\n"
      "data.toy.num_classes = 4\n"
      "data.toy.samples_per_class = 4\n"
      "data.toy.image_side = 64\n"
      "eval.epochs = 50\n");
}

}  // namespace testing
