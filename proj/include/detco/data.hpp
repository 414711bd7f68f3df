#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "detco/image.hpp"

namespace detco::data {

struct LabeledItem {
  std::shared_ptr<const Image> image;
  int label = 0;
  std::string source;  // file path or synthetic id
};

struct LabeledDataset {
  std::vector<LabeledItem> items;
  int num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return items.size(); }
  /// Throws InputError if empty or any label is out of range.
  void validate() const;
};

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> skipped_files;
};

/// root/<class_name>/*.png|jpg|jpeg, classes labeled in lexicographic order.
/// Unreadable files are skipped and counted in `report`.
LabeledDataset load_image_folder(const std::filesystem::path& root, LoadReport* report = nullptr);

struct ToySpec {
  int num_classes = 8;
  int samples_per_class = 100;
  int image_side = 96;
  std::uint64_t seed = 1;
  void validate() const;
};

/// Shape families and color families available to the generator.
inline constexpr int kToyShapes = 6;
inline constexpr int kToyColorFamilies = 4;
std::string toy_class_name(int label, const ToySpec& spec);

/// Deterministic colored-shape dataset: class = (shape type, color family);
/// position, scale, rotation, hue within the family and the textured
/// background are random per image.
LabeledDataset generate_toy(const ToySpec& spec);

/// Writes the dataset as an image folder readable by load_image_folder.
void write_image_folder(const LabeledDataset& ds, const std::filesystem::path& root);

}  // namespace detco::data
