#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "detco/matrix.hpp"
#include "detco/tensor.hpp"

namespace detco::checkpoint {

// File layout (all integers little-endian):
//   8 bytes  magic "DETCOCKP"
//   u32      format version
//   u64      header length L
//   L bytes  UTF-8 JSON header:
//            {"metadata": {...},
//             "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
//   payload  raw array bytes; offsets are relative to the payload start
inline constexpr char kMagic[8] = {'D', 'E', 'T', 'C', 'O', 'C', 'K', 'P'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType { kF32, kF64, kI64 };
std::string dtype_name(DType t);

struct ArrayEntry {
  DType dtype = DType::kF32;
  std::vector<int> shape;
  std::vector<unsigned char> bytes;
};

/// In-memory form of a checkpoint file: named arrays plus a JSON metadata
/// object kept as text.
class Archive {
 public:
  void put(const std::string& name, const Tensor& t);
  void put(const std::string& name, const Matrix& m);
  void put(const std::string& name, std::span<const std::int64_t> values);

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  std::vector<std::string> names() const;
  const ArrayEntry& entry(const std::string& name) const;

  Tensor tensor(const std::string& name) const;
  Matrix matrix(const std::string& name) const;
  std::vector<std::int64_t> ints(const std::string& name) const;

  /// JSON object text; "{}" by default.
  std::string metadata = "{}";

  void save(const std::filesystem::path& path) const;
  /// Throws FileNotFoundError, or FormatError on a damaged file.
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, ArrayEntry> arrays_;
};

}  // namespace detco::checkpoint
