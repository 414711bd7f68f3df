#include "detco/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "detco/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace detco::checkpoint {
namespace {

using json = nlohmann::json;

std::size_t dtype_size(DType t) { return t == DType::kF32 ? 4 : 8; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::kF32;
  if (s == "f64") return DType::kF64;
  if (s == "i64") return DType::kI64;
  throw FormatError("unknown dtype '" + s + "'");
}

template <typename T>
std::vector<unsigned char> to_bytes(const T* data, std::size_t n) {
  std::vector<unsigned char> out(n * sizeof(T));
  if (n) std::memcpy(out.data(), data, out.size());
  return out;
}

}  // namespace

std::string dtype_name(DType t) {
  switch (t) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kI64: return "i64";
  }
  return "?";
}

void Archive::put(const std::string& name, const Tensor& t) {
  arrays_[name] = ArrayEntry{DType::kF32, t.shape(), to_bytes(t.data(), t.size())};
}

void Archive::put(const std::string& name, const Matrix& m) {
  arrays_[name] = ArrayEntry{DType::kF64, {static_cast<int>(m.rows()), static_cast<int>(m.cols())},
                             to_bytes(m.data(), static_cast<std::size_t>(m.size()))};
}

void Archive::put(const std::string& name, std::span<const std::int64_t> values) {
  arrays_[name] = ArrayEntry{DType::kI64, {static_cast<int>(values.size())}, to_bytes(values.data(), values.size())};
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : arrays_) out.push_back(k);
  return out;
}

const ArrayEntry& Archive::entry(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw StructuralError("checkpoint has no array '" + name + "'");
  return it->second;
}

Tensor Archive::tensor(const std::string& name) const {
  const ArrayEntry& e = entry(name);
  if (e.dtype != DType::kF32) throw FormatError("array '" + name + "' is " + dtype_name(e.dtype) + ", expected f32");
  Tensor t(e.shape);
  if (t.size()) std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
  return t;
}

Matrix Archive::matrix(const std::string& name) const {
  const ArrayEntry& e = entry(name);
  if (e.dtype != DType::kF64 || e.shape.size() != 2) {
    throw FormatError("array '" + name + "' is not a 2-D f64 matrix");
  }
  Matrix m(e.shape[0], e.shape[1]);
  if (m.size()) std::memcpy(m.data(), e.bytes.data(), e.bytes.size());
  return m;
}

std::vector<std::int64_t> Archive::ints(const std::string& name) const {
  const ArrayEntry& e = entry(name);
  if (e.dtype != DType::kI64) throw FormatError("array '" + name + "' is " + dtype_name(e.dtype) + ", expected i64");
  std::vector<std::int64_t> out(e.bytes.size() / 8);
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

void Archive::save(const std::filesystem::path& path) const {
  json header;
  json meta = json::parse(metadata, nullptr, false);
  if (meta.is_discarded()) throw FormatError("checkpoint metadata is not valid JSON");
  header["metadata"] = meta;
  header["arrays"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : arrays_) {
    header["arrays"].push_back(
        {{"name", name}, {"dtype", dtype_name(e.dtype)}, {"shape", e.shape}, {"offset", offset}, {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted save never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + tmp.string());
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, e] : arrays_) {
      out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    }
    if (!out) throw IoError("failed while writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": not a checkpoint file");
  }
  if (version != kFormatVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto file_size = std::filesystem::file_size(path);
  if (len > file_size) throw FormatError(path.string() + ": truncated header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const json header = json::parse(text, nullptr, false);
  if (!in || header.is_discarded() || !header.contains("arrays")) {
    throw FormatError(path.string() + ": damaged header");
  }
  const std::uint64_t payload_start = sizeof(magic) + sizeof(version) + sizeof(len) + len;

  Archive ar;
  ar.metadata = header.value("metadata", json::object()).dump();
  for (const auto& a : header["arrays"]) {
    ArrayEntry e;
    e.dtype = parse_dtype(a.at("dtype").get<std::string>());
    e.shape = a.at("shape").get<std::vector<int>>();
    const auto offset = a.at("offset").get<std::uint64_t>();
    const auto nbytes = a.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_elements(e.shape) * dtype_size(e.dtype) || payload_start + offset + nbytes > file_size) {
      throw FormatError(path.string() + ": array '" + a.at("name").get<std::string>() + "' is inconsistent");
    }
    e.bytes.resize(nbytes);
    in.seekg(static_cast<std::streamoff>(payload_start + offset));
    in.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw FormatError(path.string() + ": truncated payload");
    ar.arrays_[a.at("name").get<std::string>()] = std::move(e);
  }
  return ar;
}

}  // namespace detco::checkpoint
