#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rankedit {

// On-disk layout:
//   u64 little-endian header length in bytes
//   UTF-8 JSON header: {"format", "version", "config", "metadata",
//                       "tensors": {name: {"dtype": "f32", "shape", "offset"}}}
//   payload: little-endian f32 values, tensors back to back in insertion
//            order; "offset" is the byte offset from the payload start.
struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;

  std::size_t element_count() const;
};

struct TensorFile {
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<TensorEntry> tensors;

  const TensorEntry& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

inline constexpr const char* kTensorFormatName = "rankedit-tensors";
inline constexpr int kTensorFormatVersion = 1;

std::string serialize_tensor_file(const TensorFile& file);
TensorFile parse_tensor_file(const std::string& bytes, const std::string& origin);

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace rankedit
