#include "rankedit/tensor_file.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <numeric>

#include "rankedit/error.hpp"
#include "rankedit/io.hpp"

namespace rankedit {

namespace {

void append_u64_le(std::string& out, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

std::uint64_t read_u64_le(const std::string& bytes) {
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) {
    value |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  }
  return value;
}

void append_f32_le(std::string& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

float read_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace

std::size_t TensorEntry::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

const TensorEntry& TensorFile::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw DataError("tensor '" + name + "' missing from container");
}

bool TensorFile::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::string serialize_tensor_file(const TensorFile& file) {
  nlohmann::json header;
  header["format"] = kTensorFormatName;
  header["version"] = kTensorFormatVersion;
  header["config"] = file.config;
  header["metadata"] = file.metadata;
  header["tensors"] = nlohmann::json::object();

  std::uint64_t offset = 0;
  for (const auto& t : file.tensors) {
    if (t.values.size() != t.element_count()) {
      throw DataError("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                      " values but its shape implies " +
                      std::to_string(t.element_count()));
    }
    if (header["tensors"].contains(t.name)) {
      throw DataError("duplicate tensor name '" + t.name + "'");
    }
    header["tensors"][t.name] = {{"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}};
    offset += 4 * t.values.size();
  }

  const std::string header_text = header.dump();
  std::string out;
  out.reserve(8 + header_text.size() + offset);
  append_u64_le(out, header_text.size());
  out += header_text;
  for (const auto& t : file.tensors) {
    for (float v : t.values) append_f32_le(out, v);
  }
  return out;
}

TensorFile parse_tensor_file(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8) {
    throw DataError(origin + ": truncated tensor container");
  }
  const std::uint64_t header_len = read_u64_le(bytes);
  if (header_len > bytes.size() - 8) {
    throw DataError(origin + ": header length exceeds file size");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed header JSON: " + e.what());
  }
  if (header.value("format", std::string{}) != kTensorFormatName) {
    throw DataError(origin + ": not a " + std::string(kTensorFormatName) + " container");
  }
  if (header.value("version", 0) != kTensorFormatVersion) {
    throw DataError(origin + ": unsupported container version");
  }

  TensorFile file;
  file.config = header.value("config", nlohmann::json::object());
  file.metadata = header.value("metadata", nlohmann::json::object());
  const std::size_t payload_start = 8 + header_len;
  const std::size_t payload_size = bytes.size() - payload_start;

  // Restore payload order so that re-serialization is byte-identical.
  std::vector<std::pair<std::uint64_t, TensorEntry>> ordered;
  try {
    for (const auto& [name, desc] : header.at("tensors").items()) {
      if (desc.at("dtype").get<std::string>() != "f32") {
        throw DataError(origin + ": tensor '" + name + "' has unsupported dtype");
      }
      TensorEntry entry;
      entry.name = name;
      entry.shape = desc.at("shape").get<std::vector<std::size_t>>();
      const auto offset = desc.at("offset").get<std::uint64_t>();
      const std::size_t count = entry.element_count();
      if (offset % 4 != 0 || offset > payload_size || 4 * count > payload_size - offset) {
        throw DataError(origin + ": tensor '" + name + "' lies outside the payload");
      }
      entry.values.resize(count);
      const char* base = bytes.data() + payload_start + offset;
      for (std::size_t i = 0; i < count; ++i) {
        entry.values[i] = read_f32_le(base + 4 * i);
      }
      ordered.emplace_back(offset, std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed tensor table: " + e.what());
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [offset, entry] : ordered) file.tensors.push_back(std::move(entry));
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  write_text_file(path, serialize_tensor_file(file));
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  return parse_tensor_file(read_text_file(path), path.string());
}

}  // namespace rankedit
