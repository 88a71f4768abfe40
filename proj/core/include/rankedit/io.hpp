#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rankedit {

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

// Non-empty lines with trailing whitespace removed.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace rankedit
