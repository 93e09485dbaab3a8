#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace gracelab {

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);

/// Writes `content` to a sibling temporary file, flushes it and renames it
/// over `path`, so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace gracelab
