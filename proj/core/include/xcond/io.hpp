#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace xcond {

/// Whole-file read; throws IoError.
std::string read_file(const std::filesystem::path& path);

/// Write to a sibling temporary file, then rename over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace xcond
