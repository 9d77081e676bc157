#pragma once

// Small file and hashing helpers shared by the pipeline stages.

#include <filesystem>
#include <string>
#include <string_view>

namespace emo {

std::string sha256_hex(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace emo
