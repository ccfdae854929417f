#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace hmcam {

std::string sha1_hex(std::span<const std::uint8_t> bytes);
/// Git object id of a blob with this content ("blob <len>\0" prefix).
std::string git_blob_hash(std::span<const std::uint8_t> bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);
/// SHA-1 over the little-endian bytes of a double sequence.
std::string sha1_of_doubles(std::span<const double> values);

}  // namespace hmcam
