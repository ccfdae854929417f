#pragma once

#include <filesystem>

#include "hmcam/tensor.hpp"

namespace hmcam {

// Tensor file: "ADVT", u32 version, u32 rank, u64 extents, then little-endian f64 data.
void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace hmcam
