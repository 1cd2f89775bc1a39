#pragma once

#include <filesystem>

#include "viclf/core_types.hpp"

namespace viclf {

/// 8-bit RGB PNG; each value stored as round(255 * clamp(v, 0, 1)).
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace viclf
