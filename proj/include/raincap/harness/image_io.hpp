#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "raincap/rain/image.hpp"

namespace raincap::harness {

/// Clamp to [0,1], round to 8 bits.
std::uint8_t quantize(float v);

/// 8-bit RGB PNG. Values are clamped, never wrapped.
std::string encode_png(const rain::Image& img);
void export_image(const rain::Image& img, const std::filesystem::path& path);
/// Single-channel data (e.g. a transmission map) as gray replicated to RGB.
void export_plane(const rain::Plane& p, const std::filesystem::path& path);

/// PNG or JPEG, chosen by signature; gray and alpha inputs are converted to
/// RGB. Throws DataError for unreadable or corrupt files.
rain::Image decode_image(std::string_view bytes);
rain::Image import_image(const std::filesystem::path& path);

/// Bilinear resampling with pixel centres aligned.
rain::Image resize_bilinear(const rain::Image& img, int height, int width);

}  // namespace raincap::harness
