#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "latentdrag/numerics/raster.hpp"

namespace latentdrag::generator {

using numerics::Raster;

// Raw float64 dump: 16-byte header {magic "LDR1", u32 C, u32 H, u32 W}, then
// C*H*W little-endian doubles in planar row-major order.
std::vector<unsigned char> encode_raw(const Raster& r);
Raster decode_raw(std::span<const unsigned char> bytes);
void write_raw(const std::filesystem::path& path, const Raster& r);
Raster read_raw(const std::filesystem::path& path);

// 8-bit PNG (gray for C=1, RGB for C=3). Values clamped to [0,1] and rounded.
std::vector<unsigned char> encode_png(const Raster& img);
void write_png(const std::filesystem::path& path, const Raster& img);
// Any libpng-readable PNG, converted to 8-bit RGB and scaled to [0,1].
Raster read_png(const std::filesystem::path& path);
Raster decode_png(std::span<const unsigned char> bytes);

// Nearest-neighbour resample to (channels, height, width). Grayscale sources
// are broadcast to every output channel.
Raster resample_nearest(const Raster& src, std::size_t channels, std::size_t height, std::size_t width);

using Rgb = std::array<double, 3>;
inline constexpr Rgb kHandleBlue{0.0, 0.3, 1.0};
inline constexpr Rgb kTargetRed{1.0, 0.0, 0.0};

// Filled disc centered at (x, y) in image pixel coordinates.
void draw_dot(Raster& img, double x, double y, double radius, const Rgb& color);

// Horizontal concatenation of same-height images with a white gutter.
Raster side_by_side(std::span<const Raster> panels, std::size_t gutter = 4);

}  // namespace latentdrag::generator
