#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace latentdrag::numerics {

// Planar C x H x W float64 raster. Used for both images and feature maps.
struct Raster {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Raster() = default;
  Raster(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), values(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return values[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return values[(c * height + y) * width + x];
  }
  std::span<const double> plane(std::size_t c) const noexcept {
    return {values.data() + c * height * width, height * width};
  }

  bool same_shape(const Raster& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Raster&) const = default;
};

}  // namespace latentdrag::numerics
