#pragma once

#include <cstddef>
#include <vector>

#include "hdrnerf/error.hpp"

namespace hdrnerf {

/// RGB image, row-major from the top row, channels interleaved. LDR images
/// hold values normalized to [0, 1]; HDR images hold linear radiance.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {
    if (w < 0 || h < 0) throw InputError("negative image size");
  }

  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int row, int col, int c) const {
    return (static_cast<std::size_t>(row) * width + col) * 3 + c;
  }
  double& at(int row, int col, int c) { return data[index(row, col, c)]; }
  double at(int row, int col, int c) const { return data[index(row, col, c)]; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace hdrnerf
