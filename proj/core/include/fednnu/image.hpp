#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace fednnu {

// Physical pixel size [sy, sx] (mm/pixel).
using Spacing = std::array<double, 2>;

template <typename T>
struct Grid2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> pixels;

  Grid2D() = default;
  Grid2D(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), pixels(h * w, fill) {}

  T& operator()(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t size() const { return pixels.size(); }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

using Image = Grid2D<double>;
using Mask = Grid2D<std::uint8_t>;

struct Case {
  Image image;
  Mask mask;
  Spacing spacing{1.0, 1.0};

  friend bool operator==(const Case&, const Case&) = default;
};

using Dataset = std::vector<Case>;

}  // namespace fednnu
