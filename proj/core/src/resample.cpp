#include "fednnu/resample.hpp"

#include <algorithm>
#include <cmath>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (in == out) return static_cast<double>(i);
  const double c = (static_cast<double>(i) + 0.5) * (static_cast<double>(in) / static_cast<double>(out)) - 0.5;
  return std::clamp(c, 0.0, static_cast<double>(in - 1));
}

}  // namespace

std::size_t resampled_extent(std::size_t extent, double from, double to) {
  if (from == to) return extent;
  const double e = std::round(static_cast<double>(extent) * from / to);
  return std::max<std::size_t>(1, static_cast<std::size_t>(e));
}

Image resample_bilinear(const Image& in, std::size_t out_h, std::size_t out_w) {
  if (in.height == 0 || in.width == 0 || out_h == 0 || out_w == 0) throw ShapeError("resample: empty image");
  if (out_h == in.height && out_w == in.width) return in;
  Image out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = source_coord(y, in.height, out_h);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, in.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = source_coord(x, in.width, out_w);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, in.width - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = in(y0, x0) * (1.0 - fx) + in(y0, x1) * fx;
      const double bottom = in(y1, x0) * (1.0 - fx) + in(y1, x1) * fx;
      out(y, x) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

Mask resample_nearest(const Mask& in, std::size_t out_h, std::size_t out_w) {
  if (in.height == 0 || in.width == 0 || out_h == 0 || out_w == 0) throw ShapeError("resample: empty mask");
  if (out_h == in.height && out_w == in.width) return in;
  Mask out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto sy = static_cast<std::size_t>(std::lround(source_coord(y, in.height, out_h)));
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto sx = static_cast<std::size_t>(std::lround(source_coord(x, in.width, out_w)));
      out(y, x) = in(std::min(sy, in.height - 1), std::min(sx, in.width - 1));
    }
  }
  return out;
}

Case resample_case(const Case& c, const Spacing& target) {
  if (!(target[0] > 0.0) || !(target[1] > 0.0)) throw UsageError("resample target spacing must be positive");
  const std::size_t h = resampled_extent(c.image.height, c.spacing[0], target[0]);
  const std::size_t w = resampled_extent(c.image.width, c.spacing[1], target[1]);
  Case out;
  out.image = resample_bilinear(c.image, h, w);
  out.mask = resample_nearest(c.mask, h, w);
  out.spacing = target;
  return out;
}

}  // namespace fednnu
