#pragma once

#include <cstddef>

#include "fednnu/image.hpp"

namespace fednnu {

// Pixel-centre aligned resampling: output pixel i samples input coordinate
// (i + 0.5) * in/out - 0.5, clamped to the image. Equal sizes copy exactly.
Image resample_bilinear(const Image& in, std::size_t out_h, std::size_t out_w);
Mask resample_nearest(const Mask& in, std::size_t out_h, std::size_t out_w);

// Output extent for moving `extent` pixels of size `from` onto a grid of
// size `to`: round(extent * from / to), at least 1.
std::size_t resampled_extent(std::size_t extent, double from, double to);

// Resamples a case onto target spacing: bilinear image, nearest mask.
Case resample_case(const Case& c, const Spacing& target);

}  // namespace fednnu
