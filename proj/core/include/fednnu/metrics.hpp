#pragma once

#include "fednnu/image.hpp"

namespace fednnu {

// 2|P n T| / (|P| + |T|); 1.0 when both masks are empty.
double dsc(const Mask& pred, const Mask& truth);

struct Hd95 {
  double value = 0.0;
  // False when both masks are empty.
  bool defined = true;
};

// Symmetric 95th-percentile Hausdorff distance between the foreground
// boundaries: max of the two directed nearest-rank 95th percentiles, in
// spacing units. A foreground pixel is on the boundary if it touches the
// image border or a 4-neighbour of background. Exactly one empty mask gives
// the physical image diagonal.
Hd95 hd95(const Mask& pred, const Mask& truth, const Spacing& spacing = {1.0, 1.0});

}  // namespace fednnu
