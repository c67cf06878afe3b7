#pragma once

#include <array>
#include <cstdint>

#include "fednnu/image.hpp"
#include "fednnu/state_dict.hpp"

namespace fednnu {

// Parameters of one synthetic center: ellipse masks on a noisy background.
struct SyntheticCenterSpec {
  NodeId center_id = 0;
  std::array<std::uint32_t, 2> image_size{32, 32};
  Spacing spacing{1.0, 1.0};
  double intensity_bias = 0.0;
  double noise_std = 0.0;
  std::uint32_t num_cases = 1;
  std::uint64_t seed = 0;

  // image_size entries >= 32, noise_std >= 0, spacing > 0, num_cases >= 1.
  void validate() const;

  friend bool operator==(const SyntheticCenterSpec&, const SyntheticCenterSpec&) = default;
};

inline constexpr double kImageClipLow = -3.0;
inline constexpr double kImageClipHigh = 6.0;

// image = bias + mask + N(0, noise_std), clipped to [-3, 6]. Deterministic
// in spec.seed.
Dataset gen_center(const SyntheticCenterSpec& spec);

}  // namespace fednnu
