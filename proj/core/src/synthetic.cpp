#include "fednnu/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "fednnu/error.hpp"

namespace fednnu {

void SyntheticCenterSpec::validate() const {
  if (image_size[0] < 32 || image_size[1] < 32) throw ConfigError("center image_size entries must be >= 32");
  if (!(noise_std >= 0.0)) throw ConfigError("center noise_std must be >= 0");
  if (!(spacing[0] > 0.0) || !(spacing[1] > 0.0)) throw ConfigError("center spacing must be positive");
  if (num_cases == 0) throw ConfigError("center num_cases must be >= 1");
}

Dataset gen_center(const SyntheticCenterSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t h = spec.image_size[0], w = spec.image_size[1];
  const double side = static_cast<double>(std::min(h, w));
  Dataset out;
  out.reserve(spec.num_cases);
  for (std::uint32_t i = 0; i < spec.num_cases; ++i) {
    const double cy = (0.35 + 0.3 * unit(rng)) * static_cast<double>(h);
    const double cx = (0.35 + 0.3 * unit(rng)) * static_cast<double>(w);
    const double ay = (0.15 + 0.15 * unit(rng)) * side;
    const double ax = (0.15 + 0.15 * unit(rng)) * side;
    const double theta = std::numbers::pi * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);

    Case c;
    c.spacing = spec.spacing;
    c.image = Image(h, w);
    c.mask = Mask(h, w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy;
        const double dx = static_cast<double>(x) + 0.5 - cx;
        const double u = (dy * ct + dx * st) / ay;
        const double v = (-dy * st + dx * ct) / ax;
        const std::uint8_t m = u * u + v * v <= 1.0 ? 1 : 0;
        c.mask(y, x) = m;
        const double noise = spec.noise_std > 0.0 ? spec.noise_std * gauss(rng) : 0.0;
        c.image(y, x) = std::clamp(spec.intensity_bias + static_cast<double>(m) + noise, kImageClipLow, kImageClipHigh);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace fednnu
