#include "fednnu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_shape(const Mask& a, const Mask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw UsageError(std::string(what) + ": mask shapes differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                     ")");
  }
}

bool is_boundary(const Mask& m, std::size_t y, std::size_t x) {
  if (m(y, x) == 0) return false;
  if (y == 0 || x == 0 || y + 1 == m.height || x + 1 == m.width) return true;
  return m(y - 1, x) == 0 || m(y + 1, x) == 0 || m(y, x - 1) == 0 || m(y, x + 1) == 0;
}

// Lower envelope of parabolas weight*(p-q)^2 + f(q) over the finite samples.
void distance_1d(const std::vector<double>& f, double weight, std::vector<double>& d, std::vector<std::size_t>& v,
                 std::vector<double>& z) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q] + weight * static_cast<double>(q) * static_cast<double>(q);
    if (!any) {
      any = true;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    for (;;) {
      const double vk = static_cast<double>(v[k]);
      s = (fq - (f[v[k]] + weight * vk * vk)) / (2.0 * weight * (static_cast<double>(q) - vk));
      if (s > z[k] || k == 0) break;
      --k;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    while (z[k + 1] < static_cast<double>(p)) ++k;
    const double dp = static_cast<double>(p) - static_cast<double>(v[k]);
    d[p] = weight * dp * dp + f[v[k]];
  }
}

// Squared physical distance from every pixel to the nearest boundary pixel
// of `m`.
std::vector<double> boundary_sq_distance(const Mask& m, const Spacing& spacing) {
  const std::size_t h = m.height, w = m.width;
  std::vector<double> grid(h * w, kInf);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (is_boundary(m, y, x)) grid[y * w + x] = 0.0;
    }
  }
  const std::size_t n = std::max(h, w);
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  {
    std::vector<double> f(h), d(h);
    const double wy = spacing[0] * spacing[0];
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
      distance_1d(f, wy, d, v, z);
      for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
    }
  }
  {
    std::vector<double> f(w), d(w);
    const double wx = spacing[1] * spacing[1];
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
      distance_1d(f, wx, d, v, z);
      for (std::size_t x = 0; x < w; ++x) grid[y * w + x] = d[x];
    }
  }
  return grid;
}

double directed_p95(const Mask& from, const std::vector<double>& to_sq) {
  std::vector<double> d;
  for (std::size_t y = 0; y < from.height; ++y) {
    for (std::size_t x = 0; x < from.width; ++x) {
      if (is_boundary(from, y, x)) d.push_back(to_sq[y * from.width + x]);
    }
  }
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
  const std::size_t idx = rank == 0 ? 0 : rank - 1;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(idx), d.end());
  return std::sqrt(d[idx]);
}

std::size_t count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.pixels) n += v != 0 ? 1 : 0;
  return n;
}

}  // namespace

double dsc(const Mask& pred, const Mask& truth) {
  check_same_shape(pred, truth, "dsc");
  std::size_t inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.pixels[i] != 0, b = truth.pixels[i] != 0;
    inter += (a && b) ? 1 : 0;
    p += a ? 1 : 0;
    t += b ? 1 : 0;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

Hd95 hd95(const Mask& pred, const Mask& truth, const Spacing& spacing) {
  check_same_shape(pred, truth, "hd95");
  const std::size_t np = count(pred), nt = count(truth);
  if (np == 0 && nt == 0) return {0.0, false};
  if (np == 0 || nt == 0) {
    const double dy = static_cast<double>(pred.height) * spacing[0];
    const double dx = static_cast<double>(pred.width) * spacing[1];
    return {std::sqrt(dy * dy + dx * dx), true};
  }
  const auto to_truth = boundary_sq_distance(truth, spacing);
  const auto to_pred = boundary_sq_distance(pred, spacing);
  return {std::max(directed_p95(pred, to_truth), directed_p95(truth, to_pred)), true};
}

}  // namespace fednnu
