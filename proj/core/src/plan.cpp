#include "fednnu/plan.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <string>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

// Fraction of the (rescaled) dataset one batch may cover.
constexpr double kMaxBatchCoverage = 0.05;

double lower_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

struct Moments {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    n += 1.0;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }

  void merge(const Moments& o) {
    if (o.n == 0.0) return;
    if (n == 0.0) {
      *this = o;
      return;
    }
    const double total = n + o.n;
    const double d = o.mean - mean;
    mean += d * (o.n / total);
    m2 += o.m2 + d * d * (n * o.n / total);
    n = total;
  }
};

}  // namespace

void Fingerprint::validate() const {
  if (num_cases == 0) throw UsageError("fingerprint has no cases");
  if (shapes_after_crop.size() != num_cases || spacings.size() != num_cases) {
    throw UsageError("fingerprint lists disagree with num_cases=" + std::to_string(num_cases));
  }
  for (const auto& s : spacings) {
    if (!(s[0] > 0.0) || !(s[1] > 0.0) || !std::isfinite(s[0]) || !std::isfinite(s[1])) {
      throw UsageError("fingerprint spacings must be positive and finite");
    }
  }
  for (const auto& s : shapes_after_crop) {
    if (s[0] < kMinShapeAfterCrop || s[1] < kMinShapeAfterCrop) {
      throw UsageError("fingerprint shapes must be >= " + std::to_string(kMinShapeAfterCrop));
    }
  }
  if (!std::isfinite(intensity_mean) || !std::isfinite(intensity_std) || intensity_std < 0.0) {
    throw UsageError("fingerprint intensity statistics must be finite with std >= 0");
  }
}

void TrainingPlan::validate() const {
  if (num_stages < kMinStages || num_stages > kMaxStages) {
    throw ConfigError("plan num_stages " + std::to_string(num_stages) + " outside [2,8]");
  }
  if (patch_size[0] != patch_size[1]) throw ConfigError("plan patch must be square");
  const std::uint32_t step = 1u << (num_stages - 1);
  if (patch_size[0] == 0 || patch_size[0] % step != 0) {
    throw ConfigError("plan patch " + std::to_string(patch_size[0]) + " not divisible by " + std::to_string(step));
  }
  if (features_per_stage != features_for_stages(num_stages)) throw ConfigError("plan feature ladder is off");
  if (batch_size == 0) throw ConfigError("plan batch_size must be positive");
  if (!(target_spacing[0] > 0.0) || !(target_spacing[1] > 0.0)) throw ConfigError("plan spacing must be positive");
}

std::vector<std::uint32_t> features_for_stages(std::uint32_t num_stages) {
  std::vector<std::uint32_t> f(num_stages);
  for (std::uint32_t i = 0; i < num_stages; ++i) f[i] = std::min<std::uint32_t>(32u << std::min(i, 5u), 512u);
  return f;
}

std::uint64_t estimate_memory_bytes(std::uint32_t patch, std::uint32_t num_stages, std::uint32_t batch) {
  const auto features = features_for_stages(num_stages);
  std::uint64_t per_sample = 0;
  for (std::uint32_t i = 0; i < num_stages; ++i) {
    const std::uint64_t side = patch >> i;
    per_sample += side * side * features[i];
  }
  return 8ull * batch * per_sample * 3ull;
}

TrainingPlan plan_for(std::uint32_t patch, std::uint32_t num_stages, std::uint32_t batch_size) {
  TrainingPlan plan;
  plan.patch_size = {patch, patch};
  plan.num_stages = num_stages;
  plan.features_per_stage = features_for_stages(num_stages);
  plan.batch_size = batch_size;
  plan.validate();
  return plan;
}

Fingerprint extract_fingerprint(std::span<const Case> dataset) {
  if (dataset.empty()) throw UsageError("extract_fingerprint: empty dataset");
  Fingerprint fp;
  Moments pooled;
  for (std::size_t idx = 0; idx < dataset.size(); ++idx) {
    const Case& c = dataset[idx];
    const std::size_t h = c.image.height, w = c.image.width;
    if (c.mask.height != h || c.mask.width != w || c.image.size() != h * w || c.mask.size() != h * w) {
      throw UsageError("case " + std::to_string(idx) + ": mask and image shapes differ");
    }
    if (h < kMinShapeAfterCrop || w < kMinShapeAfterCrop) {
      throw UsageError("case " + std::to_string(idx) + ": image smaller than 8x8");
    }
    std::size_t y0 = h, y1 = 0, x0 = w, x1 = 0;
    Moments local;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double v = c.image(y, x);
        const auto m = c.mask(y, x);
        if (m > 1) throw UsageError("case " + std::to_string(idx) + ": mask is not binary");
        if (v != 0.0) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
        if (m == 1) local.push(v);
      }
    }
    std::size_t ch = h, cw = w;
    if (y0 <= y1 && x0 <= x1) {
      ch = std::max<std::size_t>(y1 - y0 + 1, kMinShapeAfterCrop);
      cw = std::max<std::size_t>(x1 - x0 + 1, kMinShapeAfterCrop);
    }
    fp.shapes_after_crop.push_back({static_cast<std::uint32_t>(ch), static_cast<std::uint32_t>(cw)});
    fp.spacings.push_back(c.spacing);
    pooled.merge(local);
  }
  fp.num_cases = static_cast<std::uint32_t>(dataset.size());
  if (pooled.n > 0.0) {
    fp.intensity_mean = pooled.mean;
    fp.intensity_std = std::sqrt(std::max(0.0, pooled.m2 / pooled.n));
  }
  fp.validate();
  return fp;
}

GlobalFingerprint aggregate_fingerprints(std::span<const std::pair<NodeId, Fingerprint>> locals) {
  if (locals.empty()) throw UsageError("aggregate_fingerprints needs at least one contributor");
  std::map<NodeId, const Fingerprint*> ordered;
  for (const auto& [id, fp] : locals) {
    if (!ordered.emplace(id, &fp).second) {
      throw ProtocolError("duplicate fingerprint from node " + std::to_string(id));
    }
    fp.validate();
  }

  GlobalFingerprint g;
  Fingerprint& out = g.fingerprint;
  std::uint64_t total = 0;
  for (const auto& [id, fp] : ordered) {
    g.contributor_order.push_back(id);
    out.shapes_after_crop.insert(out.shapes_after_crop.end(), fp->shapes_after_crop.begin(),
                                 fp->shapes_after_crop.end());
    out.spacings.insert(out.spacings.end(), fp->spacings.begin(), fp->spacings.end());
    total += fp->num_cases;
  }
  out.num_cases = static_cast<std::uint32_t>(total);

  // Pooled moments weighted by case fraction; a single contributor passes
  // through unchanged.
  double mean = 0.0;
  for (const auto& [id, fp] : ordered) {
    mean += (static_cast<double>(fp->num_cases) / static_cast<double>(total)) * fp->intensity_mean;
  }
  double var = 0.0;
  for (const auto& [id, fp] : ordered) {
    const double d = fp->intensity_mean - mean;
    var += (static_cast<double>(fp->num_cases) / static_cast<double>(total)) *
           (fp->intensity_std * fp->intensity_std + d * d);
  }
  out.intensity_mean = mean;
  out.intensity_std = std::sqrt(var);
  return g;
}

TrainingPlan make_plan(const GlobalFingerprint& global, std::uint64_t memory_budget_bytes) {
  const Fingerprint& fp = global.fingerprint;
  fp.validate();
  if (memory_budget_bytes == 0) throw ConfigError("memory budget must be positive");

  TrainingPlan plan;
  std::vector<double> sy, sx;
  for (const auto& s : fp.spacings) {
    sy.push_back(s[0]);
    sx.push_back(s[1]);
  }
  plan.target_spacing = {lower_median(sy), lower_median(sx)};

  std::vector<double> rh, rw;
  double rescaled_voxels = 0.0;
  for (std::size_t i = 0; i < fp.num_cases; ++i) {
    const double h = fp.shapes_after_crop[i][0] * fp.spacings[i][0] / plan.target_spacing[0];
    const double w = fp.shapes_after_crop[i][1] * fp.spacings[i][1] / plan.target_spacing[1];
    rh.push_back(h);
    rw.push_back(w);
    rescaled_voxels += h * w;
  }
  const double min_axis = std::min(lower_median(rh), lower_median(rw));

  std::uint32_t patch = 1;
  while (static_cast<double>(patch) * 2.0 <= min_axis && patch < kMaxPatch) patch *= 2;
  patch = std::clamp(patch, kMinPatch, kMaxPatch);

  for (;;) {
    const auto stages = std::clamp<std::uint32_t>(static_cast<std::uint32_t>(std::bit_width(patch)) - 2,
                                                  kMinStages, kMaxStages);
    const std::uint64_t per_sample = estimate_memory_bytes(patch, stages, 1);
    const std::uint64_t fit = memory_budget_bytes / per_sample;
    if (fit >= 2) {
      const double coverage = kMaxBatchCoverage * rescaled_voxels / (static_cast<double>(patch) * patch);
      const auto cap = static_cast<std::uint64_t>(std::max(2.0, std::floor(coverage)));
      plan.patch_size = {patch, patch};
      plan.num_stages = stages;
      plan.features_per_stage = features_for_stages(stages);
      plan.batch_size = static_cast<std::uint32_t>(std::min(fit, cap));
      break;
    }
    if (patch <= kMinPatch) {
      throw ConfigError("memory budget of " + std::to_string(memory_budget_bytes) +
                        " bytes cannot fit patch 32 with batch 2 (needs " +
                        std::to_string(estimate_memory_bytes(kMinPatch, 4, 2)) + ")");
    }
    patch /= 2;
  }

  plan.intensity_mean = fp.intensity_mean;
  plan.intensity_std = fp.intensity_std;
  plan.validate();
  return plan;
}

}  // namespace fednnu
