#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fednnu/image.hpp"
#include "fednnu/state_dict.hpp"

namespace fednnu {

// Compact summary of one node's dataset.
struct Fingerprint {
  std::vector<std::array<std::uint32_t, 2>> shapes_after_crop;
  std::vector<Spacing> spacings;
  double intensity_mean = 0.0;
  double intensity_std = 0.0;
  std::uint32_t num_cases = 0;

  // Throws UsageError when the list lengths or value ranges are off.
  void validate() const;

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

struct GlobalFingerprint {
  Fingerprint fingerprint;
  std::vector<NodeId> contributor_order;

  friend bool operator==(const GlobalFingerprint&, const GlobalFingerprint&) = default;
};

struct TrainingPlan {
  Spacing target_spacing{1.0, 1.0};
  std::array<std::uint32_t, 2> patch_size{32, 32};
  std::uint32_t num_stages = 4;
  std::vector<std::uint32_t> features_per_stage;
  std::uint32_t batch_size = 2;
  double intensity_mean = 0.0;
  double intensity_std = 1.0;

  // Checks divisibility, stage range and the feature ladder.
  void validate() const;

  friend bool operator==(const TrainingPlan&, const TrainingPlan&) = default;
};

inline constexpr std::uint32_t kMinPatch = 32;
inline constexpr std::uint32_t kMaxPatch = 512;
inline constexpr std::uint32_t kMinStages = 2;
inline constexpr std::uint32_t kMaxStages = 8;
inline constexpr std::uint32_t kMinShapeAfterCrop = 8;
inline constexpr std::uint64_t kMiB = 1024ull * 1024ull;
inline constexpr std::uint64_t kGiB = 1024ull * kMiB;

// min(32 * 2^i, 512) for i in [0, num_stages).
std::vector<std::uint32_t> features_for_stages(std::uint32_t num_stages);

// 8 bytes * batch * sum_i (P/2^i)^2 * F_i * 3 (activations, grads, workspace).
std::uint64_t estimate_memory_bytes(std::uint32_t patch, std::uint32_t num_stages, std::uint32_t batch);

// Hand-built plan for a given patch and depth (tests, fixed-architecture runs).
TrainingPlan plan_for(std::uint32_t patch, std::uint32_t num_stages, std::uint32_t batch_size = 2);

Fingerprint extract_fingerprint(std::span<const Case> dataset);

// Concatenates local fingerprints in ascending node id order and pools the
// intensity moments by case count.
GlobalFingerprint aggregate_fingerprints(std::span<const std::pair<NodeId, Fingerprint>> locals);

// Deterministic plan from a global fingerprint and a local memory budget.
TrainingPlan make_plan(const GlobalFingerprint& global, std::uint64_t memory_budget_bytes);

}  // namespace fednnu
