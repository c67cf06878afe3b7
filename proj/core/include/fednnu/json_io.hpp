#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "fednnu/experiment.hpp"
#include "fednnu/federation.hpp"
#include "fednnu/plan.hpp"
#include "fednnu/synthetic.hpp"

namespace fednnu {

// Text codecs. Every parser throws ConfigError with a dotted field path
// ("centers[1].noise_std: ...") on missing, mistyped, unknown or
// out-of-range fields. Writers are deterministic (sorted keys, fixed
// indentation, round-trip float formatting).

struct NodeFingerprint {
  NodeId node_id = 0;
  Fingerprint fingerprint;
};

std::string fingerprint_to_json(const NodeFingerprint& fp);
NodeFingerprint fingerprint_from_json(std::string_view text);

std::string plan_to_json(const TrainingPlan& plan);
TrainingPlan plan_from_json(std::string_view text);

std::string center_spec_to_json(const SyntheticCenterSpec& spec);
SyntheticCenterSpec center_spec_from_json(std::string_view text);

// Experiment config. `centers` is required; other fields default.
ExperimentConfig config_from_json(std::string_view text);
std::string config_to_json(const ExperimentConfig& cfg);

// Coordinator settings for `fednnu serve`.
struct ServeConfig {
  FederationSettings federation;
  std::string address = "0.0.0.0:0";
};
ServeConfig serve_config_from_json(std::string_view text);

// One node for `fednnu join`: its synthetic center plus learner settings.
struct NodeConfig {
  SyntheticCenterSpec center;
  std::uint64_t memory_budget = 8 * kGiB;
  double lr = 0.01;
  std::uint64_t seed = 0;
  bool shared_init = true;
  std::uint32_t epochs_per_round = 1;
  double test_fraction = 0.5;
  DistanceUnits hd95_units = DistanceUnits::Pixels;
  std::uint32_t timeout_s = 600;
};
NodeConfig node_config_from_json(std::string_view text);

std::string report_to_json(const MetricsReport& report);

// One row per center plus a mean row; DSC and HD95 per arm, and the best
// privacy-preserving arm (highest DSC among local, ffe, asym).
std::string report_to_csv(const MetricsReport& report);

}  // namespace fednnu
