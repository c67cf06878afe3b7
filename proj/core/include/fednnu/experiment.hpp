#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fednnu/aggregation.hpp"
#include "fednnu/synthetic.hpp"
#include "fednnu/training.hpp"
#include "fednnu/transport.hpp"

namespace fednnu {

enum class Arm { Local, Centralized, Ffe, Asym };

const char* to_string(Arm a);
Arm arm_from_string(std::string_view s);

enum class Carrier { Sim, Tcp };

const char* to_string(Carrier c);
Carrier carrier_from_string(std::string_view s);

struct ExperimentConfig {
  std::vector<Arm> arms{Arm::Local, Arm::Centralized, Arm::Ffe, Arm::Asym};
  std::vector<SyntheticCenterSpec> centers;
  // Bytes, one per center (same order as `centers`).
  std::vector<std::uint64_t> budgets;
  std::uint32_t rounds = 30;
  double lr = 0.01;
  std::uint64_t seed = 0;
  MatchMode matching = MatchMode::Strict;
  bool weighted = false;
  // Unset: on for the federated arms, off for local and centralized.
  std::optional<bool> shared_init;
  std::uint32_t epochs_per_round = 1;
  // The last round(num_cases * test_fraction) cases of each center are held out.
  double test_fraction = 0.5;
  Carrier transport = Carrier::Sim;
  std::string address = "127.0.0.1:0";
  LatencyModel latency;
  DistanceUnits hd95_units = DistanceUnits::Pixels;
  std::string output;
  std::uint32_t timeout_s = 600;

  // Throws ConfigError naming the offending field.
  void validate() const;
  std::uint64_t budget_for(NodeId center) const;
  bool shared_init_for(Arm arm) const;
};

struct CenterSplit {
  Dataset train;
  Dataset test;
};

CenterSplit split_center(const Dataset& cases, double test_fraction);

struct CenterResult {
  NodeId center_id = 0;
  EvalSummary eval;
};

struct ArmResult {
  Arm arm = Arm::Local;
  std::vector<CenterResult> centers;
  // Per trained model; the centralized arm has one entry under the lowest center id.
  std::map<NodeId, TrainingPlan> plans;
  std::map<NodeId, StateDict> final_states;
  // Messages sent over the carrier by the coordinator and all nodes.
  std::uint64_t messages_sent = 0;

  double mean_dsc() const;
  const CenterResult& center(NodeId id) const;
};

struct MetricsReport {
  std::uint32_t rounds = 0;
  std::uint64_t seed = 0;
  DistanceUnits units = DistanceUnits::Pixels;
  std::vector<ArmResult> arms;

  const ArmResult& arm(Arm a) const;
};

using ExperimentLog = std::function<void(const std::string&)>;

ArmResult run_arm(const ExperimentConfig& cfg, Arm arm, const ExperimentLog& log = {});
MetricsReport run_experiment(const ExperimentConfig& cfg, const ExperimentLog& log = {});

// Federation over an arbitrary set of learners: coordinator and nodes on
// threads, connected by the configured carrier. Rethrows the first failure
// (coordinator first). Returns the number of messages sent by all parties.
std::uint64_t run_federation(const FederationSettings& settings, std::map<NodeId, LocalLearner*> learners,
                             Carrier carrier, const std::string& address, const LatencyModel& latency,
                             const std::function<void(const RoundOutcome&)>& on_round = {});

}  // namespace fednnu
