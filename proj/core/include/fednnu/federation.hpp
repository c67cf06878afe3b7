#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fednnu/aggregation.hpp"
#include "fednnu/plan.hpp"
#include "fednnu/transport.hpp"

namespace fednnu {

enum class Strategy {
  // Shared global fingerprint, identical architectures, plain averaging;
  // any layer left out of the compatible set is a protocol error.
  FfeFedAvg,
  // Local fingerprints, per-node architectures, average the common layers.
  AsymFedAvg,
};

const char* to_string(Strategy s);

enum class Phase { Registering, FingerprintCollect, Training, Done, Aborted };

const char* to_string(Phase p);

struct FederationSettings {
  Strategy strategy = Strategy::FfeFedAvg;
  std::uint32_t expected_nodes = 1;
  std::uint32_t total_rounds = 1;
  MatchMode matching = MatchMode::Strict;
  bool weighted = false;
  Millis timeout{600'000};
};

struct ServerState {
  Phase phase = Phase::Registering;
  std::uint32_t expected_nodes = 0;
  std::uint32_t round = 0;
  std::uint32_t total_rounds = 0;
  Strategy strategy = Strategy::FfeFedAvg;
  // Snapshot of the current phase's submissions.
  std::map<NodeId, std::variant<Fingerprint, StateDict>> received;
  // Registered nodes and their announced training-set sizes.
  std::map<NodeId, std::uint32_t> nodes;
};

// Result of one aggregation round as seen by the coordinator.
struct RoundOutcome {
  std::uint32_t round = 0;
  CompatibleSet compat;
  StateDict aggregated;
  // What each node was sent (aggregate restricted to its participation).
  std::map<NodeId, StateDict> updates;
};

// The coordinating server. Single-threaded: it drains its transport's
// receive queue and runs aggregation for round t on an immutable snapshot of
// all K submissions. Any missing submission aborts the round for everyone.
class Coordinator {
 public:
  Coordinator(FederationSettings settings, ServerTransport& transport);

  // Registration, optional fingerprint phase, all rounds, shutdown.
  void run();

  void register_nodes();
  GlobalFingerprint run_ffe_phase();
  RoundOutcome run_round();
  void shutdown();

  const ServerState& state() const { return state_; }
  const std::optional<GlobalFingerprint>& global_fingerprint() const { return global_; }
  std::function<void(const RoundOutcome&)> on_round;

 private:
  // Waits for one message of `type` (for `round`) from every registered node.
  std::map<NodeId, RoundMessage> collect(MessageType type, std::uint32_t round);
  [[noreturn]] void abort(const std::string& reason);

  FederationSettings settings_;
  ServerTransport& transport_;
  ServerState state_;
  std::optional<GlobalFingerprint> global_;
  std::vector<RoundMessage> stash_;
};

// What a node trains. The federation layer never looks inside the model.
class LocalLearner {
 public:
  virtual ~LocalLearner() = default;
  virtual Fingerprint fingerprint() const = 0;
  virtual std::uint32_t num_train_cases() const = 0;
  // Derives the local plan from a (global or local) fingerprint and builds
  // the model.
  virtual void configure(const GlobalFingerprint& fingerprint) = 0;
  virtual void train_round(std::uint32_t round) = 0;
  virtual StateDict state() const = 0;
  virtual void load(const StateDict& sd) = 0;
};

struct NodeState {
  NodeId node_id = 0;
  Phase phase = Phase::Registering;
  std::uint32_t round = 0;
  std::uint32_t total_rounds = 0;
  std::optional<GlobalFingerprint> fingerprint;
  // Layers overwritten and kept by the most recent update.
  std::size_t last_overwritten = 0;
  std::size_t last_kept = 0;
};

// A federation participant. Trains round t+1 only after applying the
// coordinator's update for round t.
class Participant {
 public:
  Participant(NodeId id, LocalLearner& learner, ClientTransport& transport, Millis timeout = Millis(600'000));

  void run();

  const NodeState& state() const { return state_; }

 private:
  RoundMessage expect(MessageType type);
  void run_protocol();

  LocalLearner& learner_;
  ClientTransport& transport_;
  Millis timeout_;
  NodeState state_;
};

}  // namespace fednnu
