#include "fednnu/federation.hpp"

#include <algorithm>
#include <sstream>

#include "fednnu/error.hpp"

namespace fednnu {
namespace {

std::string list_ids(const std::vector<NodeId>& ids) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  os << "]";
  return os.str();
}

}  // namespace

const char* to_string(Strategy s) { return s == Strategy::FfeFedAvg ? "ffe-fedavg" : "asym-fedavg"; }

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Registering: return "registering";
    case Phase::FingerprintCollect: return "fingerprint-collect";
    case Phase::Training: return "training";
    case Phase::Done: return "done";
    case Phase::Aborted: return "aborted";
  }
  return "unknown";
}

Coordinator::Coordinator(FederationSettings settings, ServerTransport& transport)
    : settings_(settings), transport_(transport) {
  if (settings_.expected_nodes == 0) throw UsageError("a federation needs at least one node");
  state_.expected_nodes = settings_.expected_nodes;
  state_.total_rounds = settings_.total_rounds;
  state_.strategy = settings_.strategy;
}

void Coordinator::abort(const std::string& reason) {
  state_.phase = Phase::Aborted;
  RoundMessage msg{MessageType::Abort, kServerId, state_.round, text_payload(reason)};
  for (const auto& [id, _] : state_.nodes) {
    try {
      transport_.send(id, msg);
    } catch (const Error&) {
      // The node is already gone.
    }
  }
  throw FederationAborted(reason);
}

void Coordinator::register_nodes() {
  if (state_.phase != Phase::Registering) throw UsageError("register_nodes called twice");
  const auto deadline = std::chrono::steady_clock::now() + settings_.timeout;
  const HelloReply reply{settings_.strategy == Strategy::FfeFedAvg, settings_.total_rounds,
                         settings_.expected_nodes};
  while (state_.nodes.size() < settings_.expected_nodes) {
    const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    RoundMessage msg;
    try {
      msg = transport_.receive(std::max(left, Millis(0)));
    } catch (const TimeoutError&) {
      abort("registration timed out: " + std::to_string(state_.nodes.size()) + " of " +
            std::to_string(settings_.expected_nodes) + " nodes joined");
    } catch (const VersionError&) {
      state_.phase = Phase::Aborted;
      throw;
    } catch (const Error& e) {
      abort(std::string("registration failed: ") + e.what());
    }
    if (msg.type != MessageType::Hello) {
      if (state_.nodes.count(msg.sender_id) != 0) {
        stash_.push_back(std::move(msg));
        continue;
      }
      abort("node " + std::to_string(msg.sender_id) + " sent " + to_string(msg.type) + " before Hello");
    }
    if (msg.sender_id == kServerId) abort("node used the reserved server id");
    if (state_.nodes.count(msg.sender_id) != 0) abort("duplicate Hello from node " + std::to_string(msg.sender_id));
    std::uint32_t cases = 0;
    try {
      cases = decode_node_hello(msg.payload);
    } catch (const Error& e) {
      abort(std::string("bad Hello payload: ") + e.what());
    }
    state_.nodes[msg.sender_id] = cases;
    transport_.send(msg.sender_id, RoundMessage{MessageType::Hello, kServerId, 0, encode_hello_reply(reply)});
  }
  state_.phase = settings_.strategy == Strategy::FfeFedAvg ? Phase::FingerprintCollect : Phase::Training;
}

std::map<NodeId, RoundMessage> Coordinator::collect(MessageType type, std::uint32_t round) {
  std::map<NodeId, RoundMessage> got;
  auto take = [&](RoundMessage&& msg) -> bool {
    if (msg.type == MessageType::Abort) {
      abort("node " + std::to_string(msg.sender_id) + " aborted: " + payload_text(msg.payload));
    }
    if (state_.nodes.count(msg.sender_id) == 0) {
      abort("message from unregistered node " + std::to_string(msg.sender_id));
    }
    if (msg.type != type || msg.round != round) return false;
    if (got.count(msg.sender_id) != 0) {
      abort("duplicate " + std::string(to_string(type)) + " from node " + std::to_string(msg.sender_id));
    }
    got.emplace(msg.sender_id, std::move(msg));
    return true;
  };

  std::vector<RoundMessage> keep;
  for (auto& m : stash_) {
    if (!take(std::move(m))) keep.push_back(std::move(m));
  }
  stash_ = std::move(keep);

  const auto deadline = std::chrono::steady_clock::now() + settings_.timeout;
  while (got.size() < state_.nodes.size()) {
    const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    RoundMessage msg;
    try {
      msg = transport_.receive(std::max(left, Millis(0)));
    } catch (const TimeoutError&) {
      std::vector<NodeId> missing;
      for (const auto& [id, _] : state_.nodes) {
        if (got.count(id) == 0) missing.push_back(id);
      }
      abort(std::string("timed out waiting for ") + to_string(type) + " round " + std::to_string(round) +
            " from nodes " + list_ids(missing));
    } catch (const VersionError&) {
      state_.phase = Phase::Aborted;
      throw;
    } catch (const Error& e) {
      abort(std::string("round ") + std::to_string(round) + " aborted: " + e.what());
    }
    if (!take(std::move(msg))) stash_.push_back(std::move(msg));
  }
  return got;
}

GlobalFingerprint Coordinator::run_ffe_phase() {
  if (state_.phase != Phase::FingerprintCollect) {
    throw UsageError(std::string("fingerprint phase requested in phase ") + to_string(state_.phase));
  }
  auto msgs = collect(MessageType::FingerprintSubmit, 0);
  std::vector<std::pair<NodeId, Fingerprint>> locals;
  state_.received.clear();
  for (auto& [id, msg] : msgs) {
    try {
      locals.emplace_back(id, decode_fingerprint(msg.payload));
    } catch (const Error& e) {
      abort("node " + std::to_string(id) + " sent a bad fingerprint: " + e.what());
    }
    state_.received[id] = locals.back().second;
  }
  GlobalFingerprint global;
  try {
    global = aggregate_fingerprints(locals);
  } catch (const Error& e) {
    abort(std::string("fingerprint aggregation failed: ") + e.what());
  }
  const Bytes payload = encode_global_fingerprint(global);
  for (const auto& [id, _] : state_.nodes) {
    transport_.send(id, RoundMessage{MessageType::GlobalFingerprintBcast, kServerId, 0, payload});
  }
  global_ = global;
  state_.phase = Phase::Training;
  return global;
}

RoundOutcome Coordinator::run_round() {
  if (state_.phase != Phase::Training) {
    throw UsageError(std::string("run_round called in phase ") + to_string(state_.phase));
  }
  if (state_.round >= state_.total_rounds) throw UsageError("all rounds already completed");
  const std::uint32_t t = state_.round;

  auto msgs = collect(MessageType::StateDictSubmit, t);
  std::vector<StateDict> snapshot;
  snapshot.reserve(msgs.size());
  state_.received.clear();
  for (auto& [id, msg] : msgs) {
    try {
      snapshot.push_back(decode_state_dict(msg.payload, id, t));
    } catch (const Error& e) {
      abort("node " + std::to_string(id) + " sent a bad state dict: " + e.what());
    }
    state_.received[id] = snapshot.back();
  }

  RoundOutcome out;
  out.round = t;
  try {
    out.compat = match_layers(snapshot, settings_.matching);
    AggregationOptions opts;
    opts.weighted = settings_.weighted;
    if (opts.weighted) {
      for (const auto& [id, cases] : state_.nodes) opts.weights[id] = std::max<std::uint32_t>(cases, 1);
    }
    out.aggregated = aggregate_asym(snapshot, out.compat, opts);
  } catch (const Error& e) {
    abort(std::string("aggregation failed: ") + e.what());
  }

  if (settings_.strategy == Strategy::FfeFedAvg) {
    for (const auto& sd : snapshot) {
      for (const auto& id : sd.layer_ids()) {
        auto it = out.compat.layers.find(id);
        if (it == out.compat.layers.end() || it->second.participants.count(sd.node_id()) == 0) {
          abort("architecture drift under FFE-FedAvg: layer " + id.str() + " of node " +
                std::to_string(sd.node_id()) + " is not shared by all nodes");
        }
      }
    }
  }

  for (const auto& sd : snapshot) {
    out.updates.emplace(sd.node_id(), view_for_node(out.aggregated, out.compat, sd.node_id()));
  }
  for (const auto& [id, update] : out.updates) {
    try {
      transport_.send(id, RoundMessage{MessageType::AggregateBcast, kServerId, t, encode_state_dict(update)});
    } catch (const Error& e) {
      abort("broadcast to node " + std::to_string(id) + " failed: " + e.what());
    }
  }
  collect(MessageType::RoundAck, t + 1);
  state_.round = t + 1;
  if (on_round) on_round(out);
  return out;
}

void Coordinator::shutdown() {
  for (const auto& [id, _] : state_.nodes) {
    try {
      transport_.send(id, RoundMessage{MessageType::Shutdown, kServerId, state_.round, {}});
    } catch (const Error&) {
    }
  }
  state_.phase = Phase::Done;
}

void Coordinator::run() {
  register_nodes();
  if (settings_.strategy == Strategy::FfeFedAvg) run_ffe_phase();
  while (state_.round < state_.total_rounds) run_round();
  shutdown();
}

// ---------------------------------------------------------------------------

Participant::Participant(NodeId id, LocalLearner& learner, ClientTransport& transport, Millis timeout)
    : learner_(learner), transport_(transport), timeout_(timeout) {
  if (id == kServerId) throw UsageError("node id collides with the server id");
  state_.node_id = id;
}

RoundMessage Participant::expect(MessageType type) {
  RoundMessage msg = transport_.receive(timeout_);
  if (msg.type == MessageType::Abort) {
    state_.phase = Phase::Aborted;
    throw FederationAborted("server aborted the federation: " + payload_text(msg.payload));
  }
  if (msg.type != type) {
    state_.phase = Phase::Aborted;
    throw ProtocolError(std::string("expected ") + to_string(type) + ", got " + to_string(msg.type));
  }
  return msg;
}

void Participant::run() {
  try {
    run_protocol();
  } catch (const FederationAborted&) {
    throw;
  } catch (const Error& e) {
    // Tell the coordinator so the other nodes are released promptly.
    state_.phase = Phase::Aborted;
    try {
      transport_.send(RoundMessage{MessageType::Abort, state_.node_id, state_.round, text_payload(e.what())});
    } catch (const Error&) {
    }
    throw;
  }
}

void Participant::run_protocol() {
  const NodeId id = state_.node_id;
  transport_.send(RoundMessage{MessageType::Hello, id, 0, encode_node_hello(learner_.num_train_cases())});
  const HelloReply reply = decode_hello_reply(expect(MessageType::Hello).payload);
  state_.total_rounds = reply.total_rounds;

  if (reply.fingerprint_required) {
    state_.phase = Phase::FingerprintCollect;
    transport_.send(RoundMessage{MessageType::FingerprintSubmit, id, 0, encode_fingerprint(learner_.fingerprint())});
    state_.fingerprint = decode_global_fingerprint(expect(MessageType::GlobalFingerprintBcast).payload);
  } else {
    const std::vector<std::pair<NodeId, Fingerprint>> own{{id, learner_.fingerprint()}};
    state_.fingerprint = aggregate_fingerprints(own);
  }
  learner_.configure(*state_.fingerprint);
  state_.phase = Phase::Training;

  for (std::uint32_t t = 0; t < reply.total_rounds; ++t) {
    learner_.train_round(t);
    StateDict local = learner_.state();
    local.set_node_id(id);
    local.set_round(t);
    transport_.send(RoundMessage{MessageType::StateDictSubmit, id, t, encode_state_dict(local)});

    const RoundMessage msg = expect(MessageType::AggregateBcast);
    if (msg.round != t) {
      state_.phase = Phase::Aborted;
      throw ProtocolError("aggregate for round " + std::to_string(msg.round) + " while in round " +
                          std::to_string(t));
    }
    const StateDict aggregated = decode_state_dict(msg.payload, kServerId, t);
    const StateDict updated = apply_update(local, aggregated);
    std::size_t overwritten = 0;
    for (const auto& lid : local.layer_ids()) overwritten += aggregated.contains(lid) ? 1 : 0;
    state_.last_overwritten = overwritten;
    state_.last_kept = local.size() - overwritten;
    learner_.load(updated);
    state_.round = t + 1;
    transport_.send(RoundMessage{MessageType::RoundAck, id, t + 1, {}});
  }
  expect(MessageType::Shutdown);
  state_.phase = Phase::Done;
}

}  // namespace fednnu
