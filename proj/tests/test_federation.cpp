#include <gtest/gtest.h>

#include <mutex>
#include <random>
#include <thread>

#include "fednnu/error.hpp"
#include "fednnu/experiment.hpp"
#include "fednnu/federation.hpp"
#include "fednnu/synthetic.hpp"
#include "fednnu/tensor_ops.hpp"
#include "support/oracles.hpp"

using namespace fednnu;
using namespace std::chrono_literals;

namespace {

// Tracks the round each node is currently training, for the lockstep check.
struct RoundBoard {
  std::mutex mu;
  std::map<NodeId, std::uint32_t> current;
  std::uint32_t max_spread = 0;

  void enter(NodeId id, std::uint32_t round) {
    std::lock_guard lock(mu);
    current[id] = round;
    std::uint32_t lo = UINT32_MAX, hi = 0;
    for (const auto& [_, r] : current) {
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    max_spread = std::max(max_spread, hi - lo);
  }
};

// Deterministic stand-in for a training node: each round scales and shifts
// every parameter by a node- and round-dependent amount.
class StubLearner : public LocalLearner {
 public:
  StubLearner(NodeId id, StateDict init, Fingerprint fp, RoundBoard* board = nullptr,
              std::optional<std::uint32_t> fail_at = std::nullopt)
      : id_(id), sd_(std::move(init)), fp_(std::move(fp)), board_(board), fail_at_(fail_at) {}

  Fingerprint fingerprint() const override { return fp_; }
  std::uint32_t num_train_cases() const override { return fp_.num_cases; }
  void configure(const GlobalFingerprint& g) override { global = g; }
  void train_round(std::uint32_t round) override {
    if (board_) board_->enter(id_, round);
    if (fail_at_ && *fail_at_ == round) throw NumericError("non-finite loss at batch 0");
    StateDict next(id_, round);
    for (const auto& [lid, t] : sd_.entries()) {
      Tensor u = t;
      for (auto& v : u.values()) v = 0.5 * v + 0.01 * id_ + 0.001 * round;
      next.insert(lid, std::move(u));
    }
    sd_ = std::move(next);
    submitted.push_back(sd_);
  }
  StateDict state() const override { return sd_; }
  void load(const StateDict& sd) override {
    sd_ = sd;
    loaded.push_back(sd);
  }

  std::optional<GlobalFingerprint> global;
  std::vector<StateDict> submitted;
  std::vector<StateDict> loaded;

 private:
  NodeId id_;
  StateDict sd_;
  Fingerprint fp_;
  RoundBoard* board_;
  std::optional<std::uint32_t> fail_at_;
};

Fingerprint small_fp(std::uint32_t n, std::uint32_t side) {
  Fingerprint fp;
  fp.num_cases = n;
  fp.shapes_after_crop.assign(n, {side, side});
  fp.spacings.assign(n, {1.0, 1.0});
  fp.intensity_std = 1.0;
  return fp;
}

FederationSettings settings(Strategy s, std::uint32_t nodes, std::uint32_t rounds) {
  FederationSettings fs;
  fs.strategy = s;
  fs.expected_nodes = nodes;
  fs.total_rounds = rounds;
  fs.timeout = 20s;
  return fs;
}

std::map<NodeId, LocalLearner*> as_map(std::vector<std::unique_ptr<StubLearner>>& v, const std::vector<NodeId>& ids) {
  std::map<NodeId, LocalLearner*> m;
  for (std::size_t i = 0; i < v.size(); ++i) m[ids[i]] = v[i].get();
  return m;
}

// Oracle for round t: compat by brute force over the submitted dicts, mean in
// node order; each node's post-round dict keeps its own value elsewhere.
void expect_round_matches_oracle(const std::vector<std::unique_ptr<StubLearner>>& nodes, std::size_t t,
                                 bool strict) {
  std::vector<oracle::FlatDict> flat;
  for (const auto& n : nodes) flat.push_back(oracle::flatten(n->submitted.at(t)));
  const auto compat = oracle::compatible(flat, strict);
  const auto means = oracle::layer_means(flat, compat);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const StateDict& before = nodes[k]->submitted.at(t);
    const StateDict& after = nodes[k]->loaded.at(t);
    ASSERT_EQ(after.size(), before.size());
    EXPECT_EQ(after.round(), t + 1);
    for (const auto& [id, tensor] : after.entries()) {
      auto it = compat.find(id.str());
      const bool participates = it != compat.end() && it->second.nodes.count(before.node_id()) != 0;
      if (!participates) {
        EXPECT_TRUE(bit_equal(tensor, before.at(id))) << id.str();
        continue;
      }
      const auto& m = means.at(id.str());
      for (std::size_t i = 0; i < m.size(); ++i) ASSERT_TRUE(oracle::same_bits(tensor[i], m[i])) << id.str();
    }
  }
}

}  // namespace

TEST(Federation, SingleNodeIsMeanOfOne) {
  std::mt19937_64 rng(1);
  std::vector<std::unique_ptr<StubLearner>> nodes;
  nodes.push_back(std::make_unique<StubLearner>(5, oracle::random_model_dict(rng, 5, 3), small_fp(2, 32)));
  run_federation(settings(Strategy::FfeFedAvg, 1, 3), as_map(nodes, {5}), Carrier::Sim, "", {});
  ASSERT_EQ(nodes[0]->loaded.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_TRUE(bit_equal(nodes[0]->loaded[t], nodes[0]->submitted[t]));
  EXPECT_EQ(nodes[0]->global->fingerprint, small_fp(2, 32));
}

TEST(Federation, ThreeIdenticalArchitecturesMatchFlatMean) {
  std::mt19937_64 rng(2);
  std::vector<std::unique_ptr<StubLearner>> nodes;
  const std::vector<NodeId> ids{3, 1, 2};
  for (NodeId id : ids) nodes.push_back(std::make_unique<StubLearner>(id, oracle::random_model_dict(rng, id, 4), small_fp(id, 40)));
  std::vector<RoundOutcome> outcomes;
  run_federation(settings(Strategy::FfeFedAvg, 3, 4), as_map(nodes, ids), Carrier::Sim, "", {},
                 [&](const RoundOutcome& o) { outcomes.push_back(o); });
  ASSERT_EQ(outcomes.size(), 4u);
  for (std::size_t t = 0; t < 4; ++t) {
    expect_round_matches_oracle(nodes, t, true);
    // Post-round agreement: every node holds the same dict.
    for (const auto& n : nodes) EXPECT_TRUE(bit_equal(n->loaded[t], nodes[0]->loaded[t]));
    EXPECT_EQ(outcomes[t].compat.size(), nodes[0]->submitted[t].size());
  }
  // All nodes received the same global fingerprint, concatenated in node order.
  for (const auto& n : nodes) EXPECT_EQ(*n->global, *nodes[0]->global);
  EXPECT_EQ(nodes[0]->global->contributor_order, (std::vector<NodeId>{1, 2, 3}));
  EXPECT_EQ(nodes[0]->global->fingerprint.num_cases, 6u);
}

TEST(Federation, AsymSevenVersusEightStages) {
  std::mt19937_64 rng(3);
  std::vector<std::unique_ptr<StubLearner>> nodes;
  nodes.push_back(std::make_unique<StubLearner>(1, oracle::random_model_dict(rng, 1, 7, 2, 16), small_fp(2, 256)));
  nodes.push_back(std::make_unique<StubLearner>(2, oracle::random_model_dict(rng, 2, 8, 2, 16), small_fp(2, 512)));
  run_federation(settings(Strategy::AsymFedAvg, 2, 2), as_map(nodes, {1, 2}), Carrier::Sim, "", {});
  for (std::size_t t = 0; t < 2; ++t) expect_round_matches_oracle(nodes, t, true);
  // Without an FFE phase each node configures from its own fingerprint.
  EXPECT_EQ(nodes[0]->global->fingerprint, small_fp(2, 256));
  EXPECT_EQ(nodes[1]->global->fingerprint, small_fp(2, 512));
  const StateDict& last = nodes[1]->loaded.back();
  EXPECT_TRUE(bit_equal(last.at(LayerId::encoder(7, LayerId::Kind::Weight)),
                        nodes[1]->submitted.back().at(LayerId::encoder(7, LayerId::Kind::Weight))));
}

TEST(Federation, AsymSubsetModeWithJitteredWidths) {
  std::mt19937_64 rng(4);
  std::vector<std::unique_ptr<StubLearner>> nodes;
  std::vector<NodeId> ids{1, 2, 3, 4};
  for (NodeId id : ids)
    nodes.push_back(std::make_unique<StubLearner>(id, oracle::random_model_dict(rng, id, 2 + id, 1, 4, true), small_fp(1, 32)));
  FederationSettings fs = settings(Strategy::AsymFedAvg, 4, 3);
  fs.matching = MatchMode::Subset;
  run_federation(fs, as_map(nodes, ids), Carrier::Sim, "", {});
  for (std::size_t t = 0; t < 3; ++t) expect_round_matches_oracle(nodes, t, false);
}

TEST(Federation, LockstepNeverExceedsOneRound) {
  std::mt19937_64 rng(5);
  RoundBoard board;
  std::vector<std::unique_ptr<StubLearner>> nodes;
  std::vector<NodeId> ids{1, 2, 3, 4, 5};
  for (NodeId id : ids)
    nodes.push_back(std::make_unique<StubLearner>(id, oracle::random_model_dict(rng, id, 3), small_fp(1, 32), &board));
  run_federation(settings(Strategy::FfeFedAvg, 5, 10), as_map(nodes, ids), Carrier::Sim, "", LatencyModel{7, 5});
  EXPECT_LE(board.max_spread, 1u);
}

TEST(Federation, FfeArchitectureDriftAbortsNamingTheLayer) {
  std::mt19937_64 rng(6);
  std::vector<std::unique_ptr<StubLearner>> nodes;
  nodes.push_back(std::make_unique<StubLearner>(1, oracle::random_model_dict(rng, 1, 3), small_fp(1, 32)));
  nodes.push_back(std::make_unique<StubLearner>(2, oracle::random_model_dict(rng, 2, 4), small_fp(1, 32)));
  try {
    run_federation(settings(Strategy::FfeFedAvg, 2, 2), as_map(nodes, {1, 2}), Carrier::Sim, "", {});
    FAIL() << "expected an abort";
  } catch (const FederationAborted& e) {
    EXPECT_NE(std::string(e.what()).find("architecture drift"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("enc.3.conv"), std::string::npos) << e.what();
  }
  // Crash atomicity: nobody applied round 0.
  for (const auto& n : nodes) EXPECT_TRUE(n->loaded.empty());
}

TEST(Federation, NodeFailureAbortsEveryone) {
  std::mt19937_64 rng(7);
  std::vector<std::unique_ptr<StubLearner>> nodes;
  nodes.push_back(std::make_unique<StubLearner>(1, oracle::random_model_dict(rng, 1, 3), small_fp(1, 32)));
  nodes.push_back(std::make_unique<StubLearner>(2, oracle::random_model_dict(rng, 2, 3), small_fp(1, 32), nullptr, 2u));
  const auto start = std::chrono::steady_clock::now();
  try {
    run_federation(settings(Strategy::FfeFedAvg, 2, 5), as_map(nodes, {1, 2}), Carrier::Sim, "", {});
    FAIL() << "expected an abort";
  } catch (const FederationAborted& e) {
    EXPECT_NE(std::string(e.what()).find("node 2 aborted"), std::string::npos) << e.what();
  }
  EXPECT_LT(std::chrono::steady_clock::now() - start, 10s);
  EXPECT_EQ(nodes[0]->loaded.size(), 2u);
  EXPECT_EQ(nodes[1]->loaded.size(), 2u);
}

TEST(Federation, SilentNodeTimesOutListingMissingIds) {
  auto net = SimNetwork::create();
  auto server_ep = net->server_endpoint();
  auto live_ep = net->node_endpoint(1);
  auto silent_ep = net->node_endpoint(7);
  FederationSettings fs = settings(Strategy::AsymFedAvg, 2, 3);
  fs.timeout = 300ms;
  Coordinator coord(fs, *server_ep);
  std::mt19937_64 rng(8);
  StubLearner learner(1, oracle::random_model_dict(rng, 1, 2), small_fp(1, 32));
  Participant p(1, learner, *live_ep, 5s);
  silent_ep->send(RoundMessage{MessageType::Hello, 7, 0, encode_node_hello(1)});
  std::exception_ptr node_error;
  std::thread t([&] {
    try {
      p.run();
    } catch (...) {
      node_error = std::current_exception();
    }
  });
  try {
    coord.run();
    FAIL() << "expected an abort";
  } catch (const FederationAborted& e) {
    EXPECT_NE(std::string(e.what()).find("from nodes [7]"), std::string::npos) << e.what();
  }
  t.join();
  EXPECT_EQ(coord.state().phase, Phase::Aborted);
  ASSERT_TRUE(node_error);
  EXPECT_THROW(std::rethrow_exception(node_error), FederationAborted);
  EXPECT_EQ(p.state().phase, Phase::Aborted);
  EXPECT_TRUE(learner.loaded.empty());
}

TEST(Federation, RegistrationTimeout) {
  auto net = SimNetwork::create();
  auto server_ep = net->server_endpoint();
  FederationSettings fs = settings(Strategy::FfeFedAvg, 2, 1);
  fs.timeout = 100ms;
  Coordinator coord(fs, *server_ep);
  EXPECT_THROW(coord.run(), FederationAborted);
}

TEST(Federation, TcpCarrierMatchesSim) {
  auto run = [](Carrier c) {
    std::mt19937_64 rng(9);
    std::vector<std::unique_ptr<StubLearner>> nodes;
    std::vector<NodeId> ids{1, 2, 3};
    for (NodeId id : ids)
      nodes.push_back(std::make_unique<StubLearner>(id, oracle::random_model_dict(rng, id, 2 + id), small_fp(1, 32)));
    run_federation(settings(Strategy::AsymFedAvg, 3, 3), as_map(nodes, ids), c, "127.0.0.1:0", {});
    std::vector<StateDict> out;
    for (const auto& n : nodes) out.push_back(n->state());
    return out;
  };
  const auto sim = run(Carrier::Sim), tcp = run(Carrier::Tcp);
  ASSERT_EQ(sim.size(), tcp.size());
  for (std::size_t i = 0; i < sim.size(); ++i) EXPECT_TRUE(bit_equal(sim[i], tcp[i]));
}

TEST(Federation, FfeBudgetsOnlyChangeBatch) {
  // Real fingerprints of four synthetic centers; node 4 has half the budget.
  std::vector<std::pair<NodeId, Fingerprint>> locals;
  for (NodeId id = 1; id <= 4; ++id) {
    SyntheticCenterSpec spec;
    spec.center_id = id;
    spec.image_size = {256 + 64 * id, 256 + 64 * id};
    spec.num_cases = 3;
    spec.seed = id;
    locals.emplace_back(id, extract_fingerprint(gen_center(spec)));
  }
  const GlobalFingerprint g = aggregate_fingerprints(locals);
  std::map<NodeId, TrainingPlan> plans;
  for (NodeId id = 1; id <= 4; ++id) plans[id] = make_plan(g, (id == 4 ? 4 : 8) * kGiB);
  for (NodeId id = 1; id <= 3; ++id) EXPECT_EQ(plans[id], plans[1]);
  EXPECT_LE(plans[4].batch_size, plans[1].batch_size);
  EXPECT_EQ(plans[4].patch_size, plans[1].patch_size);
  EXPECT_EQ(plans[4].num_stages, plans[1].num_stages);
  EXPECT_EQ(plans[4].features_per_stage, plans[1].features_per_stage);
}

TEST(Federation, ParticipantRejectsReservedId) {
  auto net = SimNetwork::create();
  auto ep = net->node_endpoint(1);
  std::mt19937_64 rng(1);
  StubLearner l(1, oracle::random_model_dict(rng, 1, 2), small_fp(1, 32));
  EXPECT_THROW(Participant(kServerId, l, *ep), UsageError);
}
