#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "fednnu/aggregation.hpp"
#include "fednnu/error.hpp"
#include "fednnu/tensor_ops.hpp"
#include "support/oracles.hpp"

using namespace fednnu;
using K = LayerId::Kind;

namespace {

StateDict single(NodeId node, const LayerId& id, const Shape& dims, double fill) {
  StateDict sd(node, 0);
  sd.insert(id, Tensor(dims, fill));
  return sd;
}

std::vector<oracle::FlatDict> flatten_all(const std::vector<StateDict>& dicts) {
  std::vector<oracle::FlatDict> out;
  for (const auto& d : dicts) out.push_back(oracle::flatten(d));
  return out;
}

std::vector<StateDict> random_federation(std::mt19937_64& rng, bool jitter) {
  std::uniform_int_distribution<int> nodes(1, 5), stages(2, 8);
  const int k = nodes(rng);
  std::vector<NodeId> ids(16);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<StateDict> dicts;
  for (int i = 0; i < k; ++i) {
    dicts.push_back(oracle::random_model_dict(rng, ids[i], static_cast<std::uint32_t>(stages(rng)), 1, 4, jitter));
  }
  return dicts;
}

void expect_matches_oracle(const std::vector<StateDict>& dicts, MatchMode mode) {
  const auto flat = flatten_all(dicts);
  const auto expected = oracle::compatible(flat, mode == MatchMode::Strict);
  const CompatibleSet compat = match_layers(dicts, mode);
  ASSERT_EQ(compat.size(), expected.size());
  for (const auto& [id, layer] : compat.layers) {
    const auto it = expected.find(id.str());
    ASSERT_NE(it, expected.end()) << id.str();
    EXPECT_EQ(layer.dims, it->second.dims);
    EXPECT_EQ(layer.participants, it->second.nodes);
  }
  const StateDict agg = aggregate_asym(dicts, compat);
  const auto means = oracle::layer_means(flat, expected);
  ASSERT_EQ(agg.size(), means.size());
  for (const auto& [id, t] : agg.entries()) {
    const auto& m = means.at(id.str());
    ASSERT_EQ(t.size(), m.size());
    for (std::size_t i = 0; i < m.size(); ++i) ASSERT_TRUE(oracle::same_bits(t[i], m[i])) << id.str() << "[" << i << "]";
  }
}

}  // namespace

TEST(MatchLayers, IdenticalDictsShareTheLayer) {
  const LayerId w = LayerId::head(K::Weight);
  std::vector<StateDict> d{single(1, w, {8, 3, 3, 3}, 0.0), single(2, w, {8, 3, 3, 3}, 1.0)};
  const auto c = match_layers(d);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.layers.at(w).participants, (std::set<NodeId>{1, 2}));
  EXPECT_EQ(c.layers.at(w).dims, (Shape{8, 3, 3, 3}));
}

TEST(MatchLayers, DimMismatchIsExcludedInStrictMode) {
  const LayerId w = LayerId::head(K::Weight);
  std::vector<StateDict> d{single(1, w, {8, 3, 3, 3}, 0.0), single(2, w, {16, 3, 3, 3}, 1.0)};
  EXPECT_TRUE(match_layers(d, MatchMode::Strict).empty());
  EXPECT_TRUE(match_layers(d, MatchMode::Subset).empty());
}

TEST(MatchLayers, SubsetTieGoesToSmallestDims) {
  const LayerId w = LayerId::head(K::Weight);
  std::vector<StateDict> d{single(1, w, {3}, 0.0), single(2, w, {2}, 0.0), single(3, w, {3}, 0.0),
                           single(4, w, {2}, 0.0)};
  const auto c = match_layers(d, MatchMode::Subset);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.layers.at(w).dims, (Shape{2}));
  EXPECT_EQ(c.layers.at(w).participants, (std::set<NodeId>{2, 4}));
  d.push_back(single(5, w, {3}, 0.0));
  EXPECT_EQ(match_layers(d, MatchMode::Subset).layers.at(w).dims, (Shape{3}));
}

TEST(MatchLayers, SubsetNeedsTwoHolders) {
  std::vector<StateDict> d{single(1, LayerId::head(K::Weight), {1}, 0.0), single(2, LayerId::head(K::Bias), {1}, 0.0)};
  EXPECT_TRUE(match_layers(d, MatchMode::Subset).empty());
}

TEST(MatchLayers, RejectsEmptyInputAndDuplicateNodes) {
  EXPECT_THROW(match_layers(std::vector<StateDict>{}), UsageError);
  std::vector<StateDict> d{single(1, LayerId::head(K::Bias), {1}, 0.0), single(1, LayerId::head(K::Bias), {1}, 0.0)};
  EXPECT_THROW(match_layers(d), UsageError);
}

TEST(MatchLayers, SevenVersusEightStagesSharesThePrefix) {
  std::mt19937_64 rng(78);
  std::vector<StateDict> d{oracle::random_model_dict(rng, 1, 7, 2, 16), oracle::random_model_dict(rng, 2, 8, 2, 16)};
  const auto c = match_layers(d, MatchMode::Strict);
  std::set<std::string> names;
  for (const auto& id : c.ids()) names.insert(id.str());
  std::set<std::string> expected{"head.weight", "head.bias"};
  for (int i = 0; i < 7; ++i) {
    expected.insert("enc." + std::to_string(i) + ".conv.weight");
    expected.insert("enc." + std::to_string(i) + ".conv.bias");
  }
  // dec.i has F_{i+1}+F_i inputs, identical for i < 6 in both models.
  for (int i = 0; i < 6; ++i) {
    expected.insert("dec." + std::to_string(i) + ".conv.weight");
    expected.insert("dec." + std::to_string(i) + ".conv.bias");
  }
  EXPECT_EQ(names, expected);
  expect_matches_oracle(d, MatchMode::Strict);
}

TEST(Aggregate, MidpointOfTwoNodes) {
  const LayerId w = LayerId::encoder(0, K::Weight);
  std::vector<StateDict> d{single(1, w, {2, 1, 3, 3}, 0.0), single(2, w, {2, 1, 3, 3}, 2.0)};
  const StateDict agg = aggregate_asym(d, match_layers(d));
  for (double v : agg.at(w).values()) EXPECT_EQ(v, 1.0);
}

TEST(Aggregate, SingleNodeReturnsItsDict) {
  std::mt19937_64 rng(3);
  std::vector<StateDict> d{oracle::random_model_dict(rng, 4, 5)};
  EXPECT_TRUE(bit_equal(aggregate_asym(d, match_layers(d)), d[0]));
}

TEST(Aggregate, SubsetModeMatchesPerLayerMeanOracle) {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<StateDict> d;
    for (NodeId k = 0; k < 4; ++k) d.push_back(oracle::random_model_dict(rng, k, 2 + rng() % 4, 1, 4, true));
    expect_matches_oracle(d, MatchMode::Subset);
  }
}

TEST(Aggregate, StrictFuzzMatchesOracle) {
  std::mt19937_64 rng(100);
  for (int rep = 0; rep < 100; ++rep) expect_matches_oracle(random_federation(rng, rep % 2 == 0), MatchMode::Strict);
}

TEST(Aggregate, PermutationInvariant) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 30; ++rep) {
    auto d = random_federation(rng, true);
    for (auto mode : {MatchMode::Strict, MatchMode::Subset}) {
      const auto c = match_layers(d, mode);
      const StateDict a = aggregate_asym(d, c);
      auto p = d;
      std::shuffle(p.begin(), p.end(), rng);
      const auto c2 = match_layers(p, mode);
      EXPECT_EQ(c.ids(), c2.ids());
      EXPECT_TRUE(bit_equal(a, aggregate_asym(p, c2)));
    }
  }
}

TEST(Aggregate, IdempotentOnCopies) {
  std::mt19937_64 rng(6);
  const StateDict base = oracle::random_model_dict(rng, 0, 6);
  for (NodeId count : {1u, 2u, 3u, 4u, 5u, 8u}) {
    std::vector<StateDict> d;
    for (NodeId k = 0; k < count; ++k) {
      d.push_back(base);
      d.back().set_node_id(k);
    }
    const StateDict agg = aggregate_asym(d, match_layers(d));
    // Sum-then-divide is exact for 1, 2 and 4 copies; other counts round
    // the running sum and may land a few ulps away.
    if (count == 1 || count == 2 || count == 4) {
      EXPECT_TRUE(bit_equal(agg, base)) << count;
      continue;
    }
    for (const auto& [id, t] : agg.entries()) {
      const Tensor& x = base.at(id);
      for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_LE(std::abs(t[i] - x[i]), count * std::abs(std::nextafter(x[i], INFINITY) - x[i])) << count;
      }
    }
  }
}

TEST(Aggregate, ValuesLieWithinParticipantRange) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 30; ++rep) {
    const auto d = random_federation(rng, true);
    const auto c = match_layers(d, MatchMode::Subset);
    const StateDict agg = aggregate_asym(d, c);
    for (const auto& [id, t] : agg.entries()) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& sd : d) {
          if (!c.layers.at(id).participants.count(sd.node_id())) continue;
          lo = std::min(lo, sd.at(id)[i]);
          hi = std::max(hi, sd.at(id)[i]);
        }
        EXPECT_GE(t[i], lo);
        EXPECT_LE(t[i], hi);
      }
    }
  }
}

TEST(Aggregate, WeightedMean) {
  const LayerId b = LayerId::head(K::Bias);
  std::vector<StateDict> d{single(1, b, {1}, 0.0), single(2, b, {1}, 4.0)};
  AggregationOptions opt;
  opt.weighted = true;
  opt.weights = {{1, 3.0}, {2, 1.0}};
  EXPECT_EQ(aggregate_asym(d, match_layers(d), opt).at(b)[0], 1.0);
  opt.weights.erase(2);
  EXPECT_THROW(aggregate_asym(d, match_layers(d), opt), UsageError);
}

TEST(Aggregate, InconsistentCompatIsInternalError) {
  const LayerId b = LayerId::head(K::Bias);
  std::vector<StateDict> d{single(1, b, {1}, 0.0)};
  CompatibleSet c;
  c.layers[LayerId::head(K::Weight)] = {{1}, {1}};
  EXPECT_THROW(aggregate_asym(d, c), InternalError);
  c.layers.clear();
  c.layers[b] = {{1}, {7}};
  EXPECT_THROW(aggregate_asym(d, c), InternalError);
  c.layers[b] = {{2}, {1}};
  EXPECT_THROW(aggregate_asym(d, c), InternalError);
}

TEST(ApplyUpdate, EmptyAggregateKeepsEverything) {
  std::mt19937_64 rng(10);
  StateDict local = oracle::random_model_dict(rng, 2, 4);
  local.set_round(5);
  const StateDict out = apply_update(local, StateDict{});
  EXPECT_TRUE(bit_equal(out, local));
  EXPECT_EQ(out.round(), 6u);
  EXPECT_EQ(out.node_id(), 2u);
}

TEST(ApplyUpdate, FullCoverageTakesAggregate) {
  std::mt19937_64 rng(11);
  const StateDict local = oracle::random_model_dict(rng, 2, 4);
  const StateDict agg = oracle::random_model_dict(rng, 0, 4);
  EXPECT_TRUE(bit_equal(apply_update(local, agg), agg));
}

TEST(ApplyUpdate, MixedCoverageMatchesMembershipOracle) {
  std::mt19937_64 rng(12);
  std::vector<StateDict> d{oracle::random_model_dict(rng, 1, 8, 2, 16), oracle::random_model_dict(rng, 2, 7, 2, 16)};
  const auto compat = match_layers(d);
  const StateDict agg = aggregate_asym(d, compat);
  const auto oracle_compat = oracle::compatible(flatten_all(d), true);
  for (const auto& local : d) {
    const StateDict out = apply_update(local, view_for_node(agg, compat, local.node_id()));
    ASSERT_EQ(out.size(), local.size());
    for (const auto& [id, t] : out.entries()) {
      const bool shared = oracle_compat.count(id.str()) != 0;
      const Tensor& expect = shared ? agg.at(id) : local.at(id);
      EXPECT_TRUE(bit_equal(t, expect)) << id.str();
    }
  }
}

TEST(ApplyUpdate, DimMismatchIsProtocolError) {
  const LayerId b = LayerId::head(K::Bias);
  EXPECT_THROW(apply_update(single(1, b, {1}, 0.0), single(0, b, {2}, 0.0)), ProtocolError);
}

TEST(ViewForNode, RestrictsToParticipation) {
  const LayerId w = LayerId::head(K::Weight), b = LayerId::head(K::Bias);
  std::vector<StateDict> d{single(1, w, {1}, 0.0), single(2, w, {1}, 2.0), single(3, b, {1}, 0.0)};
  d[2].insert(w, Tensor({2}, 0.0));
  const auto c = match_layers(d, MatchMode::Subset);
  const StateDict agg = aggregate_asym(d, c);
  EXPECT_EQ(view_for_node(agg, c, 1).size(), 1u);
  EXPECT_TRUE(view_for_node(agg, c, 3).empty());
}

TEST(MatchMode, ParsesNames) {
  EXPECT_EQ(match_mode_from_string("subset"), MatchMode::Subset);
  EXPECT_STREQ(to_string(MatchMode::Strict), "strict");
  EXPECT_THROW(match_mode_from_string("loose"), UsageError);
}
