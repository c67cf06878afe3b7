#include <gtest/gtest.h>

#include <random>

#include "fednnu/error.hpp"
#include "fednnu/state_dict.hpp"
#include "support/oracles.hpp"

using namespace fednnu;
using K = LayerId::Kind;

TEST(LayerId, RoundTripsGrammar) {
  for (const char* name : {"enc.0.conv.weight", "enc.7.conv.bias", "dec.3.conv.weight", "head.weight", "head.bias",
                           "enc.12.conv.bias"}) {
    EXPECT_EQ(LayerId::parse(name).str(), name);
  }
}

TEST(LayerId, RejectsNamesOutsideGrammar) {
  for (const char* name : {"", "b", "enc.conv.weight", "enc.01.conv.weight", "enc.-1.conv.weight", "enc.1.conv",
                           "enc.1.conv.gamma", "dec.1.bn.weight", "head.0.weight", "head.", "enc.1x.conv.bias"}) {
    EXPECT_FALSE(LayerId::try_parse(name).has_value()) << name;
    EXPECT_THROW(LayerId::parse(name), UsageError) << name;
  }
  EXPECT_THROW(LayerId(LayerId::Part::Head, 2, K::Weight), UsageError);
}

TEST(LayerId, CanonicalOrder) {
  EXPECT_LT(LayerId::encoder(9, K::Bias), LayerId::decoder(0, K::Weight));
  EXPECT_LT(LayerId::decoder(9, K::Bias), LayerId::head(K::Weight));
  EXPECT_LT(LayerId::encoder(1, K::Weight), LayerId::encoder(1, K::Bias));
  EXPECT_LT(LayerId::encoder(2, K::Bias), LayerId::encoder(10, K::Weight));
}

TEST(StateDict, InsertKeepsCanonicalOrderAndRejectsDuplicates) {
  StateDict sd(3, 1);
  sd.insert(LayerId::head(K::Bias), Tensor({1}, 0.0));
  sd.insert(LayerId::encoder(1, K::Weight), Tensor({2, 1, 3, 3}, 0.0));
  sd.insert(LayerId::encoder(0, K::Weight), Tensor({1, 1, 3, 3}, 0.0));
  sd.insert(LayerId::decoder(0, K::Bias), Tensor({1}, 0.0));
  const auto ids = sd.layer_ids();
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
  EXPECT_EQ(ids.front().str(), "enc.0.conv.weight");
  EXPECT_EQ(ids.back().str(), "head.bias");
  EXPECT_EQ(sd.num_parameters(), 9u + 18u + 1u + 1u);
  EXPECT_THROW(sd.insert(LayerId::head(K::Bias), Tensor({1}, 0.0)), UsageError);
  EXPECT_THROW(sd.assign(LayerId::head(K::Weight), Tensor({1}, 0.0)), UsageError);
  EXPECT_THROW(static_cast<void>(sd.at(LayerId::head(K::Weight))), UsageError);
  EXPECT_EQ(sd.node_id(), 3u);
  EXPECT_EQ(sd.round(), 1u);
}

TEST(StateDict, BitEqualIgnoresNodeAndRound) {
  std::mt19937_64 rng(1);
  StateDict a = oracle::random_model_dict(rng, 1, 3);
  StateDict b = a;
  b.set_node_id(9);
  b.set_round(4);
  EXPECT_TRUE(bit_equal(a, b));
  EXPECT_FALSE(a == b);
  Tensor t = *b.find(LayerId::head(K::Bias));
  t[0] += 1.0;
  b.assign(LayerId::head(K::Bias), t);
  EXPECT_FALSE(bit_equal(a, b));
}

TEST(StateDict, SignedZeroIsNotBitEqual) {
  StateDict a, b;
  a.insert(LayerId::head(K::Bias), Tensor({1}, 0.0));
  b.insert(LayerId::head(K::Bias), Tensor({1}, -0.0));
  EXPECT_FALSE(bit_equal(a, b));
}
