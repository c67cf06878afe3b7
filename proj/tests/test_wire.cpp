#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "fednnu/error.hpp"
#include "fednnu/wire.hpp"
#include "support/oracles.hpp"

using namespace fednnu;
using K = LayerId::Kind;

namespace {

// Hand-assembled encoding of a single layer, independent of the encoder.
Bytes layer_bytes(const std::string& name, const std::vector<std::uint32_t>& dims, const std::vector<double>& vals) {
  Bytes b;
  auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(1, 4);
  put(name.size(), 2);
  b.insert(b.end(), name.begin(), name.end());
  put(1, 1);
  put(dims.size(), 1);
  for (auto d : dims) put(d, 4);
  for (double v : vals) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put(bits, 8);
  }
  return b;
}

}  // namespace

TEST(WireStateDict, EmptyDictIsFourZeroBytes) {
  const Bytes b = encode_state_dict(StateDict{});
  EXPECT_EQ(b, (Bytes{0, 0, 0, 0}));
  EXPECT_TRUE(decode_state_dict(b).empty());
}

TEST(WireStateDict, FieldWidthsSumAsDocumented) {
  const Bytes b = layer_bytes("b", {1}, {1.0});
  EXPECT_EQ(b.size(), 4u + 2 + 1 + 1 + 1 + 4 + 8);
  // Names outside the layer grammar are not accepted on decode.
  EXPECT_THROW(decode_state_dict(b), EncodingError);

  StateDict sd;
  sd.insert(LayerId::head(K::Bias), Tensor({1}, 1.0));
  const Bytes enc = encode_state_dict(sd);
  EXPECT_EQ(enc.size(), 4u + 2 + 9 + 1 + 1 + 4 + 8);
  EXPECT_EQ(enc, layer_bytes("head.bias", {1}, {1.0}));
}

TEST(WireStateDict, RoundTripIsBitExact) {
  std::mt19937_64 rng(42);
  for (int rep = 0; rep < 50; ++rep) {
    const StateDict sd = oracle::random_model_dict(rng, 1, 2 + rep % 6, 1, 4, true);
    const StateDict back = decode_state_dict(encode_state_dict(sd), 1, 0);
    EXPECT_TRUE(bit_equal(sd, back));
    EXPECT_EQ(encode_state_dict(back), encode_state_dict(sd));
  }
}

TEST(WireStateDict, SpecialValuesSurvive) {
  StateDict sd;
  sd.insert(LayerId::head(K::Weight),
            Tensor({4}, std::vector<double>{-0.0, std::numeric_limits<double>::denorm_min(),
                                            std::numeric_limits<double>::infinity(), 1e308}));
  EXPECT_TRUE(bit_equal(sd, decode_state_dict(encode_state_dict(sd))));
}

TEST(WireStateDict, F32IsLossyButDecodes) {
  StateDict sd;
  sd.insert(LayerId::head(K::Bias), Tensor({1}, 0.1));
  const Bytes b = encode_state_dict(sd, Dtype::F32);
  EXPECT_EQ(b.size(), 4u + 2 + 9 + 1 + 1 + 4 + 4);
  EXPECT_EQ(decode_state_dict(b).at(LayerId::head(K::Bias))[0], static_cast<double>(0.1f));
}

TEST(WireStateDict, RejectsMalformedInput) {
  StateDict sd;
  sd.insert(LayerId::head(K::Bias), Tensor({2}, 1.0));
  const Bytes good = encode_state_dict(sd);
  for (std::size_t cut = 0; cut < good.size(); ++cut) {
    EXPECT_THROW(decode_state_dict(std::span(good).first(cut)), Error) << cut;
  }
  Bytes trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_state_dict(trailing), Error);
  Bytes bad_dtype = good;
  bad_dtype[4 + 2 + 9] = 7;
  EXPECT_THROW(decode_state_dict(bad_dtype), EncodingError);
  Bytes dup = layer_bytes("head.bias", {1}, {1.0});
  const Bytes second(dup.begin() + 4, dup.end());
  dup[0] = 2;
  dup.insert(dup.end(), second.begin(), second.end());
  EXPECT_THROW(decode_state_dict(dup), EncodingError);
}

TEST(WireFrame, ShutdownIsTwentyTwoBytes) {
  RoundMessage m{MessageType::Shutdown, kServerId, 7, {}};
  const Bytes f = frame(m);
  ASSERT_EQ(f.size(), 22u);
  EXPECT_EQ(f[0], 'F');
  EXPECT_EQ(f[3], 'U');
  EXPECT_EQ(f[4], 0x01);
  EXPECT_EQ(f[5], 7);
  EXPECT_EQ(f[10], 7);  // round, little-endian
  std::size_t used = 0;
  EXPECT_EQ(unframe(f, &used), m);
  EXPECT_EQ(used, 22u);
}

TEST(WireFrame, RoundTripAndConsumedCount) {
  std::mt19937_64 rng(5);
  for (std::uint8_t t = 0; t <= static_cast<std::uint8_t>(MessageType::Shutdown); ++t) {
    RoundMessage m{static_cast<MessageType>(t), static_cast<NodeId>(rng()), static_cast<std::uint32_t>(rng()), {}};
    m.payload.resize(rng() % 100);
    for (auto& b : m.payload) b = static_cast<std::uint8_t>(rng());
    Bytes stream = frame(m);
    stream.push_back(0xAB);  // next frame's first byte
    std::size_t used = 0;
    EXPECT_EQ(unframe(stream, &used), m);
    EXPECT_EQ(used, stream.size() - 1);
  }
}

TEST(WireFrame, RejectsBadMagicVersionTypeAndTruncation) {
  const Bytes good = frame(RoundMessage{MessageType::RoundAck, 1, 2, {1, 2, 3}});
  Bytes bad = good;
  bad[0] = 'X';
  EXPECT_THROW(unframe(bad), ProtocolError);
  bad = good;
  bad[4] = 0x02;
  EXPECT_THROW(unframe(bad), VersionError);
  bad = good;
  bad[5] = 8;
  EXPECT_THROW(unframe(bad), ProtocolError);
  EXPECT_THROW(unframe(std::span(good).first(10)), FramingError);
  EXPECT_THROW(unframe(std::span(good).first(good.size() - 1)), FramingError);
}

TEST(WireFingerprint, RoundTrips) {
  Fingerprint fp;
  fp.num_cases = 2;
  fp.shapes_after_crop = {{40, 40}, {36, 44}};
  fp.spacings = {{1.0, 1.0}, {1.1, 0.9}};
  fp.intensity_mean = 0.25;
  fp.intensity_std = 1.5;
  EXPECT_EQ(decode_fingerprint(encode_fingerprint(fp)), fp);
  EXPECT_EQ(encode_fingerprint(fp).size(), 4u + 2 * (4 + 4 + 8 + 8) + 16);
  GlobalFingerprint g{fp, {1, 2}};
  EXPECT_EQ(decode_global_fingerprint(encode_global_fingerprint(g)), g);
  Bytes cut = encode_fingerprint(fp);
  cut.pop_back();
  EXPECT_THROW(decode_fingerprint(cut), Error);
}

TEST(WireHello, RoundTrips) {
  EXPECT_EQ(decode_node_hello(encode_node_hello(12)), 12u);
  HelloReply r{true, 30, 4};
  EXPECT_EQ(decode_hello_reply(encode_hello_reply(r)), r);
  EXPECT_EQ(payload_text(text_payload("node 3 failed")), "node 3 failed");
}
