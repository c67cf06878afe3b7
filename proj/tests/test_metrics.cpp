#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fednnu/error.hpp"
#include "fednnu/metrics.hpp"
#include "support/oracles.hpp"

using namespace fednnu;

namespace {

Mask from_rows(const std::vector<std::string>& rows) {
  Mask m(rows.size(), rows.front().size());
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) m(y, x) = rows[y][x] == '#';
  return m;
}

}  // namespace

TEST(Dsc, HandCountedExamples) {
  const Mask full(4, 4, 1);
  const Mask left = from_rows({"##..", "##..", "##..", "##.."});
  const Mask right = from_rows({"..##", "..##", "..##", "..##"});
  EXPECT_EQ(dsc(full, full), 1.0);
  EXPECT_EQ(dsc(left, right), 0.0);
  EXPECT_DOUBLE_EQ(dsc(left, full), 2.0 / 3.0);
  EXPECT_EQ(dsc(Mask(4, 4, 0), Mask(4, 4, 0)), 1.0);
  EXPECT_EQ(dsc(Mask(4, 4, 0), full), 0.0);
}

TEST(Dsc, ShapeMismatchIsUsageError) {
  EXPECT_THROW(dsc(Mask(4, 4), Mask(4, 5)), UsageError);
  EXPECT_THROW(hd95(Mask(4, 4), Mask(5, 4)), UsageError);
}

TEST(Hd95, HandExamples) {
  const Mask a = from_rows({"#...", "....", "....", "...."});
  const Mask b = from_rows({"...#", "....", "....", "...."});
  EXPECT_EQ(hd95(a, a).value, 0.0);
  EXPECT_EQ(hd95(a, b).value, 3.0);
  EXPECT_EQ(hd95(a, b, {2.0, 0.5}).value, 1.5);
  const Hd95 both_empty = hd95(Mask(4, 4, 0), Mask(4, 4, 0));
  EXPECT_FALSE(both_empty.defined);
  const Hd95 one_empty = hd95(a, Mask(4, 4, 0), {1.0, 2.0});
  EXPECT_TRUE(one_empty.defined);
  EXPECT_DOUBLE_EQ(one_empty.value, std::sqrt(16.0 + 64.0));
}

TEST(Hd95, InteriorPixelsAreNotBoundary) {
  // A filled 5x5 square and its 3x3 core: boundary rings are one pixel apart.
  Mask outer(7, 7, 0), inner(7, 7, 0);
  for (std::size_t y = 1; y < 6; ++y)
    for (std::size_t x = 1; x < 6; ++x) outer(y, x) = 1;
  for (std::size_t y = 2; y < 5; ++y)
    for (std::size_t x = 2; x < 5; ++x) inner(y, x) = 1;
  EXPECT_DOUBLE_EQ(hd95(outer, inner).value, std::sqrt(2.0));
}

TEST(Metrics, MatchBruteForceOracleOnRandomMasks) {
  std::mt19937_64 rng(500);
  std::uniform_int_distribution<std::size_t> side(1, 16);
  std::uniform_real_distribution<double> dens(0.0, 0.8), sp(0.3, 2.5);
  for (int i = 0; i < 500; ++i) {
    const std::size_t h = side(rng), w = side(rng);
    const Mask p = oracle::random_mask(rng, h, w, dens(rng));
    const Mask t = oracle::random_mask(rng, h, w, dens(rng));
    const Spacing s{sp(rng), sp(rng)};
    EXPECT_NEAR(dsc(p, t), oracle::dsc(p, t), 1e-9);
    const double expect = oracle::hd95(p, t, s);
    const Hd95 got = hd95(p, t, s);
    if (std::isnan(expect)) {
      EXPECT_FALSE(got.defined);
    } else {
      ASSERT_TRUE(got.defined);
      EXPECT_NEAR(got.value, expect, 1e-9);
    }
  }
}

TEST(Metrics, SymmetryAndRange) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 200; ++i) {
    const Mask a = oracle::random_mask(rng, 12, 9, 0.3), b = oracle::random_mask(rng, 12, 9, 0.4);
    EXPECT_EQ(dsc(a, b), dsc(b, a));
    EXPECT_GE(dsc(a, b), 0.0);
    EXPECT_LE(dsc(a, b), 1.0);
    const Hd95 ab = hd95(a, b, {0.7, 1.3}), ba = hd95(b, a, {0.7, 1.3});
    EXPECT_EQ(ab.defined, ba.defined);
    if (ab.defined) {
      EXPECT_EQ(ab.value, ba.value);
      EXPECT_GE(ab.value, 0.0);
    }
  }
}
