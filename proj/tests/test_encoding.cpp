#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "hdrnerf/encoding.hpp"

using namespace hdrnerf;

TEST(Encoding, ZeroInputGivesSinZeroCosOne) {
  const double x[3] = {0, 0, 0};
  const auto e = positional_encode(x, 2, false);
  ASSERT_EQ(e.size(), 12u);
  for (std::size_t i = 0; i < e.size(); i += 2) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[i + 1], 1.0);
  }
}

TEST(Encoding, HalfAtFirstLevel) {
  const double x[1] = {0.5};
  const auto e = positional_encode(x, 1, false);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_NEAR(e[0], 1.0, 1e-15);
  EXPECT_NEAR(e[1], 0.0, 1e-15);
}

TEST(Encoding, PeriodTwoAtFirstLevel) {
  for (double p : {-0.7, 0.0, 0.3, 1.25}) {
    const double a[1] = {p}, b[1] = {p + 2.0};
    const auto ea = positional_encode(a, 1, false);
    const auto eb = positional_encode(b, 1, false);
    EXPECT_NEAR(ea[0], eb[0], 1e-14);
    EXPECT_NEAR(ea[1], eb[1], 1e-14);
  }
}

TEST(Encoding, LayoutAndWidth) {
  const double x[2] = {0.25, -0.1};
  const int L = 10;
  const auto e = positional_encode(x, L, true);
  ASSERT_EQ(e.size(), 2 * encoded_width(L, true));
  EXPECT_EQ(encoded_width(10, true), 21u);
  EXPECT_EQ(encoded_width(4, false), 8u);
  // Second component starts after the first block.
  const std::size_t off = encoded_width(L, true);
  EXPECT_EQ(e[off], -0.1);
  for (int l = 0; l < L; ++l) {
    const double f = std::ldexp(std::numbers::pi, l);
    EXPECT_NEAR(e[1 + 2 * l], std::sin(f * 0.25), 1e-12);
    EXPECT_NEAR(e[2 + 2 * l], std::cos(f * 0.25), 1e-12);
  }
}

TEST(Encoding, NonFiniteInputIsNumericError) {
  const double nan[1] = {std::numeric_limits<double>::quiet_NaN()};
  const double inf[1] = {std::numeric_limits<double>::infinity()};
  EXPECT_THROW(positional_encode(nan, 2, true), NumericError);
  EXPECT_THROW(positional_encode(inf, 2, true), NumericError);
}

TEST(Encoding, ZeroLevelsRejected) {
  const double x[1] = {0.1};
  EXPECT_THROW(positional_encode(x, 0, true), InputError);
  EncodingConfig c;
  c.levels_direction = 0;
  EXPECT_THROW(c.validate(), InputError);
}
