#include <gtest/gtest.h>

#include <random>

#include "rarewave/gas_model.hpp"

using namespace rarewave;

TEST(GasModel, SoundSpeedValues) {
  EXPECT_EQ(sound_speed({2.0, 0.5}, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(sound_speed({2.0, 0.5}, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(sound_speed({1.5, 2.0 / 3.0}, 1.0), 1.0);
  EXPECT_THROW(sound_speed({2.0, 0.5}, -1e-3), DomainError);
}

TEST(GasModel, GasInvariantsEnforced) {
  EXPECT_THROW(PolytropicGas(3.0, 0.5), DomainError);
  EXPECT_THROW(PolytropicGas(1.0, 0.5), DomainError);
  EXPECT_THROW(PolytropicGas(2.0, 0.0), DomainError);
}

TEST(GasModel, Enthalpy) {
  EXPECT_DOUBLE_EQ(enthalpy({2.0, 0.5}, 1.0), 1.0);
  EXPECT_EQ(enthalpy({2.0, 0.5}, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(enthalpy({2.9, 0.5}, 2.0), 4.0 / 1.9);
  // gamma = 3 sits outside the gas range; evaluate the bare formula
  PolytropicGas g3;
  g3.gamma = 3.0;
  EXPECT_DOUBLE_EQ(enthalpy(g3, 2.0), 2.0);
}

TEST(GasModel, InvariantExamples) {
  const PolytropicGas gas{2.0, 0.5};
  auto r = to_invariants(gas, {1.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(r.wbar, 1.0);
  EXPECT_DOUBLE_EQ(r.w, 1.0);
  EXPECT_EQ(r.psi2, 0.0);
  r = to_invariants(gas, {0.0, 0.0, 0.0});
  EXPECT_EQ(r.wbar, 0.0);
  EXPECT_EQ(r.w, 0.0);
  r = to_invariants(gas, {1.0, 1.0, 0.0});
  EXPECT_DOUBLE_EQ(r.wbar, 1.5);
  EXPECT_DOUBLE_EQ(r.w, 0.5);

  auto s = from_invariants(gas, {1.0, 1.0, 0.0});
  EXPECT_DOUBLE_EQ(s.c, 1.0);
  EXPECT_EQ(s.v1, 0.0);
  s = from_invariants(gas, {0.0, 0.0, 0.0});
  EXPECT_TRUE(s.vacuum());
  s = from_invariants(gas, {1.5, 0.5, 0.0});
  EXPECT_DOUBLE_EQ(s.c, 1.0);
  EXPECT_DOUBLE_EQ(s.v1, 1.0);
  EXPECT_THROW(from_invariants(gas, {0.5, -0.6, 0.0}), DomainError);
}

TEST(GasModel, RandomRoundTripAndIdentities) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ug(1.05, 2.95), uc(0.01, 3.0), uv(-3.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const PolytropicGas gas{ug(rng), 0.5};
    const PrimitiveState s{uc(rng), uv(rng), uv(rng)};
    const auto r = to_invariants(gas, s);
    const auto b = from_invariants(gas, r);
    const double scale = std::abs(s.c) + std::abs(s.v1) + std::abs(s.v2);
    EXPECT_LE(std::abs(b.c - s.c), 1e-14 * scale);
    EXPECT_LE(std::abs(b.v1 - s.v1), 1e-14 * scale);
    EXPECT_EQ(b.v2, s.v2);
    EXPECT_NEAR(0.5 * (gas.gamma - 1.0) * (r.w + r.wbar), s.c, 1e-14 * scale);
    EXPECT_NEAR(max_char_speed(gas, r), s.v1 + s.c, 1e-13 * scale);
    // density round trip
    EXPECT_NEAR(sound_speed(gas, gas.density(s.c)), s.c, 1e-13 * s.c);
  }
}
