#include <gtest/gtest.h>

#include "datt/common.hpp"

using namespace datt;

TEST(WrapAngle, MapsIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3.0 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(0.25 + 4.0 * kPi), 0.25, 1e-12);
  EXPECT_NEAR(wrap_angle(-0.25 - 2.0 * kPi), -0.25, 1e-12);
}

TEST(Rotation, ThrustAxisMatchesRotationMatrixColumn) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    const Vec3 z = q.toRotationMatrix().col(2);
    EXPECT_LT((thrust_axis(q) - z).norm(), 1e-12);
  }
}

TEST(Rotation, YawAndTiltOfElementaryRotations) {
  const Quat yaw(Eigen::AngleAxisd(0.7, Vec3::UnitZ()));
  EXPECT_NEAR(yaw_of(yaw), 0.7, 1e-12);
  EXPECT_NEAR(tilt_of(yaw), 0.0, 1e-12);
  const Quat roll(Eigen::AngleAxisd(0.3, Vec3::UnitX()));
  EXPECT_NEAR(tilt_of(roll), 0.3, 1e-12);
  EXPECT_NEAR(yaw_of(roll), 0.0, 1e-12);
}

TEST(Rng, SeededStreamsAreReproducible) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    EXPECT_NE(x, c());
  }
}

TEST(Rng, NormalMomentsMatchStandardGaussian) {
  Rng rng(7);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    ss += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.01);
}

TEST(Rng, UniformStaysInRange) {
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform(-1.0, 2.0);
    EXPECT_GE(u, -1.0);
    EXPECT_LT(u, 2.0);
  }
}

TEST(MixSeed, DistinctIndicesGiveDistinctSeeds) {
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
  EXPECT_EQ(mix_seed(5, 3), mix_seed(5, 3));
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ull);
}

TEST(KeyValueConfig, ParsesSectionsCommentsAndQuotes) {
  const auto kv = KeyValueConfig::parse(
      "# header\n"
      "top = 1\n"
      "[sim]\n"
      "dt = 0.01   # inline\n"
      "name = \"zig zag\"\n"
      "[train]\n"
      "total_steps = 3e6\n"
      "curriculum = false\n");
  EXPECT_EQ(kv.get_int("top", 0), 1);
  EXPECT_DOUBLE_EQ(kv.get_double("sim.dt", 0.0), 0.01);
  EXPECT_EQ(kv.get_string("sim.name", ""), "zig zag");
  EXPECT_EQ(kv.get_int("train.total_steps", 0), 3000000);
  EXPECT_FALSE(kv.get_bool("train.curriculum", true));
  EXPECT_EQ(kv.get_int("missing", 17), 17);
}

TEST(KeyValueConfig, RejectsMalformedValues) {
  const auto kv = KeyValueConfig::parse("a = abc\nb = 1.5\nc = maybe\n");
  EXPECT_THROW(kv.get_double("a", 0.0), Error);
  EXPECT_THROW(kv.get_int("b", 0), Error);
  EXPECT_THROW(kv.get_bool("c", false), Error);
  EXPECT_THROW(KeyValueConfig::parse("no equals sign here\n"), Error);
}

TEST(KeyValueConfig, CanonicalTextIsOrderIndependent) {
  const auto a = KeyValueConfig::parse("x = 1\ny = 2\n");
  const auto b = KeyValueConfig::parse("y = 2\nx = 1\n");
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(fnv1a(a.canonical()), fnv1a(b.canonical()));
}
