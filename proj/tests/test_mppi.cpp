#include <gtest/gtest.h>

#include "datt/harness.hpp"

using namespace datt;

namespace {

ReferenceTrajectory hold(const Vec3& p) {
  return ReferenceTrajectory::piecewise_linear(TrajectoryKind::Custom, {0.0}, {p}, 10.0);
}

MppiConfig small(int samples, int horizon, std::uint64_t seed = 1) {
  MppiConfig c;
  c.samples = samples;
  c.horizon = horizon;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(SoftmaxWeights, SumToOneAndAreShiftInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> c(64);
    for (double& x : c) x = 10.0 * rng.uniform();
    const auto w = softmax_weights(c, 0.05);
    double s = 0.0;
    for (double x : w) s += x;
    EXPECT_NEAR(s, 1.0, 1e-12);
    std::vector<double> shifted = c;
    for (double& x : shifted) x += 123.456;
    const auto w2 = softmax_weights(shifted, 0.05);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], w2[i], 1e-12);
  }
}

TEST(SoftmaxWeights, EqualCostsGiveEqualWeights) {
  const auto w = softmax_weights({1.0, 1.0}, 0.05);
  EXPECT_EQ(w[0], 0.5);
  EXPECT_EQ(w[1], 0.5);
}

TEST(SoftmaxWeights, DropsNonFiniteCostsAndFaultsWhenAllAre) {
  const double inf = std::numeric_limits<double>::infinity();
  const auto w = softmax_weights({inf, 2.0, std::nan("")}, 1.0);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[1], 1.0);
  EXPECT_EQ(w[2], 0.0);
  EXPECT_THROW(softmax_weights({inf, inf}, 1.0), NumericalFault);
}

TEST(Mppi, WeightsMatchBruteForceRecomputation) {
  SimConfig sim;
  MppiController mppi(small(8, 3, 5), sim);
  QuadState s = hover_state(Vec3::Zero(), sim);
  mppi.compute(s, hold(Vec3(0.2, 0.1, -0.1)), 0.0, Vec3::Zero());
  const auto& costs = mppi.last_costs();
  const auto& w = mppi.last_weights();
  ASSERT_EQ(costs.size(), 8u);
  long double z = 0.0L;
  for (double c : costs) z += std::exp(-static_cast<long double>(c) / 0.05L);
  for (std::size_t i = 0; i < 8; ++i) {
    const long double ref = std::exp(-static_cast<long double>(costs[i]) / 0.05L) / z;
    EXPECT_NEAR(w[i], static_cast<double>(ref), 1e-12);
  }
}

TEST(Mppi, LargeTemperatureAveragesTheSamples) {
  SimConfig sim;
  MppiConfig cfg = small(16, 4, 9);
  cfg.temperature = 1e12;
  MppiController mppi(cfg, sim);
  const QuadState s = hover_state(Vec3::Zero(), sim);
  const ControlCommand out = mppi.compute(s, hold(Vec3(1, 0, 0)), 0.0, Vec3::Zero());
  double f = 0.0;
  Vec3 w = Vec3::Zero();
  for (const auto& seq : mppi.last_samples()) {
    f += seq[0].f_des / 16.0;
    w += seq[0].omega_des / 16.0;
  }
  EXPECT_NEAR(out.f_des, f, 1e-9);
  EXPECT_LT((out.omega_des - w).norm(), 1e-9);
}

TEST(RolloutCost, ZeroHorizonCostsNothing) {
  SimConfig sim;
  EXPECT_EQ(rollout_cost(hover_state(Vec3::Zero(), sim), {}, std::vector<Vec3>{}, Vec3::Zero(), sim), 0.0);
}

TEST(RolloutCost, PerfectHoverCostsNothing) {
  SimConfig sim;
  const Vec3 p(0.4, 0.1, 1.0);
  ControlCommand hover;
  hover.f_des = sim.hover_thrust();
  const ControlSequence seq(40, hover);
  EXPECT_NEAR(rollout_cost(hover_state(p, sim), seq, hold(p), 0.0, Vec3::Zero(), sim), 0.0, 1e-12);
}

TEST(RolloutCost, OneStepOffsetEqualsItsNorm) {
  SimConfig sim;
  const Vec3 p(0.4, 0.1, 1.0), e(0.3, -0.4, 1.2);
  ControlCommand hover;
  hover.f_des = sim.hover_thrust();
  const double c = rollout_cost(hover_state(p, sim), {hover}, std::vector<Vec3>{p + e}, Vec3::Zero(), sim);
  EXPECT_NEAR(c, 1.3, 1e-12);
}

TEST(RolloutCost, ModelFaultBecomesInfiniteCost) {
  SimConfig sim;
  QuadState s = hover_state(Vec3::Zero(), sim);
  ControlCommand bad;
  bad.f_des = std::nan("");
  EXPECT_TRUE(std::isinf(rollout_cost(s, {bad}, std::vector<Vec3>{Vec3::Zero()}, Vec3::Zero(), sim)));
}

TEST(Mppi, WeightedUpdateRarelyCostsMoreThanNominal) {
  SimConfig sim;
  int better = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(mix_seed(77, trial));
    const Vec3 offset(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const auto traj = hold(offset);
    MppiController mppi(small(256, 20, trial), sim);
    const QuadState s = hover_state(Vec3::Zero(), sim);
    const ControlSequence nominal = mppi.nominal();
    mppi.compute(s, traj, 0.0, Vec3::Zero());
    ControlSequence updated(nominal.size());
    for (auto& c : updated) c.f_des = 0.0;
    const auto& w = mppi.last_weights();
    for (std::size_t i = 0; i < w.size(); ++i)
      for (std::size_t k = 0; k < updated.size(); ++k) {
        updated[k].f_des += w[i] * mppi.last_samples()[i][k].f_des;
        updated[k].omega_des += w[i] * mppi.last_samples()[i][k].omega_des;
      }
    if (rollout_cost(s, updated, traj, 0.0, Vec3::Zero(), sim) <=
        rollout_cost(s, nominal, traj, 0.0, Vec3::Zero(), sim))
      ++better;
  }
  EXPECT_GE(better, 95);
}

TEST(Mppi, NominalIsShiftedAndRepeatsTheLastCommand) {
  SimConfig sim;
  MppiController mppi(small(32, 5, 3), sim);
  const QuadState s = hover_state(Vec3::Zero(), sim);
  mppi.compute(s, hold(Vec3(0.5, 0, 0)), 0.0, Vec3::Zero());
  const auto& n = mppi.nominal();
  ASSERT_EQ(n.size(), 5u);
  EXPECT_EQ(n[4].f_des, n[3].f_des);
  EXPECT_EQ(n[4].omega_des, n[3].omega_des);
}

TEST(Mppi, ZeroEstimateControllersAreBitIdentical) {
  SimConfig sim;
  MppiBaseline plain(small(64, 10, 21), sim, "mppi");
  MppiBaseline l1(small(64, 10, 21), sim, "l1-mppc");
  QuadState s = hover_state(Vec3::Zero(), sim);
  Rng rng(2);
  const auto traj = gen_zigzag(rng);
  for (int k = 0; k < 30; ++k) {
    const auto a = plain.compute(s, traj, k * sim.dt, Vec3::Zero());
    const auto b = l1.compute(s, traj, k * sim.dt, Vec3::Zero());
    ASSERT_EQ(a.f_des, b.f_des);
    ASSERT_EQ(a.omega_des, b.omega_des);
    s = step(s, a, Vec3::Zero(), sim);
  }
}

TEST(Mppi, DisturbanceEstimateChangesThePlan) {
  SimConfig sim;
  MppiController a(small(64, 10, 4), sim), b(small(64, 10, 4), sim);
  const QuadState s = hover_state(Vec3::Zero(), sim);
  const auto traj = hold(Vec3::Zero());
  EXPECT_NE(a.compute(s, traj, 0.0, Vec3::Zero()).f_des, b.compute(s, traj, 0.0, Vec3(0, 0, -3)).f_des);
}

TEST(Mppi, SeededRunsAreReproducible) {
  SimConfig sim;
  MppiController a(small(128, 10, 8), sim), b(small(128, 10, 8), sim);
  const QuadState s = hover_state(Vec3::Zero(), sim);
  Rng rng(1);
  const auto traj = gen_poly5(rng);
  for (int k = 0; k < 3; ++k) {
    const auto x = a.compute(s, traj, k * 0.02, Vec3::Zero());
    const auto y = b.compute(s, traj, k * 0.02, Vec3::Zero());
    EXPECT_EQ(x.f_des, y.f_des);
    EXPECT_EQ(x.omega_des, y.omega_des);
  }
}

TEST(Mppi, HoldsAHoverReferenceClosely) {
  SimConfig sim;
  MppiController mppi(small(1024, 40, 6), sim);
  const Vec3 target(0.3, -0.2, 0.1);
  const auto traj = hold(target);
  QuadState s = hover_state(Vec3::Zero(), sim);
  for (int k = 0; k < 150; ++k) s = step(s, mppi.compute(s, traj, k * sim.dt, Vec3::Zero()), Vec3::Zero(), sim);
  EXPECT_LT((s.p - target).norm(), 0.1);
}

TEST(MppiConfig, ValidatesAndReadsConfig) {
  MppiConfig c;
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.samples = 0;
  EXPECT_THROW(c.validate(), Error);
  const auto kv = KeyValueConfig::parse("[mppi]\nsamples = 512\ntemperature = 0.1\n");
  const auto m = MppiConfig::from_config(kv);
  EXPECT_EQ(m.samples, 512);
  EXPECT_DOUBLE_EQ(m.temperature, 0.1);
  EXPECT_EQ(m.horizon, 40);
}
