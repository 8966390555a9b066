#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "datt/harness.hpp"

using namespace datt;

namespace {

std::string tmp_path(const std::string& name) {
  std::filesystem::create_directories(DATT_TEST_TMP);
  return std::string(DATT_TEST_TMP) + "/" + name;
}

// Test-only plant that places the vehicle exactly on the reference.
struct TeleportPlant {
  const ReferenceTrajectory* traj;
  QuadState advance(const QuadState& s, const ControlCommand&, const Vec3&, const SimConfig& sim,
                    double t_next) const {
    QuadState n = s;
    n.p = traj->eval(t_next);
    n.v = (traj->eval(t_next) - traj->eval(t_next - sim.dt)) / sim.dt;
    return n;
  }
};

class HoverController final : public Controller {
 public:
  std::string name() const override { return "hover"; }
  ControlCommand compute(const QuadState&, const ReferenceTrajectory&, double, const Vec3&) override {
    ControlCommand c;
    c.f_des = 9.81;
    return c;
  }
};

class ZeroCommand final : public Controller {
 public:
  std::string name() const override { return "zero"; }
  ControlCommand compute(const QuadState&, const ReferenceTrajectory&, double, const Vec3&) override { return {}; }
};

// Records what the estimator is shown.
class SpyEstimator final : public DisturbanceEstimator {
 public:
  std::vector<Vec3> true_d, measured, actual;
  void reset(const QuadState&, const Vec3& d) override { true_d.assign(1, d); }
  void observe(const StepContext& c) override {
    true_d.push_back(c.true_d);
    measured.push_back(c.measured_v);
    actual.push_back(c.after.v);
  }
  Vec3 estimate() const override { return Vec3::Zero(); }
};

std::vector<double> csv_column(const std::string& path, int col, std::vector<int>* crashed = nullptr) {
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  std::vector<double> out;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    out.push_back(std::stod(cells[static_cast<std::size_t>(col)]));
    if (crashed) crashed->push_back(std::stoi(cells[2]));
  }
  return out;
}

}  // namespace

TEST(RunEpisode, OracleTrackerHasNoError) {
  EpisodeSpec spec;
  Rng rng(1);
  for (auto kind : {TrajectoryKind::Zigzag, TrajectoryKind::Poly5, TrajectoryKind::Chained}) {
    const auto traj = gen_trajectory(kind, rng);
    HoverController c;
    ZeroEstimator e;
    const auto r = run_episode(spec, c, e, traj, 3, TeleportPlant{&traj});
    EXPECT_FALSE(r.crashed);
    EXPECT_EQ(r.steps_run, 500);
    EXPECT_LT(r.mean_error, 1e-6);
  }
}

TEST(RunEpisode, ZeroCommandFallsAndCrashes) {
  EpisodeSpec spec;
  Rng rng(2);
  const auto traj = gen_zigzag(rng);
  ZeroCommand c;
  ZeroEstimator e;
  const auto r = run_episode(spec, c, e, traj, 3);
  EXPECT_TRUE(r.crashed);
  EXPECT_LT(r.steps_run, 500);
}

TEST(RunEpisode, SameSeedIsDeterministic) {
  EpisodeSpec spec;
  spec.regime = DisturbanceRegime::Brownian;
  spec.log_rollout = true;
  Rng rng(3);
  const auto traj = gen_poly5(rng);
  FlatnessBaseline c({}, spec.sim);
  L1DisturbanceEstimator e;
  const auto a = run_episode(spec, c, e, traj, 11);
  const auto b = run_episode(spec, c, e, traj, 11);
  EXPECT_EQ(a.mean_error, b.mean_error);
  ASSERT_EQ(a.rollout.size(), b.rollout.size());
  write_rollout_csv(a.rollout, tmp_path("det_a.csv"));
  write_rollout_csv(b.rollout, tmp_path("det_b.csv"));
  std::ifstream fa(tmp_path("det_a.csv")), fb(tmp_path("det_b.csv"));
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(fa), {}), std::string(std::istreambuf_iterator<char>(fb), {}));
}

TEST(RunEpisode, RolloutCsvReproducesTheMetric) {
  EpisodeSpec spec;
  spec.log_rollout = true;
  spec.regime = DisturbanceRegime::Constant;
  Rng rng(4);
  const auto traj = gen_zigzag(rng);
  FlatnessBaseline c({}, spec.sim);
  L1DisturbanceEstimator e;
  const auto r = run_episode(spec, c, e, traj, 5);
  ASSERT_EQ(static_cast<int>(r.rollout.size()), r.steps_run);
  write_rollout_csv(r.rollout, tmp_path("rollout.csv"));
  const auto rows = read_rollout_csv(tmp_path("rollout.csv"));
  EXPECT_NEAR(mean_tracking_error(rows), r.mean_error, 1e-12);
  EXPECT_EQ(rows.front().d, r.rollout.front().d);
}

TEST(RunEpisode, RegimesControlTheDisturbance) {
  Rng rng(5);
  const auto traj = gen_poly5(rng);
  HoverController c;
  for (auto regime : {DisturbanceRegime::None, DisturbanceRegime::Constant, DisturbanceRegime::Brownian}) {
    EpisodeSpec spec;
    spec.regime = regime;
    spec.steps = 50;
    SpyEstimator spy;
    run_episode(spec, c, spy, traj, 9, TeleportPlant{&traj});
    const Vec3 first = spy.true_d.front(), last = spy.true_d.back();
    if (regime == DisturbanceRegime::None) EXPECT_EQ(first.norm(), 0.0);
    if (regime == DisturbanceRegime::Constant) EXPECT_EQ(first, last);
    if (regime != DisturbanceRegime::None) EXPECT_GT(first.norm(), 0.0);
    if (regime == DisturbanceRegime::Brownian) EXPECT_NE(first, last);
    EXPECT_LE(first.norm(), 3.5);
  }
}

TEST(RunEpisode, VelocityNoiseReachesOnlyTheEstimator) {
  Rng rng(6);
  const auto traj = gen_poly5(rng);
  HoverController c;
  EpisodeSpec spec;
  spec.steps = 20;
  spec.velocity_noise_std = 0.1;
  SpyEstimator spy;
  run_episode(spec, c, spy, traj, 1, TeleportPlant{&traj});
  double diff = 0.0;
  for (std::size_t k = 0; k < spy.measured.size(); ++k) diff += (spy.measured[k] - spy.actual[k]).norm();
  EXPECT_GT(diff, 0.0);
  spec.velocity_noise_std = 0.0;
  SpyEstimator clean;
  run_episode(spec, c, clean, traj, 1, TeleportPlant{&traj});
  for (std::size_t k = 0; k < clean.measured.size(); ++k) EXPECT_EQ(clean.measured[k], clean.actual[k]);
}

TEST(Aggregate, ExcludesCrashesAndCountsThem) {
  std::vector<EpisodeResult> rows(4);
  rows[0].mean_error = 0.1;
  rows[1].mean_error = 0.3;
  rows[2].mean_error = 9.0;
  rows[2].crashed = true;
  rows[3].mean_error = 0.2;
  const auto a = aggregate_rows(rows);
  EXPECT_EQ(a.crashes, 1);
  EXPECT_EQ(a.count, 4);
  EXPECT_NEAR(a.mean, 0.2, 1e-15);
  EXPECT_NEAR(a.std, 0.1, 1e-15);
  rows[0].crashed = rows[1].crashed = rows[3].crashed = true;
  EXPECT_TRUE(std::isnan(aggregate_rows(rows).mean));
}

TEST(RunBank, SingleTrajectoryBankEqualsItsRow) {
  EpisodeSpec spec;
  BankSpec bank;
  bank.count = 1;
  FlatnessBaseline c({}, spec.sim);
  ZeroEstimator e;
  const auto res = run_bank(spec, bank, c, e);
  ASSERT_EQ(res.episodes.size(), 1u);
  EXPECT_EQ(res.aggregate.mean, res.episodes[0].mean_error);
  EXPECT_EQ(res.aggregate.std, 0.0);
}

TEST(RunBank, CsvRecomputationMatchesTheAggregate) {
  EpisodeSpec spec;
  spec.regime = DisturbanceRegime::Brownian;
  BankSpec bank;
  bank.kind = TrajectoryKind::Poly5;
  FlatnessBaseline c({}, spec.sim);
  L1DisturbanceEstimator e;
  const auto res = run_bank(spec, bank, c, e);
  write_rows_csv(res, tmp_path("rows.csv"));
  std::vector<int> crashed;
  const auto err = csv_column(tmp_path("rows.csv"), 1, &crashed);
  ASSERT_EQ(err.size(), 10u);
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < err.size(); ++i)
    if (!crashed[i]) {
      sum += err[i];
      ++n;
    }
  ASSERT_GT(n, 0);
  EXPECT_NEAR(sum / n, res.aggregate.mean, 1e-12);
}

TEST(RunBank, RowsDoNotDependOnEvaluationOrder) {
  EpisodeSpec spec;
  spec.regime = DisturbanceRegime::Brownian;
  BankSpec bank;
  bank.count = 3;
  FlatnessBaseline c({}, spec.sim);
  L1DisturbanceEstimator e;
  const auto all = run_bank(spec, bank, c, e);
  const auto trajs = make_bank(bank);
  const auto third = run_episode(spec, c, e, trajs[2], episode_seed(bank, 2));
  EXPECT_EQ(third.mean_error, all.episodes[2].mean_error);
  bank.count = 0;
  EXPECT_THROW(make_bank(bank), Error);
}

TEST(RunBank, FlatnessTracksASmoothBankWithoutCrashing) {
  EpisodeSpec spec;
  BankSpec bank;
  bank.kind = TrajectoryKind::Poly5;
  FlatnessBaseline c({}, spec.sim);
  ZeroEstimator e;
  const auto res = run_bank(spec, bank, c, e);
  EXPECT_EQ(res.aggregate.crashes, 0);
  EXPECT_LT(res.aggregate.mean, 0.3);
}

TEST(Regime, ParsesAndPrints) {
  for (auto r : {DisturbanceRegime::None, DisturbanceRegime::Constant, DisturbanceRegime::Brownian})
    EXPECT_EQ(regime_from_string(to_string(r)), r);
  EXPECT_THROW(regime_from_string("gusty"), Error);
}

TEST(Summary, ReportsCrashRowsInPlaceOfANumber) {
  Aggregate a;
  a.count = a.crashes = 10;
  EXPECT_NE(format_aggregate("flatness", a).find("crash"), std::string::npos);
  a.crashes = 0;
  a.mean = 0.25;
  EXPECT_NE(format_aggregate("flatness", a).find("0.2500"), std::string::npos);
}
