#pragma once

// Closed-loop evaluation: estimator -> controller -> dynamics -> disturbance,
// tracking-error metric, trajectory banks and aggregate rows.

#include <chrono>
#include <functional>
#include <memory>

#include "datt/flatness.hpp"
#include "datt/l1_estimator.hpp"
#include "datt/mppi.hpp"
#include "datt/rollout_log.hpp"

namespace datt {

class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void reset() {}
  virtual ControlCommand compute(const QuadState& s, const ReferenceTrajectory& traj, double t,
                                 const Vec3& d_hat) = 0;
};

/// What an estimator sees after each control step.
struct StepContext {
  const QuadState& before;
  const ControlCommand& cmd;
  const QuadState& after;
  Vec3 measured_v;
  Vec3 true_d;
  double dt;
};

class DisturbanceEstimator {
 public:
  virtual ~DisturbanceEstimator() = default;
  virtual void reset(const QuadState& s, const Vec3& true_d) = 0;
  virtual void observe(const StepContext& ctx) = 0;
  virtual Vec3 estimate() const = 0;
};

class ZeroEstimator final : public DisturbanceEstimator {
 public:
  void reset(const QuadState&, const Vec3&) override {}
  void observe(const StepContext&) override {}
  Vec3 estimate() const override { return Vec3::Zero(); }
};

/// Passes the true disturbance through (training-time privileged input).
class TruthEstimator final : public DisturbanceEstimator {
 public:
  void reset(const QuadState&, const Vec3& d) override { d_ = d; }
  void observe(const StepContext& ctx) override { d_ = ctx.true_d; }
  Vec3 estimate() const override { return d_; }

 private:
  Vec3 d_ = Vec3::Zero();
};

class L1DisturbanceEstimator final : public DisturbanceEstimator {
 public:
  explicit L1DisturbanceEstimator(L1Config cfg = {}) : l1_(std::move(cfg)) {}
  void reset(const QuadState& s, const Vec3&) override { l1_.reset(s.v); }
  void observe(const StepContext& ctx) override {
    l1_.update(ctx.measured_v, ctx.before.q, ctx.after.f_sigma, ctx.dt);
  }
  Vec3 estimate() const override { return l1_.d_hat(); }
  const L1Estimator& l1() const { return l1_; }

 private:
  L1Estimator l1_;
};

class FlatnessBaseline final : public Controller {
 public:
  FlatnessBaseline(FlatnessGains gains, SimConfig sim, std::string name = "flatness")
      : ctrl_(gains), sim_(std::move(sim)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  void reset() override { ctrl_.reset(); }
  ControlCommand compute(const QuadState& s, const ReferenceTrajectory& traj, double t,
                         const Vec3& d_hat) override {
    return ctrl_.compute(s, traj, t, d_hat, sim_);
  }

 private:
  FlatnessController ctrl_;
  SimConfig sim_;
  std::string name_;
};

class MppiBaseline final : public Controller {
 public:
  MppiBaseline(MppiConfig cfg, SimConfig sim, std::string name = "mppi")
      : mppi_(cfg, std::move(sim)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  void reset() override { mppi_.reset(); }
  ControlCommand compute(const QuadState& s, const ReferenceTrajectory& traj, double t,
                         const Vec3& d_hat) override {
    return mppi_.compute(s, traj, t, d_hat);
  }

 private:
  MppiController mppi_;
  std::string name_;
};

enum class DisturbanceRegime { None, Constant, Brownian };

inline DisturbanceRegime regime_from_string(const std::string& s) {
  if (s == "none") return DisturbanceRegime::None;
  if (s == "constant") return DisturbanceRegime::Constant;
  if (s == "brownian") return DisturbanceRegime::Brownian;
  throw Error("unknown disturbance regime: " + s);
}

inline std::string to_string(DisturbanceRegime r) {
  switch (r) {
    case DisturbanceRegime::None: return "none";
    case DisturbanceRegime::Constant: return "constant";
    case DisturbanceRegime::Brownian: return "brownian";
  }
  return "none";
}

struct BankSpec {
  TrajectoryKind kind = TrajectoryKind::Zigzag;
  int count = 10;
  std::uint64_t seed = 2024;
  TrajectoryOptions options;
};

struct EpisodeSpec {
  SimConfig sim;
  int steps = 500;
  DisturbanceRegime regime = DisturbanceRegime::None;
  double velocity_noise_std = 0.0;
  bool log_rollout = false;
};

struct EpisodeResult {
  int index = 0;
  double mean_error = 0.0;
  bool crashed = false;
  int steps_run = 0;
  double mean_compute_us = 0.0;
  double max_compute_us = 0.0;
  std::vector<RolloutRow> rollout;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
  int crashes = 0;
  int count = 0;
  double mean_compute_us = 0.0;
};

struct EvalResult {
  std::string controller;
  std::vector<EpisodeResult> episodes;
  Aggregate aggregate;
};

/// The simulator plant. Tests substitute other plants through the template
/// parameter of run_episode.
struct SimPlant {
  QuadState advance(const QuadState& s, const ControlCommand& cmd, const Vec3& d,
                    const SimConfig& sim, double /*t_next*/) const {
    return step(s, cmd, d, sim);
  }
};

inline std::vector<ReferenceTrajectory> make_bank(const BankSpec& bank) {
  if (bank.count < 1) throw Error("bank: trajectory count must be >= 1");
  std::vector<ReferenceTrajectory> out;
  for (int i = 0; i < bank.count; ++i) {
    Rng rng(mix_seed(bank.seed, static_cast<std::uint64_t>(i)));
    out.push_back(gen_trajectory(bank.kind, rng, bank.options));
  }
  return out;
}

inline DisturbanceState initial_disturbance(const EpisodeSpec& spec, Rng& rng) {
  switch (spec.regime) {
    case DisturbanceRegime::None: return {};
    case DisturbanceRegime::Constant: {
      auto d = sample_initial_disturbance(rng, spec.sim);
      d.sigma.setZero();
      return d;
    }
    case DisturbanceRegime::Brownian: return sample_initial_disturbance(rng, spec.sim);
  }
  return {};
}

template <typename Plant = SimPlant>
EpisodeResult run_episode(const EpisodeSpec& spec, Controller& ctrl, DisturbanceEstimator& est,
                          const ReferenceTrajectory& traj, std::uint64_t seed,
                          const Plant& plant = Plant{}) {
  using clock = std::chrono::steady_clock;
  Rng rng(seed);
  Rng noise_rng(mix_seed(seed, 0x6e6f697365ull));
  const SimConfig& sim = spec.sim;
  DisturbanceState dist = initial_disturbance(spec, rng);

  QuadState s = hover_state(traj.eval(0.0), sim);
  ctrl.reset();
  est.reset(s, dist.d);

  EpisodeResult r;
  double err_sum = 0.0, compute_sum = 0.0;
  for (int k = 0; k < spec.steps; ++k) {
    const double t = k * sim.dt;
    const Vec3 d_hat = est.estimate();
    const auto t0 = clock::now();
    ControlCommand cmd;
    QuadState next;
    try {
      cmd = ctrl.compute(s, traj, t, d_hat);
      const double us = std::chrono::duration<double, std::micro>(clock::now() - t0).count();
      compute_sum += us;
      r.max_compute_us = std::max(r.max_compute_us, us);
      next = plant.advance(s, cmd, dist.d, sim, t + sim.dt);
    } catch (const Error&) {
      r.crashed = true;
      break;
    }
    const Vec3 p_ref = traj.eval(t + sim.dt);
    r.steps_run = k + 1;
    if (spec.log_rollout) r.rollout.push_back({t + sim.dt, next, dist.d, d_hat, p_ref});
    err_sum += (next.p - p_ref).norm();
    if (crashed(next, p_ref, sim)) {
      r.crashed = true;
      break;
    }
    Vec3 v_meas = next.v;
    if (spec.velocity_noise_std > 0.0)
      for (int a = 0; a < 3; ++a) v_meas[a] += spec.velocity_noise_std * noise_rng.normal();
    try {
      est.observe(StepContext{s, cmd, next, v_meas, dist.d, sim.dt});
    } catch (const Error&) {
      r.crashed = true;
      break;
    }
    s = next;
    if (spec.regime == DisturbanceRegime::Brownian)
      dist = evolve_disturbance(dist, sim.dt, rng, sim.disturbance_cap);
  }
  r.mean_error = r.steps_run > 0 ? err_sum / r.steps_run : 0.0;
  r.mean_compute_us = r.steps_run > 0 ? compute_sum / r.steps_run : 0.0;
  return r;
}

/// Mean and sample std over non-crashed rows; crashes counted separately.
inline Aggregate aggregate_rows(const std::vector<EpisodeResult>& rows) {
  Aggregate a;
  a.count = static_cast<int>(rows.size());
  std::vector<double> ok;
  double compute = 0.0;
  for (const auto& r : rows) {
    compute += r.mean_compute_us;
    if (r.crashed)
      ++a.crashes;
    else
      ok.push_back(r.mean_error);
  }
  a.mean_compute_us = rows.empty() ? 0.0 : compute / static_cast<double>(rows.size());
  if (ok.empty()) {
    a.mean = std::numeric_limits<double>::quiet_NaN();
    return a;
  }
  double sum = 0.0;
  for (double e : ok) sum += e;
  a.mean = sum / static_cast<double>(ok.size());
  if (ok.size() > 1) {
    double ss = 0.0;
    for (double e : ok) ss += (e - a.mean) * (e - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(ok.size() - 1));
  }
  return a;
}

/// Episode seeds derive from (bank seed, index) so rows do not depend on
/// evaluation order.
inline std::uint64_t episode_seed(const BankSpec& bank, int index) {
  return mix_seed(bank.seed ^ 0x65706973ull, static_cast<std::uint64_t>(index));
}

inline EvalResult run_bank(const EpisodeSpec& spec, const BankSpec& bank, Controller& ctrl,
                           DisturbanceEstimator& est,
                           const std::function<void(const EpisodeResult&)>& on_row = {}) {
  EvalResult out;
  out.controller = ctrl.name();
  const auto trajs = make_bank(bank);
  for (int i = 0; i < bank.count; ++i) {
    EpisodeResult r = run_episode(spec, ctrl, est, trajs[static_cast<std::size_t>(i)],
                                  episode_seed(bank, i));
    r.index = i;
    if (on_row) on_row(r);
    out.episodes.push_back(std::move(r));
  }
  out.aggregate = aggregate_rows(out.episodes);
  return out;
}

inline void write_rows_csv(const EvalResult& res, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f.precision(17);
  f << "index,mean_error,crashed,steps,mean_compute_us,max_compute_us\n";
  for (const auto& r : res.episodes)
    f << r.index << ',' << r.mean_error << ',' << (r.crashed ? 1 : 0) << ',' << r.steps_run << ','
      << r.mean_compute_us << ',' << r.max_compute_us << '\n';
}

inline std::string format_aggregate(const std::string& name, const Aggregate& a) {
  char buf[256];
  if (a.crashes == a.count)
    std::snprintf(buf, sizeof buf, "%-14s crash (%d/%d)  compute %.1f us/step", name.c_str(),
                  a.crashes, a.count, a.mean_compute_us);
  else
    std::snprintf(buf, sizeof buf, "%-14s %.4f +- %.4f m  crashes %d/%d  compute %.1f us/step",
                  name.c_str(), a.mean, a.std, a.crashes, a.count, a.mean_compute_us);
  return buf;
}

}  // namespace datt
