#pragma once

// Model Predictive Path Integral control over (thrust, body-rate) sequences.
// The rollout model is dynamics::step with the estimated disturbance held
// constant over the horizon; the running cost is the position error norm.

#include "datt/trajectories.hpp"

namespace datt {

struct MppiConfig {
  int samples = 8192;
  int horizon = 40;
  double dt = 0.02;
  double temperature = 0.05;
  double thrust_std = 2.0;  // m/s^2
  double rate_std = 1.0;    // rad/s, per axis
  std::uint64_t seed = 0;
  // Actuation delay assumed by the rollout model; 0 uses the plant's value,
  // 1 applies the sampled thrust and rates directly.
  double model_k_delay = 0.0;

  void validate() const {
    if (!(model_k_delay >= 0.0 && model_k_delay <= 1.0))
      throw Error("MppiConfig: model_k_delay must be in [0, 1]");
    if (samples < 1) throw Error("MppiConfig: samples must be >= 1");
    if (horizon < 0) throw Error("MppiConfig: horizon must be >= 0");
    if (!(temperature > 0.0)) throw Error("MppiConfig: temperature must be positive");
    if (!(dt > 0.0)) throw Error("MppiConfig: dt must be positive");
    if (thrust_std < 0.0 || rate_std < 0.0) throw Error("MppiConfig: noise std must be >= 0");
  }

  static MppiConfig from_config(const KeyValueConfig& kv, const std::string& prefix = "mppi.") {
    MppiConfig c;
    c.samples = static_cast<int>(kv.get_int(prefix + "samples", c.samples));
    c.horizon = static_cast<int>(kv.get_int(prefix + "horizon", c.horizon));
    c.dt = kv.get_double("sim.dt", c.dt);
    c.temperature = kv.get_double(prefix + "temperature", c.temperature);
    c.thrust_std = kv.get_double(prefix + "thrust_std", c.thrust_std);
    c.rate_std = kv.get_double(prefix + "rate_std", c.rate_std);
    c.seed = static_cast<std::uint64_t>(kv.get_int(prefix + "seed", 0));
    c.model_k_delay = kv.get_double(prefix + "model_k_delay", c.model_k_delay);
    c.validate();
    return c;
  }
};

using ControlSequence = std::vector<ControlCommand>;

/// Sum of ||p_i - ref_i|| over the rollout; +inf when the model faults.
inline double rollout_cost(const QuadState& s0, const ControlSequence& seq,
                           const std::vector<Vec3>& refs, const Vec3& d, const SimConfig& sim) {
  if (refs.size() < seq.size()) throw Error("rollout_cost: fewer references than controls");
  QuadState s = s0;
  double cost = 0.0;
  try {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      s = step(s, seq[i], d, sim);
      cost += (s.p - refs[i]).norm();
    }
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
  return std::isfinite(cost) ? cost : std::numeric_limits<double>::infinity();
}

/// References p_ref(t + (i+1) dt), i = 0..horizon-1.
inline std::vector<Vec3> horizon_references(const ReferenceTrajectory& traj, double t, int horizon,
                                            double dt) {
  std::vector<Vec3> refs;
  refs.reserve(static_cast<std::size_t>(horizon));
  for (int i = 0; i < horizon; ++i) refs.push_back(traj.eval(t + (i + 1) * dt));
  return refs;
}

inline double rollout_cost(const QuadState& s0, const ControlSequence& seq,
                           const ReferenceTrajectory& traj, double t, const Vec3& d,
                           const SimConfig& sim) {
  return rollout_cost(s0, seq, horizon_references(traj, t, static_cast<int>(seq.size()), sim.dt), d,
                      sim);
}

/// exp(-(c - c_min)/lambda) normalized; non-finite costs get zero weight.
inline std::vector<double> softmax_weights(const std::vector<double>& costs, double temperature) {
  double c_min = std::numeric_limits<double>::infinity();
  for (double c : costs)
    if (std::isfinite(c)) c_min = std::min(c_min, c);
  if (!std::isfinite(c_min)) throw NumericalFault("mppi: every sampled rollout faulted");
  std::vector<double> w(costs.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (!std::isfinite(costs[i])) continue;
    w[i] = std::exp(-(costs[i] - c_min) / temperature);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

class MppiController {
 public:
  MppiController(MppiConfig cfg, SimConfig sim) : cfg_(cfg), sim_(std::move(sim)) {
    cfg_.validate();
    sim_.dt = cfg_.dt;
    if (cfg_.model_k_delay > 0.0) sim_.k_delay = cfg_.model_k_delay;
    reset();
  }

  void reset() {
    ControlCommand hover;
    hover.f_des = sim_.hover_thrust();
    nominal_.assign(static_cast<std::size_t>(cfg_.horizon), hover);
    calls_ = 0;
  }

  const ControlSequence& nominal() const { return nominal_; }
  void set_nominal(ControlSequence seq) {
    if (seq.size() != static_cast<std::size_t>(cfg_.horizon))
      throw Error("mppi: nominal sequence length must equal the horizon");
    nominal_ = std::move(seq);
  }
  const std::vector<double>& last_costs() const { return costs_; }
  const std::vector<double>& last_weights() const { return weights_; }
  const std::vector<ControlSequence>& last_samples() const { return samples_; }

  /// Samples, weights and updates the nominal sequence; returns its first
  /// command and shifts the nominal one step for the next call.
  ControlCommand compute(const QuadState& s, const ReferenceTrajectory& traj, double t,
                         const Vec3& d_hat) {
    if (cfg_.horizon == 0) {
      ControlCommand hover;
      hover.f_des = sim_.hover_thrust();
      return hover;
    }
    const auto refs = horizon_references(traj, t, cfg_.horizon, cfg_.dt);
    const auto n = static_cast<std::size_t>(cfg_.samples);
    samples_.resize(n);
    costs_.resize(n);
    const std::uint64_t call_seed = mix_seed(cfg_.seed, calls_++);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(mix_seed(call_seed, i));
      auto& seq = samples_[i];
      seq.resize(nominal_.size());
      for (std::size_t k = 0; k < nominal_.size(); ++k) {
        ControlCommand c = nominal_[k];
        c.f_des += cfg_.thrust_std * rng.normal();
        for (int a = 0; a < 3; ++a) c.omega_des[a] += cfg_.rate_std * rng.normal();
        seq[k] = clamp_command(c, sim_);
      }
      costs_[i] = rollout_cost(s, seq, refs, d_hat, sim_);
    }
    weights_ = softmax_weights(costs_, cfg_.temperature);

    ControlSequence updated(nominal_.size());
    for (auto& c : updated) {
      c.f_des = 0.0;
      c.omega_des.setZero();
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (weights_[i] == 0.0) continue;
      for (std::size_t k = 0; k < updated.size(); ++k) {
        updated[k].f_des += weights_[i] * samples_[i][k].f_des;
        updated[k].omega_des += weights_[i] * samples_[i][k].omega_des;
      }
    }
    const ControlCommand out = updated.front();
    std::rotate(updated.begin(), updated.begin() + 1, updated.end());
    updated.back() = updated[updated.size() >= 2 ? updated.size() - 2 : 0];
    nominal_ = std::move(updated);
    return out;
  }

 private:
  MppiConfig cfg_;
  SimConfig sim_;
  ControlSequence nominal_;
  std::vector<ControlSequence> samples_;
  std::vector<double> costs_;
  std::vector<double> weights_;
  std::uint64_t calls_ = 0;
};

}  // namespace datt
