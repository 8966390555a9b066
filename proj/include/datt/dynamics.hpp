#pragma once

// Body-rate level quadrotor simulator: first-order actuation delay on thrust
// and body rates, semi-implicit Euler translation, exponential-map attitude.
// All forces are mass-normalized (m/s^2).

#include "datt/common.hpp"

namespace datt {

struct QuadState {
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 omega = Vec3::Zero();
  double f_sigma = 0.0;

  bool finite() const {
    return p.allFinite() && v.allFinite() && q.coeffs().allFinite() &&
           omega.allFinite() && std::isfinite(f_sigma);
  }
};

struct ControlCommand {
  double f_des = 0.0;
  Vec3 omega_des = Vec3::Zero();

  bool finite() const { return std::isfinite(f_des) && omega_des.allFinite(); }
};

struct DisturbanceState {
  Vec3 d = Vec3::Zero();
  // Diagonal of the Brownian diffusion matrix, (m/s^2)^2/s.
  Vec3 sigma = Vec3::Zero();
};

struct SimConfig {
  double dt = 0.02;
  double k_delay = 0.4;
  double mass = 0.04;
  Vec3 g{0.0, 0.0, -9.81};
  double thrust_ceiling = 2.0 * 9.81;
  double rate_limit = 10.0;
  std::uint64_t seed = 0;

  double disturbance_sigma = 0.01;
  double disturbance_cap = 10.0;
  double initial_disturbance_max = 3.5;

  double crash_position_error = 5.0;
  double crash_tilt_deg = 85.0;

  double hover_thrust() const { return g.norm(); }

  void validate() const {
    if (!(dt > 0.0)) throw Error("SimConfig: dt must be positive");
    if (!(k_delay > 0.0 && k_delay <= 1.0)) throw Error("SimConfig: k_delay must be in (0, 1]");
    if (!(thrust_ceiling > 0.0)) throw Error("SimConfig: thrust ceiling must be positive");
    if (!(rate_limit > 0.0)) throw Error("SimConfig: rate limit must be positive");
    if (!(disturbance_cap > 0.0)) throw Error("SimConfig: disturbance cap must be positive");
  }

  /// Reads keys under `sim.` (e.g. `sim.dt = 0.02`); missing keys keep defaults.
  static SimConfig from_config(const KeyValueConfig& kv, const std::string& prefix = "sim.") {
    SimConfig c;
    c.dt = kv.get_double(prefix + "dt", c.dt);
    c.k_delay = kv.get_double(prefix + "k_delay", c.k_delay);
    c.mass = kv.get_double(prefix + "mass", c.mass);
    const double gz = kv.get_double(prefix + "gravity", -c.g.z());
    c.g = Vec3(0.0, 0.0, -gz);
    c.thrust_ceiling = kv.get_double(prefix + "thrust_ceiling", 2.0 * gz);
    c.rate_limit = kv.get_double(prefix + "rate_limit", c.rate_limit);
    c.seed = static_cast<std::uint64_t>(kv.get_int(prefix + "seed", 0));
    c.disturbance_sigma = kv.get_double(prefix + "disturbance_sigma", c.disturbance_sigma);
    c.disturbance_cap = kv.get_double(prefix + "disturbance_cap", c.disturbance_cap);
    c.initial_disturbance_max =
        kv.get_double(prefix + "initial_disturbance_max", c.initial_disturbance_max);
    c.crash_position_error = kv.get_double(prefix + "crash_position_error", c.crash_position_error);
    c.crash_tilt_deg = kv.get_double(prefix + "crash_tilt_deg", c.crash_tilt_deg);
    c.validate();
    return c;
  }
};

/// q * exp(omega * dt / 2), renormalized.
inline Quat integrate_attitude(const Quat& q, const Vec3& omega, double dt) {
  const double angle = omega.norm() * dt;
  Quat dq;
  if (angle < 1e-12) {
    dq = Quat(1.0, 0.5 * omega.x() * dt, 0.5 * omega.y() * dt, 0.5 * omega.z() * dt);
  } else {
    const double s = std::sin(0.5 * angle) / omega.norm();
    dq = Quat(std::cos(0.5 * angle), s * omega.x(), s * omega.y(), s * omega.z());
  }
  Quat out = q * dq;
  out.normalize();
  return out;
}

inline ControlCommand clamp_command(const ControlCommand& cmd, const SimConfig& cfg) {
  ControlCommand c;
  c.f_des = std::clamp(cmd.f_des, 0.0, cfg.thrust_ceiling);
  c.omega_des = cmd.omega_des.cwiseMax(-cfg.rate_limit).cwiseMin(cfg.rate_limit);
  return c;
}

/// Advances the state by one step of cfg.dt. The disturbance is only read.
inline QuadState step(const QuadState& s, const ControlCommand& cmd, const Vec3& d,
                      const SimConfig& cfg) {
  if (!s.finite()) throw Error("dynamics::step: non-finite state");
  if (!cmd.finite()) throw Error("dynamics::step: non-finite command");
  if (!d.allFinite()) throw Error("dynamics::step: non-finite disturbance");

  const ControlCommand c = clamp_command(cmd, cfg);
  QuadState n;
  n.omega = s.omega + cfg.k_delay * (c.omega_des - s.omega);
  n.f_sigma = s.f_sigma + cfg.k_delay * (c.f_des - s.f_sigma);

  const Vec3 acc = cfg.g + thrust_axis(s.q) * n.f_sigma + d;
  n.v = s.v + acc * cfg.dt;
  n.p = s.p + n.v * cfg.dt;
  n.q = integrate_attitude(s.q, n.omega, cfg.dt);

  if (!n.finite()) throw NumericalFault("dynamics::step: non-finite state after integration");
  return n;
}

inline QuadState step(const QuadState& s, const ControlCommand& cmd, const DisturbanceState& dist,
                      const SimConfig& cfg) {
  return step(s, cmd, dist.d, cfg);
}

inline Vec3 clamp_norm(const Vec3& v, double cap) {
  const double n = v.norm();
  return n > cap ? Vec3(v * (cap / n)) : v;
}

/// Brownian update d <- d + eps, eps ~ N(0, Sigma dt), then clamped to `cap`.
inline DisturbanceState evolve_disturbance(const DisturbanceState& dist, double dt, Rng& rng,
                                           double cap = 10.0) {
  if (!(dt > 0.0)) throw Error("evolve_disturbance: dt must be positive");
  DisturbanceState out = dist;
  if (dist.sigma.isZero()) return out;
  for (int i = 0; i < 3; ++i) out.d[i] += std::sqrt(dist.sigma[i] * dt) * rng.normal();
  out.d = clamp_norm(out.d, cap);
  return out;
}

/// Uniform random direction, magnitude uniform in [0, max_magnitude].
inline DisturbanceState sample_initial_disturbance(Rng& rng, double max_magnitude = 3.5,
                                                   double sigma = 0.01) {
  Vec3 dir;
  do {
    dir = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (dir.norm() < 1e-9);
  dir.normalize();
  DisturbanceState out;
  out.d = dir * rng.uniform(0.0, max_magnitude);
  out.sigma = Vec3::Constant(sigma);
  return out;
}

inline DisturbanceState sample_initial_disturbance(Rng& rng, const SimConfig& cfg) {
  return sample_initial_disturbance(rng, cfg.initial_disturbance_max, cfg.disturbance_sigma);
}

/// Closed-loop divergence: position error, tilt, or non-finite state.
inline bool crashed(const QuadState& s, const Vec3& p_ref, const SimConfig& cfg) {
  if (!s.finite()) return true;
  if ((s.p - p_ref).norm() > cfg.crash_position_error) return true;
  return tilt_of(s.q) > cfg.crash_tilt_deg * kPi / 180.0;
}

inline QuadState hover_state(const Vec3& p, const SimConfig& cfg) {
  QuadState s;
  s.p = p;
  s.f_sigma = cfg.hover_thrust();
  return s;
}

}  // namespace datt
