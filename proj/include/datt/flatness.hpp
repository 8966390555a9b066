#pragma once

// PID position loop + tilt-prioritized attitude law producing collective
// thrust and body rates.

#include "datt/trajectories.hpp"

namespace datt {

struct FlatnessGains {
  Vec3 kp{6.0, 6.0, 6.0};
  Vec3 ki{1.5, 1.5, 1.5};
  Vec3 kd{4.0, 4.0, 4.0};
  Vec3 kr{120.0, 120.0, 0.0};
  double kyaw = 13.75;
  // Bound on each component of K_I * integral, m/s^2.
  double integral_clamp = 2.0;
  // Central-difference spacing for reference derivatives, s.
  double fd_step = 0.02;
  double yaw_ref = 0.0;

  void validate() const {
    auto nonneg = [](const Vec3& v) { return (v.array() >= 0.0).all(); };
    if (!nonneg(kp) || !nonneg(ki) || !nonneg(kd) || !nonneg(kr) || kyaw < 0.0 ||
        integral_clamp < 0.0)
      throw Error("FlatnessGains: gains must be non-negative");
    if (!(fd_step > 0.0)) throw Error("FlatnessGains: fd_step must be positive");
  }

  static FlatnessGains from_config(const KeyValueConfig& kv, const std::string& prefix = "flatness.") {
    FlatnessGains g;
    g.kp = Vec3::Constant(kv.get_double(prefix + "kp", 6.0));
    g.ki = Vec3::Constant(kv.get_double(prefix + "ki", 1.5));
    g.kd = Vec3::Constant(kv.get_double(prefix + "kd", 4.0));
    const double kr = kv.get_double(prefix + "kr", 120.0);
    g.kr = Vec3(kr, kr, 0.0);
    g.kyaw = kv.get_double(prefix + "kyaw", g.kyaw);
    g.integral_clamp = kv.get_double(prefix + "integral_clamp", g.integral_clamp);
    g.fd_step = kv.get_double(prefix + "fd_step", g.fd_step);
    g.validate();
    return g;
  }
};

struct IntegratorState {
  Vec3 integral = Vec3::Zero();  // integral of position error, m*s
};

struct ReferenceDerivatives {
  Vec3 p, v, a;
};

/// Central finite differences; the trajectory clamps outside [0, duration].
inline ReferenceDerivatives reference_derivatives(const ReferenceTrajectory& traj, double t,
                                                  double h) {
  ReferenceDerivatives r;
  r.p = traj.eval(t);
  const Vec3 fwd = traj.eval(t + h);
  const Vec3 back = traj.eval(t - h);
  r.v = (fwd - back) / (2.0 * h);
  r.a = (fwd - 2.0 * r.p + back) / (h * h);
  return r;
}

/// Desired acceleration a_fb (mass-normalized, disturbance compensated).
inline Vec3 flatness_feedback_acceleration(const QuadState& s, const ReferenceDerivatives& ref,
                                           const Vec3& d_hat, const FlatnessGains& gains,
                                           const IntegratorState& integ, const Vec3& g) {
  const Vec3 integ_term =
      (gains.ki.cwiseProduct(integ.integral)).cwiseMax(-gains.integral_clamp).cwiseMin(gains.integral_clamp);
  return -gains.kp.cwiseProduct(s.p - ref.p) - gains.kd.cwiseProduct(s.v - ref.v) - integ_term +
         ref.a - g - d_hat;
}

/// One control step. Advances `integ` by dt.
inline ControlCommand flatness_control(const QuadState& s, const ReferenceTrajectory& traj, double t,
                                       const Vec3& d_hat, const FlatnessGains& gains,
                                       IntegratorState& integ, const SimConfig& sim) {
  const ReferenceDerivatives ref = reference_derivatives(traj, t, gains.fd_step);
  const Vec3 a_fb = flatness_feedback_acceleration(s, ref, d_hat, gains, integ, sim.g);

  // Anti-windup: keep K_I * integral inside the clamp.
  integ.integral += (s.p - ref.p) * sim.dt;
  for (int i = 0; i < 3; ++i) {
    if (gains.ki[i] > 0.0) {
      const double lim = gains.integral_clamp / gains.ki[i];
      integ.integral[i] = std::clamp(integ.integral[i], -lim, lim);
    }
  }

  const Vec3 z = thrust_axis(s.q);
  const double norm = a_fb.norm();
  const Vec3 z_fb = norm < 1e-6 ? Vec3(-sim.g.normalized()) : Vec3(a_fb / norm);

  ControlCommand cmd;
  cmd.f_des = norm < 1e-6 ? sim.hover_thrust() : a_fb.dot(z);
  // -K_R (z_fb x z), realized in the body frame where K_R is diagonal.
  const Vec3 tilt_err_body = s.q.conjugate() * (z_fb.cross(z));
  const double yaw_fb = -gains.kyaw * wrap_angle(yaw_of(s.q) - gains.yaw_ref);
  cmd.omega_des = -gains.kr.cwiseProduct(tilt_err_body) + yaw_fb * Vec3::UnitZ();
  return cmd;
}

class FlatnessController {
 public:
  explicit FlatnessController(FlatnessGains gains = {}) : gains_(gains) { gains_.validate(); }

  void reset() { integ_ = {}; }

  ControlCommand compute(const QuadState& s, const ReferenceTrajectory& traj, double t,
                         const Vec3& d_hat, const SimConfig& sim) {
    return flatness_control(s, traj, t, d_hat, gains_, integ_, sim);
  }

  const FlatnessGains& gains() const { return gains_; }
  const IntegratorState& integrator() const { return integ_; }

 private:
  FlatnessGains gains_;
  IntegratorState integ_;
};

}  // namespace datt
