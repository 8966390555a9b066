#pragma once

// L1 adaptive force-disturbance estimator: velocity predictor, exact
// piecewise-constant adaptation law, first-order low-pass filter.

#include <unsupported/Eigen/MatrixFunctions>

#include "datt/dynamics.hpp"

namespace datt {

struct L1Config {
  // Hurwitz predictor gain. The piecewise-constant law settles at
  // e^{A_s dt} d, so |A_s| dt must stay small for an unbiased estimate.
  Mat3 A_s = -0.2 * Mat3::Identity();
  // Low-pass time constant, s. Zero disables the filter.
  double lpf_tau = 0.2;
  Vec3 g{0.0, 0.0, -9.81};

  static L1Config from_config(const KeyValueConfig& kv, const std::string& prefix = "l1.") {
    L1Config c;
    c.A_s = kv.get_double(prefix + "a_s", -0.2) * Mat3::Identity();
    c.lpf_tau = kv.get_double(prefix + "lpf_tau", c.lpf_tau);
    c.g = Vec3(0, 0, -kv.get_double("sim.gravity", 9.81));
    return c;
  }
};

struct L1State {
  Vec3 v_hat = Vec3::Zero();
  Vec3 d_hat = Vec3::Zero();      // filtered estimate, m/s^2
  Vec3 d_hat_new = Vec3::Zero();  // unfiltered adaptation output
  Vec3 v_prev = Vec3::Zero();     // last measured velocity
  bool initialized = false;
};

/// -(e^{A dt} - I)^{-1} A e^{A dt}, the matrix mapping prediction error to
/// the piecewise-constant disturbance estimate.
inline Mat3 l1_adaptation_gain(const Mat3& A_s, double dt) {
  const Mat3 E = (A_s * dt).exp();
  const Mat3 M = E - Mat3::Identity();
  Eigen::FullPivLU<Mat3> lu(M);
  if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-300)
    throw NumericalFault("l1: e^{A_s dt} - I is singular");
  return -lu.inverse() * A_s * E;
}

/// Per-axis form of the gain for A_s = a I.
inline double l1_adaptation_gain_scalar(double a, double dt) {
  const double e = std::exp(a * dt);
  return -a * e / (e - 1.0);
}

class L1Estimator {
 public:
  explicit L1Estimator(L1Config cfg = {}) : cfg_(std::move(cfg)) {
    const Eigen::EigenSolver<Mat3> es(cfg_.A_s);
    if ((es.eigenvalues().real().array() >= 0.0).any()) throw Error("l1: A_s must be Hurwitz");
  }

  const L1Config& config() const { return cfg_; }
  const L1State& state() const { return state_; }
  const Vec3& d_hat() const { return state_.d_hat; }

  void reset() { state_ = {}; }

  /// Starts the predictor at the measured velocity.
  void reset(const Vec3& v) {
    state_ = {};
    state_.v_hat = v;
    state_.v_prev = v;
    state_.initialized = true;
  }

  /// One estimator step. `q` and `f` are the attitude and thrust applied over
  /// the interval that ended with the measurement `v`.
  const L1State& update(const Vec3& v, const Quat& q, double f, double dt) {
    if (!(dt > 0.0)) throw Error("l1: dt must be positive");
    if (!v.allFinite() || !q.coeffs().allFinite() || !std::isfinite(f))
      throw Error("l1: non-finite input");
    if (!state_.initialized) {
      reset(v);
      return state_;
    }
    if (dt != gain_dt_) {
      gain_ = l1_adaptation_gain(cfg_.A_s, dt);
      gain_dt_ = dt;
    }
    const Vec3 acc = cfg_.g + thrust_axis(q) * f + state_.d_hat_new +
                     cfg_.A_s * (state_.v_hat - state_.v_prev);
    state_.v_hat = state_.v_hat + acc * dt;
    state_.d_hat_new = gain_ * (state_.v_hat - v);
    if (cfg_.lpf_tau <= 0.0) {
      state_.d_hat = state_.d_hat_new;
    } else {
      const double alpha = dt / (dt + cfg_.lpf_tau);
      state_.d_hat = state_.d_hat + alpha * (state_.d_hat_new - state_.d_hat);
    }
    state_.v_prev = v;
    if (!state_.d_hat.allFinite()) throw NumericalFault("l1: non-finite estimate");
    return state_;
  }

 private:
  L1Config cfg_;
  L1State state_;
  Mat3 gain_ = Mat3::Zero();
  double gain_dt_ = -1.0;
};

}  // namespace datt
