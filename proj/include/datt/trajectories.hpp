#pragma once

// Reference trajectories: piecewise-linear (zigzag, star, triangle, custom)
// and piecewise-quintic (poly5, chained). Evaluation clamps t to
// [0, duration]. All generators are planar at a fixed altitude.

#include <json.hpp>

#include <array>
#include <optional>
#include <numeric>

#include "datt/dynamics.hpp"

namespace datt {

enum class TrajectoryKind { Zigzag, Poly5, Chained, Star, Triangle, Custom };

inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::Zigzag: return "zigzag";
    case TrajectoryKind::Poly5: return "poly5";
    case TrajectoryKind::Chained: return "chained";
    case TrajectoryKind::Star: return "star";
    case TrajectoryKind::Triangle: return "triangle";
    case TrajectoryKind::Custom: return "custom";
  }
  return "custom";
}

inline TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "zigzag") return TrajectoryKind::Zigzag;
  if (s == "poly5" || s == "poly") return TrajectoryKind::Poly5;
  if (s == "chained") return TrajectoryKind::Chained;
  if (s == "star") return TrajectoryKind::Star;
  if (s == "triangle") return TrajectoryKind::Triangle;
  if (s == "custom") return TrajectoryKind::Custom;
  throw Error("unknown trajectory kind: " + s);
}

using Coeffs6 = Eigen::Matrix<double, 6, 1>;

/// One polynomial piece in local time tau = t - t0, tau in [0, T].
struct QuinticSegment {
  double t0 = 0.0;
  double T = 0.0;
  std::array<Coeffs6, 3> coeffs{Coeffs6::Zero(), Coeffs6::Zero(), Coeffs6::Zero()};

  double axis(int a, double tau, int order = 0) const {
    double out = 0.0;
    for (int k = 5; k >= order; --k) {
      double c = coeffs[a][k];
      for (int j = 0; j < order; ++j) c *= (k - j);
      out = out * tau + c;
    }
    return out;
  }

  Vec3 eval(double tau, int order = 0) const {
    return {axis(0, tau, order), axis(1, tau, order), axis(2, tau, order)};
  }
};

/// Boundary conditions at one end of a polynomial piece.
struct Boundary {
  double p = 0.0, v = 0.0, a = 0.0;
};

/// Coefficients of the quintic matching (p, v, a) at tau = 0 and tau = T.
inline Coeffs6 solve_quintic(const Boundary& b0, const Boundary& b1, double T) {
  if (!(T > 0.0)) throw Error("solve_quintic: non-positive duration");
  Eigen::Matrix<double, 6, 6> A = Eigen::Matrix<double, 6, 6>::Zero();
  Coeffs6 rhs;
  A(0, 0) = 1.0;
  A(1, 1) = 1.0;
  A(2, 2) = 2.0;
  for (int k = 0; k < 6; ++k) {
    A(3, k) = std::pow(T, k);
    if (k >= 1) A(4, k) = k * std::pow(T, k - 1);
    if (k >= 2) A(5, k) = k * (k - 1) * std::pow(T, k - 2);
  }
  rhs << b0.p, b0.v, b0.a, b1.p, b1.v, b1.a;
  return A.partialPivLu().solve(rhs);
}

class ReferenceTrajectory {
 public:
  ReferenceTrajectory() = default;

  static ReferenceTrajectory piecewise_linear(TrajectoryKind kind, std::vector<double> times,
                                              std::vector<Vec3> points,
                                              std::optional<double> duration = std::nullopt) {
    if (times.size() != points.size() || times.empty())
      throw Error("piecewise_linear: need matching, non-empty knots");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw Error("piecewise_linear: knot times must increase");
    if (times.front() != 0.0) throw Error("piecewise_linear: first knot must be at t = 0");
    ReferenceTrajectory tr;
    tr.kind_ = kind;
    tr.duration_ = duration.value_or(times.back());
    tr.times_ = std::move(times);
    tr.points_ = std::move(points);
    return tr;
  }

  static ReferenceTrajectory polynomial(TrajectoryKind kind, std::vector<QuinticSegment> segments) {
    if (segments.empty()) throw Error("polynomial: no segments");
    ReferenceTrajectory tr;
    tr.kind_ = kind;
    tr.segments_ = std::move(segments);
    tr.duration_ = tr.segments_.back().t0 + tr.segments_.back().T;
    return tr;
  }

  TrajectoryKind kind() const { return kind_; }
  double duration() const { return duration_; }
  bool is_polynomial() const { return !segments_.empty(); }
  const std::vector<double>& knot_times() const { return times_; }
  const std::vector<Vec3>& waypoints() const { return points_; }
  const std::vector<QuinticSegment>& segments() const { return segments_; }

  Vec3 eval(double t) const {
    t = std::clamp(t, 0.0, duration_);
    if (is_polynomial()) {
      const auto& s = segment_at(t);
      return s.eval(t - s.t0);
    }
    if (times_.size() == 1 || t >= times_.back()) return points_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
    const double u = (t - times_[i]) / (times_[i + 1] - times_[i]);
    return points_[i] + u * (points_[i + 1] - points_[i]);
  }

  /// Analytic derivative of a polynomial trajectory (order >= 1).
  Vec3 derivative(double t, int order) const {
    if (!is_polynomial()) throw Error("derivative: only defined for polynomial trajectories");
    t = std::clamp(t, 0.0, duration_);
    const auto& s = segment_at(t);
    return s.eval(t - s.t0, order);
  }

 private:
  const QuinticSegment& segment_at(double t) const {
    for (std::size_t i = 0; i + 1 < segments_.size(); ++i)
      if (t < segments_[i + 1].t0) return segments_[i];
    return segments_.back();
  }

  TrajectoryKind kind_ = TrajectoryKind::Custom;
  double duration_ = 0.0;
  std::vector<double> times_;
  std::vector<Vec3> points_;
  std::vector<QuinticSegment> segments_;
};

struct TrajectoryOptions {
  double duration = 10.0;
  double altitude = 0.0;
  double xy_extent = 1.0;
  double min_interval = 0.5;
  double max_interval = 1.5;
  double max_boundary_velocity = 2.0;
  double max_boundary_acceleration = 2.0;
  int min_nodes = 1;  // interior nodes for chained polynomials
  int max_nodes = 3;
  double min_node_gap = 1.5;
};

inline ReferenceTrajectory gen_zigzag(Rng& rng, const TrajectoryOptions& opt = {}) {
  std::vector<double> times{0.0};
  std::vector<Vec3> points{Vec3(0.0, 0.0, opt.altitude)};
  while (times.back() < opt.duration) {
    times.push_back(times.back() + rng.uniform(opt.min_interval, opt.max_interval));
    const double x = rng.uniform(-opt.xy_extent, opt.xy_extent);
    const double y = rng.uniform(-opt.xy_extent, opt.xy_extent);
    points.emplace_back(x, y, opt.altitude);
  }
  return ReferenceTrajectory::piecewise_linear(TrajectoryKind::Zigzag, std::move(times),
                                               std::move(points), opt.duration);
}

inline QuinticSegment quintic_segment(double t0, double T, const std::array<Boundary, 3>& start,
                                      const std::array<Boundary, 3>& end) {
  QuinticSegment s;
  s.t0 = t0;
  s.T = T;
  for (int a = 0; a < 3; ++a) s.coeffs[a] = solve_quintic(start[a], end[a], T);
  return s;
}

/// One quintic over [0, duration] from the origin back to the origin.
inline ReferenceTrajectory make_poly5(const std::array<Boundary, 2>& start_xy,
                                      const std::array<Boundary, 2>& end_xy,
                                      const TrajectoryOptions& opt = {}) {
  std::array<Boundary, 3> s{start_xy[0], start_xy[1], Boundary{opt.altitude, 0, 0}};
  std::array<Boundary, 3> e{end_xy[0], end_xy[1], Boundary{opt.altitude, 0, 0}};
  return ReferenceTrajectory::polynomial(TrajectoryKind::Poly5,
                                         {quintic_segment(0.0, opt.duration, s, e)});
}

inline Boundary random_boundary(Rng& rng, double p, const TrajectoryOptions& opt) {
  Boundary b;
  b.p = p;
  b.v = rng.uniform(-opt.max_boundary_velocity, opt.max_boundary_velocity);
  b.a = rng.uniform(-opt.max_boundary_acceleration, opt.max_boundary_acceleration);
  return b;
}

inline ReferenceTrajectory gen_poly5(Rng& rng, const TrajectoryOptions& opt = {}) {
  std::array<Boundary, 2> s{}, e{};
  for (int a = 0; a < 2; ++a) {
    s[a] = random_boundary(rng, 0.0, opt);
    e[a] = random_boundary(rng, 0.0, opt);
  }
  return make_poly5(s, e, opt);
}

/// Quintic spline through `node_points` at `node_times` (first at 0, last at
/// the trajectory end) with C4 continuity at interior nodes and (v, a)
/// boundary conditions at both ends. Solved per axis as one dense system.
inline ReferenceTrajectory make_chained(const std::vector<double>& node_times,
                                        const std::vector<Vec3>& node_points,
                                        const std::array<Boundary, 3>& start,
                                        const std::array<Boundary, 3>& end) {
  const std::size_t nodes = node_times.size();
  if (nodes < 2 || node_points.size() != nodes)
    throw Error("make_chained: need at least two matching nodes");
  const int n = static_cast<int>(nodes) - 1;
  std::vector<QuinticSegment> segs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    segs[i].t0 = node_times[i];
    segs[i].T = node_times[i + 1] - node_times[i];
    if (!(segs[i].T > 0.0)) throw Error("make_chained: node times must increase");
  }
  // d^m/dtau^m of tau^k at tau = T.
  auto basis = [](int k, int m, double T) {
    if (k < m) return 0.0;
    double c = 1.0;
    for (int j = 0; j < m; ++j) c *= (k - j);
    return c * std::pow(T, k - m);
  };
  const int N = 6 * n;
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N, N);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(N);
    int row = 0;
    for (int i = 0; i < n; ++i) {
      A(row, 6 * i) = 1.0;
      b(row++) = node_points[i][axis];
      for (int k = 0; k < 6; ++k) A(row, 6 * i + k) = basis(k, 0, segs[i].T);
      b(row++) = node_points[i + 1][axis];
    }
    A(row, 1) = 1.0;
    b(row++) = start[axis].v;
    A(row, 2) = 2.0;
    b(row++) = start[axis].a;
    for (int k = 0; k < 6; ++k) A(row, 6 * (n - 1) + k) = basis(k, 1, segs[n - 1].T);
    b(row++) = end[axis].v;
    for (int k = 0; k < 6; ++k) A(row, 6 * (n - 1) + k) = basis(k, 2, segs[n - 1].T);
    b(row++) = end[axis].a;
    for (int i = 0; i + 1 < n; ++i) {
      for (int m = 1; m <= 4; ++m) {
        for (int k = 0; k < 6; ++k) A(row, 6 * i + k) = basis(k, m, segs[i].T);
        A(row, 6 * (i + 1) + m) -= basis(m, m, 0.0);
        ++row;
      }
    }
    const Eigen::VectorXd x = A.fullPivLu().solve(b);
    for (int i = 0; i < n; ++i) segs[i].coeffs[axis] = x.segment<6>(6 * i);
  }
  return ReferenceTrajectory::polynomial(TrajectoryKind::Chained, std::move(segs));
}

inline ReferenceTrajectory gen_chained(Rng& rng, const TrajectoryOptions& opt = {}) {
  const int interior =
      opt.min_nodes + static_cast<int>(rng() % static_cast<std::uint64_t>(opt.max_nodes - opt.min_nodes + 1));
  std::vector<double> inner;
  // Rejection-sample node times with a minimum spacing (also from the ends).
  for (int attempt = 0; attempt < 1000; ++attempt) {
    inner.clear();
    for (int i = 0; i < interior; ++i) inner.push_back(rng.uniform(0.0, opt.duration));
    std::sort(inner.begin(), inner.end());
    bool ok = true;
    double prev = 0.0;
    for (double t : inner) {
      ok = ok && (t - prev >= opt.min_node_gap);
      prev = t;
    }
    ok = ok && (opt.duration - prev >= opt.min_node_gap);
    if (ok) break;
    if (attempt == 999) inner.clear();
  }
  std::vector<double> times{0.0};
  std::vector<Vec3> points{Vec3(0.0, 0.0, opt.altitude)};
  for (double t : inner) {
    times.push_back(t);
    points.emplace_back(rng.uniform(-opt.xy_extent, opt.xy_extent),
                        rng.uniform(-opt.xy_extent, opt.xy_extent), opt.altitude);
  }
  times.push_back(opt.duration);
  points.emplace_back(0.0, 0.0, opt.altitude);
  std::array<Boundary, 3> s{random_boundary(rng, 0.0, opt), random_boundary(rng, 0.0, opt),
                            Boundary{opt.altitude, 0, 0}};
  std::array<Boundary, 3> e{random_boundary(rng, 0.0, opt), random_boundary(rng, 0.0, opt),
                            Boundary{opt.altitude, 0, 0}};
  return make_chained(times, points, s, e);
}

/// Closed polygonal circuit traversed at constant speed.
inline ReferenceTrajectory make_circuit(TrajectoryKind kind, const std::vector<Vec3>& vertices,
                                        double duration) {
  std::vector<Vec3> pts = vertices;
  pts.push_back(vertices.front());
  double length = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) length += (pts[i] - pts[i - 1]).norm();
  std::vector<double> times{0.0};
  double acc = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    acc += (pts[i] - pts[i - 1]).norm();
    times.push_back(duration * acc / length);
  }
  times.back() = duration;
  return ReferenceTrajectory::piecewise_linear(kind, std::move(times), std::move(pts), duration);
}

/// Star polygon through `points` vertices on a circle of `radius` centered at
/// the origin; the first vertex is at (0, radius).
inline ReferenceTrajectory gen_star(int points, double radius, double duration = 10.0,
                                    double altitude = 0.0) {
  if (points < 3) throw Error("gen_star: need at least 3 points");
  if (!(radius > 0.0)) throw Error("gen_star: radius must be positive");
  int skip = 1;
  for (int k = (points - 1) / 2; k >= 1; --k)
    if (std::gcd(k, points) == 1) {
      skip = k;
      break;
    }
  std::vector<Vec3> verts;
  for (int i = 0; i < points; ++i) {
    const double ang = kPi / 2.0 + 2.0 * kPi * ((i * skip) % points) / points;
    verts.emplace_back(radius * std::cos(ang), radius * std::sin(ang), altitude);
  }
  return make_circuit(TrajectoryKind::Star, verts, duration);
}

inline ReferenceTrajectory gen_triangle(double side, double duration = 10.0, double altitude = 0.0) {
  if (!(side > 0.0)) throw Error("gen_triangle: side must be positive");
  const double r = side / std::sqrt(3.0);
  std::vector<Vec3> verts;
  for (int i = 0; i < 3; ++i) {
    const double ang = kPi / 2.0 + 2.0 * kPi * i / 3.0;
    verts.emplace_back(r * std::cos(ang), r * std::sin(ang), altitude);
  }
  return make_circuit(TrajectoryKind::Triangle, verts, duration);
}

inline ReferenceTrajectory gen_trajectory(TrajectoryKind kind, Rng& rng,
                                          const TrajectoryOptions& opt = {}) {
  switch (kind) {
    case TrajectoryKind::Zigzag: return gen_zigzag(rng, opt);
    case TrajectoryKind::Poly5: return gen_poly5(rng, opt);
    case TrajectoryKind::Chained: return gen_chained(rng, opt);
    case TrajectoryKind::Star: return gen_star(5, 1.0, opt.duration, opt.altitude);
    case TrajectoryKind::Triangle: return gen_triangle(1.5, opt.duration, opt.altitude);
    case TrajectoryKind::Custom: break;
  }
  throw Error("gen_trajectory: custom trajectories cannot be generated");
}

struct FeedforwardWindow {
  double horizon = 0.6;
  int count = 10;
  std::vector<Vec3> offsets;
};

/// Sample times t + i*H/(N-1), i = 0..N-1 (just t when N == 1).
inline double window_time(double t, double horizon, int count, int i) {
  return count == 1 ? t : t + horizon * i / (count - 1);
}

/// Offsets R^T (p - p_ref(t_i)); world-frame offsets when body_frame is false.
inline FeedforwardWindow feedforward_window(const ReferenceTrajectory& traj, double t,
                                            const QuadState& s, double horizon = 0.6,
                                            int count = 10, bool body_frame = true) {
  if (count < 1) throw Error("feedforward_window: count must be >= 1");
  if (!(horizon > 0.0)) throw Error("feedforward_window: horizon must be positive");
  FeedforwardWindow w;
  w.horizon = horizon;
  w.count = count;
  w.offsets.reserve(static_cast<std::size_t>(count));
  const Mat3 Rt = s.q.toRotationMatrix().transpose();
  for (int i = 0; i < count; ++i) {
    const Vec3 e = s.p - traj.eval(window_time(t, horizon, count, i));
    w.offsets.push_back(body_frame ? Vec3(Rt * e) : e);
  }
  return w;
}

// -- serialization --------------------------------------------------------

inline nlohmann::json to_json(const ReferenceTrajectory& tr) {
  nlohmann::json j;
  j["kind"] = to_string(tr.kind());
  j["duration"] = tr.duration();
  if (tr.is_polynomial()) {
    auto& segs = j["segments"] = nlohmann::json::array();
    for (const auto& s : tr.segments()) {
      nlohmann::json js;
      js["t0"] = s.t0;
      js["T"] = s.T;
      for (int a = 0; a < 3; ++a) {
        std::vector<double> c(s.coeffs[a].data(), s.coeffs[a].data() + 6);
        js["coeffs"].push_back(c);
      }
      segs.push_back(js);
    }
  } else {
    j["knot_times"] = tr.knot_times();
    auto& wps = j["waypoints"] = nlohmann::json::array();
    for (const auto& p : tr.waypoints()) wps.push_back({p.x(), p.y(), p.z()});
  }
  return j;
}

inline ReferenceTrajectory trajectory_from_json(const nlohmann::json& j) {
  try {
    const TrajectoryKind kind = trajectory_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("segments")) {
      std::vector<QuinticSegment> segs;
      for (const auto& js : j.at("segments")) {
        QuinticSegment s;
        s.t0 = js.at("t0").get<double>();
        s.T = js.at("T").get<double>();
        const auto& cs = js.at("coeffs");
        if (cs.size() != 3) throw Error("trajectory json: coeffs must have 3 axes");
        for (int a = 0; a < 3; ++a) {
          const auto c = cs.at(a).get<std::vector<double>>();
          if (c.size() != 6) throw Error("trajectory json: need 6 coefficients");
          for (int k = 0; k < 6; ++k) s.coeffs[a][k] = c[k];
        }
        segs.push_back(s);
      }
      return ReferenceTrajectory::polynomial(kind, std::move(segs));
    }
    auto times = j.at("knot_times").get<std::vector<double>>();
    std::vector<Vec3> pts;
    for (const auto& p : j.at("waypoints")) {
      const auto v = p.get<std::vector<double>>();
      if (v.size() != 3) throw Error("trajectory json: waypoint must have 3 components");
      pts.emplace_back(v[0], v[1], v[2]);
    }
    return ReferenceTrajectory::piecewise_linear(kind, std::move(times), std::move(pts),
                                                 j.at("duration").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("trajectory json: ") + e.what());
  }
}

inline void save_trajectory_json(const ReferenceTrajectory& tr, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << to_json(tr).dump(2) << "\n";
}

inline ReferenceTrajectory load_trajectory_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path);
  try {
    return trajectory_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("trajectory json: ") + e.what());
  }
}

/// Samples (t, x, y, z) every dt over [0, duration].
inline void save_trajectory_csv(const ReferenceTrajectory& tr, const std::string& path,
                                double dt = 0.02) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << "t,x,y,z\n";
  f.precision(17);
  const long n = std::lround(tr.duration() / dt);
  for (long i = 0; i <= n; ++i) {
    const double t = std::min(i * dt, tr.duration());
    const Vec3 p = tr.eval(t);
    f << t << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
  }
}

/// Loads samples as a custom piecewise-linear trajectory.
inline ReferenceTrajectory load_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line.rfind("t,x,y,z", 0) != 0) throw Error("trajectory csv: expected header t,x,y,z");
  std::vector<double> times;
  std::vector<Vec3> pts;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::array<double, 4> v{};
    char comma;
    ss >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3];
    if (!ss) throw Error("trajectory csv: malformed row: " + line);
    times.push_back(v[0]);
    pts.emplace_back(v[1], v[2], v[3]);
  }
  return ReferenceTrajectory::piecewise_linear(TrajectoryKind::Custom, std::move(times),
                                               std::move(pts));
}

}  // namespace datt
