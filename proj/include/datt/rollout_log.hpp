#pragma once

#include "datt/dynamics.hpp"

namespace datt {

struct RolloutRow {
  double t = 0.0;
  QuadState s;
  Vec3 d = Vec3::Zero();
  Vec3 d_hat = Vec3::Zero();
  Vec3 p_ref = Vec3::Zero();
};

inline constexpr const char* kRolloutHeader =
    "t,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz,f,dx,dy,dz,dhatx,dhaty,dhatz,pdx,pdy,pdz";

inline void write_rollout_csv(const std::vector<RolloutRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << kRolloutHeader << '\n';
  f.precision(17);
  for (const auto& r : rows) {
    const auto& s = r.s;
    f << r.t << ',' << s.p.x() << ',' << s.p.y() << ',' << s.p.z() << ',' << s.v.x() << ','
      << s.v.y() << ',' << s.v.z() << ',' << s.q.w() << ',' << s.q.x() << ',' << s.q.y() << ','
      << s.q.z() << ',' << s.omega.x() << ',' << s.omega.y() << ',' << s.omega.z() << ','
      << s.f_sigma << ',' << r.d.x() << ',' << r.d.y() << ',' << r.d.z() << ',' << r.d_hat.x()
      << ',' << r.d_hat.y() << ',' << r.d_hat.z() << ',' << r.p_ref.x() << ',' << r.p_ref.y()
      << ',' << r.p_ref.z() << '\n';
  }
}

inline std::vector<RolloutRow> read_rollout_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line != kRolloutHeader) throw Error("rollout csv: unexpected header in " + path);
  std::vector<RolloutRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 24) throw Error("rollout csv: expected 24 columns");
    RolloutRow r;
    r.t = v[0];
    r.s.p = Vec3(v[1], v[2], v[3]);
    r.s.v = Vec3(v[4], v[5], v[6]);
    r.s.q = Quat(v[7], v[8], v[9], v[10]);
    r.s.omega = Vec3(v[11], v[12], v[13]);
    r.s.f_sigma = v[14];
    r.d = Vec3(v[15], v[16], v[17]);
    r.d_hat = Vec3(v[18], v[19], v[20]);
    r.p_ref = Vec3(v[21], v[22], v[23]);
    rows.push_back(r);
  }
  return rows;
}

/// (1/T) sum ||p_t - p_ref_t|| over the logged rows.
inline double mean_tracking_error(const std::vector<RolloutRow>& rows) {
  if (rows.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : rows) sum += (r.s.p - r.p_ref).norm();
  return sum / static_cast<double>(rows.size());
}

}  // namespace datt
