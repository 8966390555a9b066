#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "datt/policy.hpp"

using namespace datt;

namespace {

std::string tmp_path(const std::string& name) {
  std::filesystem::create_directories(DATT_TEST_TMP);
  return std::string(DATT_TEST_TMP) + "/" + name;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Quat random_quat(Rng& rng) {
  Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q;
}

QuadState random_state(Rng& rng) {
  QuadState s;
  s.p = Vec3(rng.normal(), rng.normal(), rng.normal());
  s.v = Vec3(rng.normal(), rng.normal(), rng.normal());
  s.q = random_quat(rng);
  s.f_sigma = 9.81;
  return s;
}

PolicyBundle random_bundle(std::uint64_t seed, ObsConfig obs = {}) {
  PolicyBundle b(obs, ActionDecoding{});
  Rng rng(seed);
  b.net().init(rng, -0.7);
  auto& n = b.normalizer();
  for (int i = 0; i < n.mean.size(); ++i) {
    n.mean[i] = static_cast<float>(0.1 * rng.normal());
    n.var[i] = static_cast<float>(0.5 + rng.uniform());
  }
  return b;
}

ReferenceTrajectory rotate(const ReferenceTrajectory& tr, const Quat& q) {
  std::vector<Vec3> pts;
  for (const auto& p : tr.waypoints()) pts.push_back(q * p);
  return ReferenceTrajectory::piecewise_linear(tr.kind(), tr.knot_times(), pts, tr.duration());
}

}  // namespace

TEST(Observation, IdentityAttitudeOnTheReference) {
  SimConfig sim;
  Rng rng(1);
  const auto traj = gen_poly5(rng);
  const QuadState s = hover_state(traj.eval(2.0), sim);
  const Observation o = build_observation(s, traj, 2.0, Vec3::Zero(), {});
  EXPECT_EQ(o.feedback, Vec3::Zero());
  EXPECT_EQ(o.position, s.p);
  EXPECT_EQ(o.quat, Eigen::Vector4d(1, 0, 0, 0));
  EXPECT_EQ(o.window.offsets[0], Vec3::Zero());
}

TEST(Observation, HalfTurnYawNegatesPlanarPosition) {
  QuadState s;
  s.p = Vec3(1, 0, 0);
  s.q = Quat(Eigen::AngleAxisd(kPi, Vec3::UnitZ()));
  const auto traj = ReferenceTrajectory::piecewise_linear(TrajectoryKind::Custom, {0.0}, {Vec3::Zero()}, 10.0);
  const Observation o = build_observation(s, traj, 0.0, Vec3::Zero(), {});
  EXPECT_LT((o.position - Vec3(-1, 0, 0)).norm(), 1e-12);
}

TEST(Observation, BodyFrameMatchesHandRolledRotation) {
  Rng rng(2);
  const auto traj = gen_zigzag(rng);
  for (int i = 0; i < 100; ++i) {
    const QuadState s = random_state(rng);
    const Observation o = build_observation(s, traj, 1.0, Vec3::Zero(), {});
    const double w = s.q.w(), x = s.q.x(), y = s.q.y(), z = s.q.z();
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    Vec3 bp = Vec3::Zero(), bv = Vec3::Zero();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        bp[r] += R(c, r) * s.p[c];
        bv[r] += R(c, r) * s.v[c];
      }
    EXPECT_LT((o.position - bp).norm(), 1e-12);
    EXPECT_LT((o.velocity - bv).norm(), 1e-12);
    EXPECT_GE(o.quat[0], 0.0);
  }
}

TEST(Observation, WorldFrameOptionSkipsTheRotation) {
  Rng rng(3);
  const auto traj = gen_zigzag(rng);
  const QuadState s = random_state(rng);
  ObsConfig cfg;
  cfg.body_frame = false;
  const Observation o = build_observation(s, traj, 0.5, Vec3::Zero(), cfg);
  EXPECT_EQ(o.position, s.p);
  EXPECT_EQ(o.velocity, s.v);
  EXPECT_EQ(o.feedback, s.p - traj.eval(0.5));
}

TEST(Observation, JointYawRotationLeavesBodyBlocksInvariant) {
  Rng rng(4);
  const auto traj = gen_zigzag(rng);
  const Vec3 d(0, 0, -1.3);
  for (int i = 0; i < 20; ++i) {
    const QuadState s = random_state(rng);
    const Quat yaw(Eigen::AngleAxisd(rng.uniform(-kPi, kPi), Vec3::UnitZ()));
    QuadState r = s;
    r.p = yaw * s.p;
    r.v = yaw * s.v;
    r.q = yaw * s.q;
    const auto a = build_observation(s, traj, 3.1, d, {});
    const auto b = build_observation(r, rotate(traj, yaw), 3.1, d, {});
    EXPECT_LT((a.position - b.position).norm(), 1e-9);
    EXPECT_LT((a.velocity - b.velocity).norm(), 1e-9);
    EXPECT_LT((a.feedback - b.feedback).norm(), 1e-9);
    EXPECT_LT((a.disturbance - b.disturbance).norm(), 1e-9);
    for (int k = 0; k < 10; ++k) EXPECT_LT((a.window.offsets[k] - b.window.offsets[k]).norm(), 1e-9);
    const auto bundle = random_bundle(9);
    const auto ha = encode(a.window, bundle), hb = encode(b.window, bundle);
    EXPECT_LT((ha - hb).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(Observation, FlattenOrderAndWidth) {
  Observation o;
  o.position = Vec3(1, 2, 3);
  o.velocity = Vec3(4, 5, 6);
  o.quat = Eigen::Vector4d(7, 8, 9, 10);
  o.feedback = Vec3(11, 12, 13);
  o.disturbance = Vec3(14, 15, 16);
  o.window.count = 2;
  o.window.offsets = {Vec3(17, 19, 21), Vec3(18, 20, 22)};
  ObsConfig cfg;
  cfg.count = 2;
  const auto x = o.flatten(cfg);
  ASSERT_EQ(x.size(), 22);
  for (int i = 0; i < 22; ++i) EXPECT_EQ(x[i], i + 1);
  cfg.feedback = false;
  const auto y = o.flatten(cfg);
  ASSERT_EQ(y.size(), 19);
  EXPECT_EQ(y[10], 14);
}

TEST(Action, ZeroNetworkDecodesToMidRange) {
  PolicyBundle b(ObsConfig{}, ActionDecoding{});
  Rng rng(5);
  const auto traj = gen_zigzag(rng);
  const auto o = build_observation(random_state(rng), traj, 0.0, Vec3::Zero(), b.obs_config());
  const ControlCommand c = act(o, b);
  EXPECT_NEAR(c.f_des, 9.81, 1e-12);
  EXPECT_EQ(c.omega_des, Vec3::Zero());
}

TEST(Action, DecodingRespectsBounds) {
  ActionDecoding dec;
  const auto hi = dec.decode(Eigen::Vector4d::Constant(50.0));
  const auto lo = dec.decode(Eigen::Vector4d::Constant(-50.0));
  EXPECT_NEAR(hi.f_des, 2 * 9.81, 1e-12);
  EXPECT_NEAR(lo.f_des, 0.0, 1e-12);
  EXPECT_NEAR(hi.omega_des.x(), 10.0, 1e-12);
  EXPECT_NEAR(lo.omega_des.z(), -10.0, 1e-12);
}

TEST(Action, DeterministicInferenceIsRepeatable) {
  const auto b = random_bundle(6);
  Rng rng(6);
  const auto traj = gen_zigzag(rng);
  const auto o = build_observation(random_state(rng), traj, 0.0, Vec3(0.1, 0.2, 0.3), b.obs_config());
  const auto a = raw_action(o, b, true);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(raw_action(o, b, true), a);
  Rng r1(3), r2(3);
  EXPECT_EQ(raw_action(o, b, false, &r1), raw_action(o, b, false, &r2));
  EXPECT_THROW(raw_action(o, b, false, nullptr), Error);
}

TEST(Action, InferenceFitsTheControlPeriod) {
  const auto b = random_bundle(7);
  Rng rng(7);
  const auto traj = gen_zigzag(rng);
  const auto s = random_state(rng);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 100; ++i) act(build_observation(s, traj, 0.02 * i, Vec3::Zero(), b.obs_config()), b);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / 100;
  EXPECT_LT(ms, 20.0);
}

TEST(Encode, RejectsMismatchedWindowLength) {
  const auto b = random_bundle(8);
  FeedforwardWindow w;
  w.count = 5;
  w.offsets.assign(5, Vec3::Zero());
  EXPECT_THROW(encode(w, b), Error);
}

TEST(Normalizer, AppliesMomentsAndClip) {
  RunningMoments m(2);
  Rng rng(10);
  for (int i = 0; i < 20000; ++i) m.update(Eigen::Vector2d(3.0 + 2.0 * rng.normal(), -1.0 + 0.5 * rng.normal()));
  EXPECT_NEAR(m.mean[0], 3.0, 0.05);
  EXPECT_NEAR(m.var[1], 0.25, 0.01);
  const Normalizer n = m.normalizer(5.0f);
  const auto y = n.apply(Eigen::Vector2d(3.0 + 100.0, -1.0));
  EXPECT_EQ(y[0], 5.0f);
  EXPECT_NEAR(y[1], 0.0f, 0.05f);
}

TEST(Bundle, SaveLoadSaveIsByteIdentical) {
  ObsConfig cfg;
  cfg.horizon = 0.3;
  cfg.count = 5;
  cfg.feedback = false;
  const auto b = random_bundle(11, cfg);
  const auto p1 = tmp_path("bundle_a.bin"), p2 = tmp_path("bundle_b.bin");
  b.save(p1);
  const auto loaded = PolicyBundle::load(p1);
  loaded.save(p2);
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  EXPECT_EQ(loaded.obs_config().count, 5);
  EXPECT_FALSE(loaded.obs_config().feedback);
  EXPECT_FLOAT_EQ(static_cast<float>(loaded.obs_config().horizon), 0.3f);
  EXPECT_EQ(loaded.shape(), b.shape());
}

TEST(Bundle, RoundTripInferenceIsBitExact) {
  const auto b = random_bundle(12);
  const auto path = tmp_path("bundle_rt.bin");
  b.save(path);
  const auto c = PolicyBundle::load(path);
  Rng rng(12);
  const auto traj = gen_poly5(rng);
  for (int i = 0; i < 100; ++i) {
    const auto o = build_observation(random_state(rng), traj, 0.05 * i, Vec3(rng.normal(), 0, 0), b.obs_config());
    const auto x = raw_action(o, b, true), y = raw_action(o, c, true);
    for (int k = 0; k < 4; ++k) EXPECT_EQ(std::bit_cast<std::uint64_t>(x[k]), std::bit_cast<std::uint64_t>(y[k]));
  }
}

TEST(Bundle, TruncatedFileIsRejected) {
  const auto b = random_bundle(13);
  const auto path = tmp_path("bundle_full.bin");
  b.save(path);
  const auto bytes = read_bytes(path);
  for (std::size_t len : {std::size_t{0}, std::size_t{7}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    const auto cut = tmp_path("bundle_cut.bin");
    std::ofstream(cut, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(len));
    EXPECT_THROW(PolicyBundle::load(cut), Error) << len;
  }
}

TEST(Bundle, VersionMagicAndPayloadCorruptionAreRejected) {
  const auto b = random_bundle(14);
  const auto path = tmp_path("bundle_v.bin");
  b.save(path);
  const auto bytes = read_bytes(path);
  auto write = [&](std::string data) {
    const auto p = tmp_path("bundle_bad.bin");
    std::ofstream(p, std::ios::binary).write(data.data(), static_cast<std::streamsize>(data.size()));
    return p;
  };
  std::string v = bytes;
  v[8] = 2;
  EXPECT_THROW(PolicyBundle::load(write(v)), Error);
  std::string m = bytes;
  m[0] = 'X';
  EXPECT_THROW(PolicyBundle::load(write(m)), Error);
  EXPECT_THROW(PolicyBundle::load(write(bytes + "x")), Error);
  std::string nan = bytes;
  const float bad = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + nan.size() - 4, &bad, 4);
  EXPECT_THROW(PolicyBundle::load(write(nan)), Error);
  EXPECT_THROW(PolicyBundle::load(tmp_path("does_not_exist.bin")), Error);
}

TEST(Bundle, ShapeMismatchIsRejectedAtConstruction) {
  ObsConfig cfg;
  NetShape shape;
  shape.window_count = 7;
  EXPECT_THROW((PolicyBundle(cfg, ActionDecoding{}, shape)), Error);
}
