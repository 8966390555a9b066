#pragma once

// Tracking policy: observation construction, normalization, action decoding,
// inference, and the versioned binary bundle format (see docs/bundle_format.md).

#include <cstring>
#include <optional>

#include "datt/network.hpp"
#include "datt/trajectories.hpp"

namespace datt {

struct ObsConfig {
  double horizon = 0.6;
  int count = 10;
  bool body_frame = true;
  bool feedback = true;

  int state_dim() const { return feedback ? 16 : 13; }
  int window_dim() const { return 3 * count; }
  int input_dim() const { return state_dim() + window_dim(); }
  bool operator==(const ObsConfig&) const = default;
};

/// Raw (unnormalized) policy inputs.
struct Observation {
  Vec3 position;          // R^T p (world p when body_frame is off)
  Vec3 velocity;          // R^T v
  Eigen::Vector4d quat;   // (w, x, y, z), w >= 0
  Vec3 feedback;          // R^T (p - p_ref(t))
  Vec3 disturbance;       // d (or its estimate), world frame
  FeedforwardWindow window;

  /// [p, v, q, feedback?, d, window (channel-major)].
  Eigen::VectorXd flatten(const ObsConfig& cfg) const {
    Eigen::VectorXd x(cfg.input_dim());
    int i = 0;
    x.segment<3>(i) = position;
    i += 3;
    x.segment<3>(i) = velocity;
    i += 3;
    x.segment<4>(i) = quat;
    i += 4;
    if (cfg.feedback) {
      x.segment<3>(i) = feedback;
      i += 3;
    }
    x.segment<3>(i) = disturbance;
    i += 3;
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < window.count; ++k) x(i + c * window.count + k) = window.offsets[static_cast<std::size_t>(k)][c];
    return x;
  }
};

inline Observation build_observation(const QuadState& s, const ReferenceTrajectory& traj, double t,
                                     const Vec3& d_hat, const ObsConfig& cfg) {
  Quat q = s.q;
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const Mat3 R = q.toRotationMatrix();
  const Mat3 xf = cfg.body_frame ? Mat3(R.transpose()) : Mat3::Identity();
  Observation o;
  o.position = xf * s.p;
  o.velocity = xf * s.v;
  o.quat = Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
  o.feedback = xf * (s.p - traj.eval(t));
  o.disturbance = d_hat;
  o.window = feedforward_window(traj, t, s, cfg.horizon, cfg.count, cfg.body_frame);
  return o;
}

/// Elementwise (x - mean) / sqrt(var + eps), clipped.
struct Normalizer {
  Eigen::VectorXf mean;
  Eigen::VectorXf var;
  float clip = 10.0f;

  static Normalizer identity(int dim) {
    return {Eigen::VectorXf::Zero(dim), Eigen::VectorXf::Ones(dim), 10.0f};
  }

  Eigen::VectorXf apply(const Eigen::VectorXd& x) const {
    Eigen::VectorXf y = x.cast<float>() - mean;
    y.array() /= (var.array() + 1e-8f).sqrt();
    return y.cwiseMax(-clip).cwiseMin(clip);
  }
};

/// Welford-style running moments (parallel-merge form) for normalization.
struct RunningMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 1e-4;

  explicit RunningMoments(int dim = 0)
      : mean(Eigen::VectorXd::Zero(dim)), var(Eigen::VectorXd::Ones(dim)) {}

  void update(const Eigen::VectorXd& x) {
    const double n = count + 1.0;
    const Eigen::VectorXd delta = x - mean;
    mean += delta / n;
    const Eigen::VectorXd m_a = var * count;
    var = (m_a + delta.cwiseProduct(delta) * count / n) / n;
    count = n;
  }

  Normalizer normalizer(float clip = 10.0f) const {
    return {mean.cast<float>(), var.cast<float>(), clip};
  }
};

/// tanh squash then affine: thrust in [0, ceiling], rates in +-rate_limit.
struct ActionDecoding {
  double thrust_ceiling = 2.0 * 9.81;
  double rate_limit = 10.0;

  ControlCommand decode(const Eigen::Vector4d& raw) const {
    ControlCommand c;
    c.f_des = 0.5 * (std::tanh(raw[0]) + 1.0) * thrust_ceiling;
    for (int i = 0; i < 3; ++i) c.omega_des[i] = rate_limit * std::tanh(raw[i + 1]);
    return c;
  }
};

inline NetShape net_shape_for(const ObsConfig& obs) {
  NetShape s;
  s.state_dim = obs.state_dim();
  s.window_count = obs.count;
  return s;
}

class PolicyBundle {
 public:
  static constexpr std::uint32_t kSchemaVersion = 1;

  PolicyBundle() = default;
  PolicyBundle(ObsConfig obs, ActionDecoding dec, NetShape shape)
      : obs_(obs), dec_(dec), shape_(shape), net_(shape),
        norm_(Normalizer::identity(obs.input_dim())) {
    if (shape.state_dim != obs.state_dim() || shape.window_count != obs.count)
      throw Error("PolicyBundle: network shape does not match observation config");
  }
  PolicyBundle(ObsConfig obs, ActionDecoding dec) : PolicyBundle(obs, dec, net_shape_for(obs)) {}

  const ObsConfig& obs_config() const { return obs_; }
  const ActionDecoding& decoding() const { return dec_; }
  const NetShape& shape() const { return shape_; }
  ActorCritic<float>& net() { return net_; }
  const ActorCritic<float>& net() const { return net_; }
  Normalizer& normalizer() { return norm_; }
  const Normalizer& normalizer() const { return norm_; }

  Eigen::VectorXf normalize(const Observation& o) const { return norm_.apply(o.flatten(obs_)); }

  void save(const std::string& path) const;
  static PolicyBundle load(const std::string& path);

 private:
  ObsConfig obs_;
  ActionDecoding dec_;
  NetShape shape_;
  ActorCritic<float> net_;
  Normalizer norm_;
};

/// Embedding of a feedforward window (normalized with the bundle statistics).
inline Eigen::VectorXf encode(const FeedforwardWindow& window, const PolicyBundle& bundle) {
  const ObsConfig& cfg = bundle.obs_config();
  if (window.count != cfg.count || static_cast<int>(window.offsets.size()) != cfg.count)
    throw Error("encode: window length does not match the bundle configuration");
  const int S = cfg.state_dim();
  const auto& n = bundle.normalizer();
  nn::Matrix<float> w(cfg.window_dim(), 1);
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < cfg.count; ++k) {
      const int i = c * cfg.count + k;
      const float x = (static_cast<float>(window.offsets[static_cast<std::size_t>(k)][c]) - n.mean[S + i]) /
                      std::sqrt(n.var[S + i] + 1e-8f);
      w(i, 0) = std::clamp(x, -n.clip, n.clip);
    }
  return bundle.net().embed(w).col(0);
}

/// Pre-squash action; deterministic uses the mean, otherwise samples
/// N(mean, exp(log_std)^2) from `rng`.
inline Eigen::Vector4d raw_action(const Observation& obs, const PolicyBundle& bundle,
                                  bool deterministic, Rng* rng = nullptr) {
  const Eigen::VectorXf x = bundle.normalize(obs);
  const nn::Matrix<float> mean = bundle.net().mean(x);
  if (!mean.allFinite()) throw NumericalFault("act: non-finite policy output");
  Eigen::Vector4d raw = mean.col(0).cast<double>().head<4>();
  if (!deterministic) {
    if (rng == nullptr) throw Error("act: stochastic mode requires an rng");
    const auto& ls = bundle.net().log_std().value;
    for (int i = 0; i < 4; ++i) raw[i] += std::exp(static_cast<double>(ls(i, 0))) * rng->normal();
  }
  return raw;
}

inline ControlCommand act(const Observation& obs, const PolicyBundle& bundle, bool deterministic = true,
                          Rng* rng = nullptr) {
  return bundle.decoding().decode(raw_action(obs, bundle, deterministic, rng));
}

// -- bundle file ----------------------------------------------------------

namespace detail {

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}
  template <typename U>
  void put(U v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(U));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(const char* data, std::size_t size) : data_(data), size_(size) {}
  template <typename U>
  U get() {
    U v;
    need(sizeof(U));
    std::memcpy(&v, data_ + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  void read_floats(float* out, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(out, data_ + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool at_end() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw Error("bundle: truncated file");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline constexpr char kBundleMagic[8] = {'D', 'A', 'T', 'T', 'P', 'O', 'L', '\0'};

}  // namespace detail

inline void PolicyBundle::save(const std::string& path) const {
  std::ostringstream os(std::ios::binary);
  detail::BinaryWriter w(os);
  os.write(detail::kBundleMagic, 8);
  w.put<std::uint32_t>(kSchemaVersion);
  w.put<float>(static_cast<float>(obs_.horizon));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(obs_.count));
  w.put<std::uint32_t>((obs_.body_frame ? 1u : 0u) | (obs_.feedback ? 2u : 0u));
  w.put<float>(static_cast<float>(dec_.thrust_ceiling));
  w.put<float>(static_cast<float>(dec_.rate_limit));
  w.put<float>(norm_.clip);
  for (int v : {shape_.state_dim, shape_.window_count, shape_.conv_channels, shape_.conv_kernel,
                shape_.conv_layers, shape_.embed_dim, shape_.hidden, shape_.hidden_layers,
                shape_.action_dim})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));

  struct Tensor {
    std::string name;
    const float* data;
    Eigen::Index rows, cols;
  };
  std::vector<Tensor> tensors{{"norm.mean", norm_.mean.data(), norm_.mean.size(), 1},
                              {"norm.var", norm_.var.data(), norm_.var.size(), 1}};
  for (const auto* p : net_.params())
    tensors.push_back({p->name, p->value.data(), p->value.rows(), p->value.cols()});
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.put_string(t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols));
  }
  for (const auto& t : tensors)
    os.write(reinterpret_cast<const char*>(t.data),
             static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(t.rows * t.cols)));

  const std::string bytes = os.str();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("bundle: cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("bundle: write failed for " + path);
}

inline PolicyBundle PolicyBundle::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("bundle: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::BinaryReader r(bytes.data(), bytes.size());
  char magic[8];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, detail::kBundleMagic, 8) != 0) throw Error("bundle: bad magic in " + path);
  const auto version = r.get<std::uint32_t>();
  if (version != kSchemaVersion)
    throw Error("bundle: schema version " + std::to_string(version) + " unsupported (expected " +
                std::to_string(kSchemaVersion) + ")");
  ObsConfig obs;
  obs.horizon = r.get<float>();
  obs.count = static_cast<int>(r.get<std::uint32_t>());
  const auto flags = r.get<std::uint32_t>();
  obs.body_frame = (flags & 1u) != 0;
  obs.feedback = (flags & 2u) != 0;
  ActionDecoding dec;
  dec.thrust_ceiling = r.get<float>();
  dec.rate_limit = r.get<float>();
  const float clip = r.get<float>();
  NetShape shape;
  for (int* v : {&shape.state_dim, &shape.window_count, &shape.conv_channels, &shape.conv_kernel,
                 &shape.conv_layers, &shape.embed_dim, &shape.hidden, &shape.hidden_layers,
                 &shape.action_dim})
    *v = static_cast<int>(r.get<std::uint32_t>());
  if (obs.count < 1 || shape.window_count != obs.count || shape.state_dim != obs.state_dim() ||
      shape.action_dim != 4)
    throw Error("bundle: inconsistent header in " + path);
  shape.validate();

  PolicyBundle b(obs, dec, shape);
  b.norm_.clip = clip;
  const auto n = r.get<std::uint32_t>();
  std::vector<float*> targets{b.norm_.mean.data(), b.norm_.var.data()};
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> expected{
      {"norm.mean", {b.norm_.mean.size(), 1}}, {"norm.var", {b.norm_.var.size(), 1}}};
  for (auto* p : b.net_.params()) {
    targets.push_back(p->value.data());
    expected.push_back({p->name, {p->value.rows(), p->value.cols()}});
  }
  if (n != expected.size()) throw Error("bundle: tensor count mismatch in " + path);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = r.get_string();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (name != expected[i].first || rows != expected[i].second.first || cols != expected[i].second.second)
      throw Error("bundle: tensor " + std::to_string(i) + " (" + name + ") has unexpected shape");
  }
  for (std::size_t i = 0; i < n; ++i)
    r.read_floats(targets[i], static_cast<std::size_t>(expected[i].second.first * expected[i].second.second));
  if (!r.at_end()) throw Error("bundle: trailing bytes in " + path);
  for (auto* p : b.net_.params())
    if (!p->value.allFinite()) throw Error("bundle: non-finite weights in " + p->name);
  if (!b.norm_.mean.allFinite() || !b.norm_.var.allFinite()) throw Error("bundle: non-finite normalization");
  return b;
}

}  // namespace datt
