#pragma once

// Learned disturbance regressor over a history of state-action pairs, trained
// by supervised regression on rollouts of a fixed tracking policy.

#include <deque>

#include "datt/harness.hpp"
#include "datt/ppo.hpp"

namespace datt {

struct RmaConfig {
  int history = 50;
  int conv_channels = 64;
  int conv_kernel = 8;
  int conv_layers = 3;
  int hidden = 32;
  int hidden_layers = 3;
  int iterations = 10000;
  int rollout_steps = 500;
  int batch_size = 100;
  int buffer_rollouts = 50;  // regression samples come from the most recent rollouts
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool brownian = true;  // false holds each rollout's initial d constant
  TrajectoryMix mix;
  TrajectoryOptions traj;
  SimConfig sim;

  static constexpr int kChannels = 10;  // world v (3), thrust axis (3), action (4)

  int flat_length() const { return history - conv_layers * (conv_kernel - 1); }

  void validate() const {
    if (history < 1 || conv_layers < 1 || conv_kernel < 1) throw Error("RmaConfig: invalid network shape");
    if (flat_length() < 1) throw Error("RmaConfig: history shorter than the convolution coverage");
    if (iterations < 0 || rollout_steps < 1 || batch_size < 1 || buffer_rollouts < 1)
      throw Error("RmaConfig: invalid schedule");
  }

  static RmaConfig preset(const std::string& name) {
    RmaConfig c;
    if (name == "full") return c;
    if (name == "desk") {
      c.iterations = 400;
      return c;
    }
    if (name == "smoke") {
      c.iterations = 5;
      c.rollout_steps = 100;
      return c;
    }
    throw Error("unknown rma preset: " + name);
  }

  bool operator==(const RmaConfig& o) const {
    return history == o.history && conv_channels == o.conv_channels && conv_kernel == o.conv_kernel &&
           conv_layers == o.conv_layers && hidden == o.hidden && hidden_layers == o.hidden_layers;
  }
};

/// One history row: measured world velocity, thrust axis, and the command
/// scaled to O(1) (thrust / g, rates / rate limit).
inline Eigen::Matrix<float, RmaConfig::kChannels, 1> rma_row(const Vec3& v, const Quat& q,
                                                              const ControlCommand& cmd,
                                                              const SimConfig& sim) {
  Eigen::Matrix<float, RmaConfig::kChannels, 1> r;
  r.segment<3>(0) = v.cast<float>();
  r.segment<3>(3) = thrust_axis(q).cast<float>();
  r[6] = static_cast<float>(cmd.f_des / sim.hover_thrust());
  r.segment<3>(7) = (cmd.omega_des / sim.rate_limit).cast<float>();
  return r;
}

class RmaNet {
 public:
  RmaNet() = default;
  explicit RmaNet(const RmaConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    layout_ = {cfg.history, 0, cfg.history};
    int in = RmaConfig::kChannels;
    for (int i = 0; i < cfg.conv_layers; ++i) {
      convs_.emplace_back(in, cfg.conv_channels, cfg.conv_kernel, false, "rma.conv" + std::to_string(i));
      in = cfg.conv_channels;
    }
    acts_.resize(convs_.size());
    out_layout_ = layout_;
    for (const auto& c : convs_) out_layout_ = c.output_layout(out_layout_);
    mlp_ = nn::MLP<float>(cfg.conv_channels * out_layout_.length,
                          std::vector<int>(static_cast<std::size_t>(cfg.hidden_layers), cfg.hidden), 3, "rma.fc");
  }

  void init(Rng& rng) {
    for (auto& c : convs_) c.init(std::sqrt(2.0), rng);
    mlp_.init(std::sqrt(2.0), 1.0, rng);
  }

  const RmaConfig& config() const { return cfg_; }

  /// X: kChannels x (B * history), oldest row first within each block.
  nn::Matrix<float> forward(const nn::Matrix<float>& X) {
    nn::Matrix<float> h = X;
    SeqLayout L = layout_;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = acts_[i].forward(convs_[i].forward(h, L));
      L = convs_[i].output_layout(L);
    }
    return mlp_.forward(nn::from_sequence<float>(h, out_layout_));
  }

  nn::Matrix<float> infer(const nn::Matrix<float>& X) const {
    nn::Matrix<float> h = X;
    SeqLayout L = layout_;
    for (const auto& c : convs_) {
      h = nn::ReLU<float>::infer(c.infer(h, L));
      L = c.output_layout(L);
    }
    return mlp_.infer(nn::from_sequence<float>(h, out_layout_));
  }

  void backward(const nn::Matrix<float>& d_out) {
    nn::Matrix<float> g = nn::to_sequence<float>(mlp_.backward(d_out), cfg_.conv_channels, out_layout_);
    for (std::size_t i = convs_.size(); i-- > 0;) g = convs_[i].backward(acts_[i].backward(g));
  }

  std::vector<nn::Param<float>*> params() {
    std::vector<nn::Param<float>*> out;
    for (auto& c : convs_) c.params(out);
    mlp_.params(out);
    return out;
  }

  void save(const std::string& path) const;
  static RmaNet load(const std::string& path);

 private:
  using SeqLayout = nn::SeqLayout;
  RmaConfig cfg_;
  SeqLayout layout_, out_layout_;
  std::vector<nn::Conv1d<float>> convs_;
  std::vector<nn::ReLU<float>> acts_;
  nn::MLP<float> mlp_;
};

/// Sliding window of the last `history` rows; zero-padded at episode start.
class RmaHistory {
 public:
  explicit RmaHistory(int history = 50) : buf_(nn::Matrix<float>::Zero(RmaConfig::kChannels, history)) {}
  void clear() { buf_.setZero(); }
  void push(const Eigen::Matrix<float, RmaConfig::kChannels, 1>& row) {
    const Eigen::Index n = buf_.cols();
    if (n > 1) buf_.leftCols(n - 1) = buf_.rightCols(n - 1).eval();
    buf_.col(n - 1) = row;
  }
  const nn::Matrix<float>& matrix() const { return buf_; }

 private:
  nn::Matrix<float> buf_;
};

class RmaDisturbanceEstimator final : public DisturbanceEstimator {
 public:
  RmaDisturbanceEstimator(std::shared_ptr<const RmaNet> net, SimConfig sim)
      : net_(std::move(net)), sim_(std::move(sim)), hist_(net_->config().history) {}
  void reset(const QuadState&, const Vec3&) override {
    hist_.clear();
    update_estimate();
  }
  void observe(const StepContext& ctx) override {
    hist_.push(rma_row(ctx.measured_v, ctx.after.q, ctx.cmd, sim_));
    update_estimate();
  }
  Vec3 estimate() const override { return d_hat_; }

 private:
  void update_estimate() {
    const nn::Matrix<float> y = net_->infer(hist_.matrix());
    if (!y.allFinite()) throw NumericalFault("rma: non-finite estimate");
    d_hat_ = y.col(0).cast<double>();
  }
  std::shared_ptr<const RmaNet> net_;
  SimConfig sim_;
  RmaHistory hist_;
  Vec3 d_hat_ = Vec3::Zero();
};

/// Mean ||d_hat - d|| over a batch and its gradient w.r.t. d_hat.
inline double rma_loss(const nn::Matrix<float>& pred, const nn::Matrix<float>& target, nn::Matrix<float>* grad) {
  const Eigen::Index B = pred.cols();
  double loss = 0.0;
  if (grad) grad->resize(3, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Eigen::Vector3d e = (pred.col(b) - target.col(b)).cast<double>();
    const double n = e.norm();
    loss += n / static_cast<double>(B);
    if (grad) grad->col(b) = (n > 1e-12 ? Eigen::Vector3d(e / (n * static_cast<double>(B))) : Eigen::Vector3d::Zero()).cast<float>();
  }
  return loss;
}

struct RmaResult {
  std::shared_ptr<RmaNet> net;
  std::vector<double> loss_curve;
};

/// Each iteration rolls out the policy with the current estimate in the loop
/// (Brownian disturbances), then regresses the estimate toward the true d.
inline RmaResult train_rma(const PolicyBundle& policy, const RmaConfig& cfg,
                           const std::function<void(int, double)>& on_progress = {}) {
  cfg.validate();
  auto net = std::make_shared<RmaNet>(cfg);
  Rng rng(mix_seed(cfg.seed, 0x3A));
  net->init(rng);
  nn::Adam<float> adam(net->params(), {cfg.lr, 0.9, 0.999, 1e-8, 0.0});

  TrainConfig env_cfg;
  env_cfg.sim = cfg.sim;
  env_cfg.obs = policy.obs_config();
  env_cfg.mix = cfg.mix;
  env_cfg.traj = cfg.traj;
  env_cfg.episode_steps = static_cast<int>(std::lround(10.0 / cfg.sim.dt));
  TrackingEnv env(env_cfg, mix_seed(cfg.seed, 0x3B));

  RmaResult res{net, {}};
  const int H = cfg.history;
  const int C = RmaConfig::kChannels;
  struct Rollout {
    nn::Matrix<float> rows;  // C x (H - 1 + T): zero padding, then one row per step
    std::vector<Vec3> d;
  };
  std::deque<Rollout> buffer;
  std::size_t buffered = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    env.reset(false);
    if (!cfg.brownian) env.mutable_disturbance().sigma.setZero();
    RmaHistory hist(H);
    Rollout ro;
    std::vector<Eigen::Matrix<float, RmaConfig::kChannels, 1>> rows;
    Vec3 d_hat = net->infer(hist.matrix()).col(0).cast<double>();
    for (int k = 0; k < cfg.rollout_steps; ++k) {
      const Observation o = build_observation(env.state(), env.trajectory(), env.time(), d_hat, policy.obs_config());
      const ControlCommand cmd = act(o, policy);
      const EnvStep st = env.step(cmd);
      if (st.terminated) break;
      rows.push_back(rma_row(env.state().v, env.state().q, cmd, cfg.sim));
      hist.push(rows.back());
      ro.d.push_back(env.disturbance().d);
      d_hat = net->infer(hist.matrix()).col(0).cast<double>();
      if (st.truncated) break;
    }
    if (!rows.empty()) {
      ro.rows = nn::Matrix<float>::Zero(C, H - 1 + static_cast<Eigen::Index>(rows.size()));
      for (std::size_t k = 0; k < rows.size(); ++k) ro.rows.col(H - 1 + static_cast<Eigen::Index>(k)) = rows[k];
      buffered += ro.d.size();
      buffer.push_back(std::move(ro));
      if (static_cast<int>(buffer.size()) > cfg.buffer_rollouts) {
        buffered -= buffer.front().d.size();
        buffer.pop_front();
      }
    }
    if (buffer.empty()) continue;

    // As many minibatches as one full rollout would fill, drawn from the buffer.
    const int batches = std::max(1, (cfg.rollout_steps + cfg.batch_size - 1) / cfg.batch_size);
    const int m = cfg.batch_size;
    double loss_sum = 0.0;
    for (int b = 0; b < batches; ++b) {
      nn::Matrix<float> X(C, static_cast<Eigen::Index>(m) * H), Y(3, m);
      for (int i = 0; i < m; ++i) {
        std::size_t pick = static_cast<std::size_t>(rng() % buffered);
        std::size_t r = 0;
        while (pick >= buffer[r].d.size()) pick -= buffer[r++].d.size();
        X.middleCols(static_cast<Eigen::Index>(i) * H, H) = buffer[r].rows.middleCols(static_cast<Eigen::Index>(pick), H);
        Y.col(i) = buffer[r].d[pick].cast<float>();
      }
      adam.zero_grad();
      nn::Matrix<float> grad;
      const double loss = rma_loss(net->forward(X), Y, &grad);
      if (!std::isfinite(loss)) throw NumericalFault("train_rma: non-finite loss at iteration " + std::to_string(it));
      net->backward(grad);
      adam.step();
      loss_sum += loss;
    }
    res.loss_curve.push_back(loss_sum / batches);
    if (on_progress) on_progress(it, res.loss_curve.back());
  }
  return res;
}

// -- file format (same container layout as the policy bundle) ---------------

namespace detail {
inline constexpr char kRmaMagic[8] = {'D', 'A', 'T', 'T', 'R', 'M', 'A', '\0'};
}

inline void RmaNet::save(const std::string& path) const {
  std::ostringstream os(std::ios::binary);
  detail::BinaryWriter w(os);
  os.write(detail::kRmaMagic, 8);
  w.put<std::uint32_t>(PolicyBundle::kSchemaVersion);
  for (int v : {cfg_.history, cfg_.conv_channels, cfg_.conv_kernel, cfg_.conv_layers, cfg_.hidden, cfg_.hidden_layers})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  auto* self = const_cast<RmaNet*>(this);
  const auto ps = self->params();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ps.size()));
  for (const auto* p : ps) {
    w.put_string(p->name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->value.cols()));
  }
  for (const auto* p : ps)
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p->value.size())));
  const std::string bytes = os.str();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("rma: cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline RmaNet RmaNet::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("rma: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::BinaryReader r(bytes.data(), bytes.size());
  char magic[8];
  for (char& c : magic) c = r.get<char>();
  if (std::memcmp(magic, detail::kRmaMagic, 8) != 0) throw Error("rma: bad magic in " + path);
  if (r.get<std::uint32_t>() != PolicyBundle::kSchemaVersion) throw Error("rma: unsupported schema version");
  RmaConfig cfg;
  for (int* v : {&cfg.history, &cfg.conv_channels, &cfg.conv_kernel, &cfg.conv_layers, &cfg.hidden, &cfg.hidden_layers})
    *v = static_cast<int>(r.get<std::uint32_t>());
  RmaNet net(cfg);
  auto ps = net.params();
  if (r.get<std::uint32_t>() != ps.size()) throw Error("rma: tensor count mismatch");
  for (auto* p : ps) {
    const std::string name = r.get_string();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw Error("rma: tensor " + name + " has unexpected shape");
  }
  for (auto* p : ps) r.read_floats(p->value.data(), static_cast<std::size_t>(p->value.size()));
  if (!r.at_end()) throw Error("rma: trailing bytes in " + path);
  return net;
}

}  // namespace datt
