#pragma once

// PPO (clipped surrogate, GAE) for the tracking policy, with the training
// environment: reward, fixed-reference curriculum, randomized trajectories and
// disturbances, running observation/return normalization.

#include <fstream>
#include <functional>
#include <numeric>

#include "datt/policy.hpp"

namespace datt {

/// -(||p - p_ref|| + 0.5 |yaw| + 0.1 ||v||), yaw wrapped to (-pi, pi].
inline double tracking_reward(const QuadState& s, const ReferenceTrajectory& traj, double t) {
  return -((s.p - traj.eval(t)).norm() + 0.5 * std::abs(yaw_of(s.q)) + 0.1 * s.v.norm());
}

struct TrajectoryMix {
  double zigzag = 0.5;
  double poly5 = 0.25;
  double chained = 0.25;

  TrajectoryKind sample(Rng& rng) const {
    const double total = zigzag + poly5 + chained;
    if (!(total > 0.0)) throw Error("TrajectoryMix: weights must sum to a positive value");
    const double u = rng.uniform() * total;
    if (u < zigzag) return TrajectoryKind::Zigzag;
    if (u < zigzag + poly5) return TrajectoryKind::Poly5;
    return TrajectoryKind::Chained;
  }
};

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double lr = 3e-4;
  int n_steps = 2048;  // per environment
  int batch_size = 64;
  int epochs = 10;
  double vf_coef = 0.5;
  double ent_coef = 0.0;
  double max_grad_norm = 0.5;
  double adam_eps = 1e-5;
  bool normalize_advantage = true;
  double log_std_init = 0.0;
  bool value_trains_encoder = true;
  double target_kl = 0.0;  // > 0: stop the epoch loop once a minibatch exceeds 1.5 * target_kl
};

struct TrainConfig {
  long long total_steps = 20'000'000;
  int episode_steps = 500;
  long long curriculum_steps = 2'500'000;
  bool curriculum = true;
  int n_envs = 1;
  std::uint64_t seed = 0;
  std::uint64_t fixed_reference_seed = 7;
  TrajectoryKind fixed_reference_kind = TrajectoryKind::Poly5;
  TrajectoryMix mix;
  TrajectoryOptions traj;
  bool disturbances = true;
  // A crash pays -crash_penalty for every remaining step, discounted, so
  // ending an episode early never beats tracking badly.
  double crash_penalty = 5.0;
  bool normalize_obs = true;
  bool normalize_reward = true;
  double clip_obs = 10.0;
  double clip_reward = 10.0;
  long long checkpoint_every = 0;  // 0 disables
  SimConfig sim;
  ObsConfig obs;
  NetShape shape_overrides{};  // only conv/hidden sizes are read
  PpoConfig ppo;

  static TrainConfig preset(const std::string& name) {
    TrainConfig c;
    if (name == "full") return c;
    // Desk-scale runs cap the per-update policy change; see README.
    if (name == "desk") {
      c.total_steps = 3'000'000;
      c.curriculum_steps = 375'000;
      c.ppo.target_kl = 0.02;
      return c;
    }
    if (name == "smoke") {
      c.total_steps = 50'000;
      c.curriculum_steps = 50'000;
      c.ppo.target_kl = 0.02;
      return c;
    }
    throw Error("unknown training preset: " + name);
  }

  void validate() const {
    sim.validate();
    if (total_steps < 1) throw Error("TrainConfig: total_steps must be >= 1");
    if (std::abs(episode_steps * sim.dt - 10.0) > 1e-9)
      throw Error("TrainConfig: episode_steps * dt must equal 10 s");
    if (curriculum && (curriculum_steps < 0 || curriculum_steps > total_steps))
      throw Error("TrainConfig: curriculum_steps must lie in [0, total_steps]");
    if (n_envs < 1) throw Error("TrainConfig: n_envs must be >= 1");
    if (ppo.n_steps < 1 || ppo.batch_size < 1 || ppo.epochs < 1)
      throw Error("TrainConfig: PPO buffer sizes must be positive");
    if (!(ppo.clip > 0.0) || !(ppo.lr > 0.0)) throw Error("TrainConfig: clip and lr must be positive");
    if (ppo.gamma < 0.0 || ppo.gamma > 1.0 || ppo.gae_lambda < 0.0 || ppo.gae_lambda > 1.0)
      throw Error("TrainConfig: gamma and gae_lambda must lie in [0, 1]");
    if (obs.count < 1 || !(obs.horizon >= 0.0)) throw Error("TrainConfig: invalid feedforward window");
  }

  NetShape shape() const {
    NetShape s = shape_overrides;
    s.state_dim = obs.state_dim();
    s.window_count = obs.count;
    s.action_dim = 4;
    return s;
  }

  static TrainConfig from_config(const KeyValueConfig& kv) {
    TrainConfig c = preset(kv.get_string("train.preset", "desk"));
    c.total_steps = kv.get_int("train.total_steps", c.total_steps);
    c.curriculum_steps = kv.get_int("train.curriculum_steps", c.curriculum_steps);
    c.curriculum = kv.get_bool("train.curriculum", c.curriculum);
    c.n_envs = static_cast<int>(kv.get_int("train.n_envs", c.n_envs));
    c.seed = static_cast<std::uint64_t>(kv.get_int("train.seed", static_cast<long long>(c.seed)));
    c.fixed_reference_seed = static_cast<std::uint64_t>(
        kv.get_int("train.fixed_reference_seed", static_cast<long long>(c.fixed_reference_seed)));
    c.fixed_reference_kind =
        trajectory_kind_from_string(kv.get_string("train.fixed_reference_kind", to_string(c.fixed_reference_kind)));
    c.mix.zigzag = kv.get_double("train.mix_zigzag", c.mix.zigzag);
    c.mix.poly5 = kv.get_double("train.mix_poly5", c.mix.poly5);
    c.mix.chained = kv.get_double("train.mix_chained", c.mix.chained);
    c.disturbances = kv.get_bool("train.disturbances", c.disturbances);
    c.crash_penalty = kv.get_double("train.crash_penalty", c.crash_penalty);
    c.normalize_obs = kv.get_bool("train.normalize_obs", c.normalize_obs);
    c.normalize_reward = kv.get_bool("train.normalize_reward", c.normalize_reward);
    c.checkpoint_every = kv.get_int("train.checkpoint_every", c.checkpoint_every);
    c.sim = SimConfig::from_config(kv, "sim.");
    c.episode_steps = static_cast<int>(kv.get_int("train.episode_steps", std::lround(10.0 / c.sim.dt)));
    c.obs.horizon = kv.get_double("policy.horizon", c.obs.horizon);
    c.obs.count = static_cast<int>(kv.get_int("policy.count", c.obs.count));
    c.obs.body_frame = kv.get_bool("policy.body_frame", c.obs.body_frame);
    c.obs.feedback = kv.get_bool("policy.feedback", c.obs.feedback);
    auto& p = c.ppo;
    p.clip = kv.get_double("ppo.clip", p.clip);
    p.gamma = kv.get_double("ppo.gamma", p.gamma);
    p.gae_lambda = kv.get_double("ppo.gae_lambda", p.gae_lambda);
    p.lr = kv.get_double("ppo.lr", p.lr);
    p.n_steps = static_cast<int>(kv.get_int("ppo.n_steps", p.n_steps));
    p.batch_size = static_cast<int>(kv.get_int("ppo.batch_size", p.batch_size));
    p.epochs = static_cast<int>(kv.get_int("ppo.epochs", p.epochs));
    p.vf_coef = kv.get_double("ppo.vf_coef", p.vf_coef);
    p.ent_coef = kv.get_double("ppo.ent_coef", p.ent_coef);
    p.max_grad_norm = kv.get_double("ppo.max_grad_norm", p.max_grad_norm);
    p.log_std_init = kv.get_double("ppo.log_std_init", p.log_std_init);
    p.value_trains_encoder = kv.get_bool("ppo.value_trains_encoder", p.value_trains_encoder);
    p.target_kl = kv.get_double("ppo.target_kl", p.target_kl);
    c.validate();
    return c;
  }
};

// -- environment ------------------------------------------------------------

struct EnvStep {
  double reward = 0.0;
  bool terminated = false;  // crash
  bool truncated = false;   // time limit
  double error = 0.0;       // ||p - p_ref|| after the step
};

/// One quadrotor tracking episode at a time; the policy sees the true d.
class TrackingEnv {
 public:
  TrackingEnv(const TrainConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed), fixed_ref_(make_fixed_reference(cfg)) {}

  void reset(bool fixed_reference) {
    traj_ = fixed_reference ? fixed_ref_ : gen_trajectory(cfg_.mix.sample(rng_), rng_, cfg_.traj);
    s_ = hover_state(traj_.eval(0.0), cfg_.sim);
    if (cfg_.disturbances) {
      dist_ = sample_initial_disturbance(rng_, cfg_.sim);
    } else {
      dist_ = DisturbanceState{};
      dist_.sigma = Vec3::Zero();
    }
    k_ = 0;
    ep_return_ = 0.0;
    ep_error_ = 0.0;
  }

  Observation observe() const { return build_observation(s_, traj_, time(), dist_.d, cfg_.obs); }

  EnvStep step(const ControlCommand& cmd) {
    EnvStep out;
    try {
      s_ = datt::step(s_, cmd, dist_.d, cfg_.sim);
    } catch (const Error&) {
      out.terminated = true;
    }
    ++k_;
    if (!out.terminated) {
      if (cfg_.disturbances) dist_ = evolve_disturbance(dist_, cfg_.sim.dt, rng_, cfg_.sim.disturbance_cap);
      out.error = (s_.p - traj_.eval(time())).norm();
      out.reward = tracking_reward(s_, traj_, time());
      out.terminated = crashed(s_, traj_.eval(time()), cfg_.sim);
    } else {
      out.error = cfg_.sim.crash_position_error;
      out.reward = -cfg_.sim.crash_position_error;
    }
    ep_return_ += out.reward;
    if (out.terminated) {
      // The learner gets the discounted lump; the reported return charges every remaining step in full.
      out.reward -= crash_penalty_total(cfg_.episode_steps - k_);
      ep_return_ -= cfg_.crash_penalty * std::max(0, cfg_.episode_steps - k_);
    }
    out.truncated = !out.terminated && k_ >= cfg_.episode_steps;
    ep_error_ += out.error;
    return out;
  }

  /// crash_penalty * sum_{j=1..remaining} gamma^j.
  double crash_penalty_total(int remaining) const {
    const double g = cfg_.ppo.gamma;
    if (remaining <= 0) return 0.0;
    if (g >= 1.0) return cfg_.crash_penalty * remaining;
    return cfg_.crash_penalty * g * (1.0 - std::pow(g, remaining)) / (1.0 - g);
  }

  double time() const { return k_ * cfg_.sim.dt; }
  int steps() const { return k_; }
  double episode_return() const { return ep_return_; }
  double episode_mean_error() const { return k_ > 0 ? ep_error_ / k_ : 0.0; }
  const QuadState& state() const { return s_; }
  const ReferenceTrajectory& trajectory() const { return traj_; }
  const DisturbanceState& disturbance() const { return dist_; }
  QuadState& mutable_state() { return s_; }
  DisturbanceState& mutable_disturbance() { return dist_; }
  Rng& rng() { return rng_; }

  static ReferenceTrajectory make_fixed_reference(const TrainConfig& cfg) {
    Rng r(cfg.fixed_reference_seed);
    return gen_trajectory(cfg.fixed_reference_kind, r, cfg.traj);
  }

 private:
  TrainConfig cfg_;
  Rng rng_;
  ReferenceTrajectory fixed_ref_;
  ReferenceTrajectory traj_;
  QuadState s_;
  DisturbanceState dist_;
  int k_ = 0;
  double ep_return_ = 0.0;
  double ep_error_ = 0.0;
};

// -- advantage estimation ---------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// done[k] means the episode ended after step k (no bootstrap from values[k+1]).
/// Time-limit bootstrapping is folded into rewards by the caller.
inline GaeResult compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                             const std::vector<std::uint8_t>& done, double last_value, double gamma,
                             double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || done.size() != n) throw Error("compute_gae: length mismatch");
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double gae = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_v = (k + 1 == n) ? last_value : values[k + 1];
    const double nonterminal = done[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_v * nonterminal - values[k];
    gae = delta + gamma * lambda * nonterminal * gae;
    out.advantages[k] = gae;
    out.returns[k] = gae + values[k];
  }
  return out;
}

// -- loss -----------------------------------------------------------------------

template <typename T>
struct PpoBatch {
  nn::Matrix<T> obs;      // input_dim x B (normalized)
  nn::Matrix<T> actions;  // 4 x B raw (pre-squash)
  Eigen::VectorXd old_log_prob;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

struct PpoLossInfo {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// Diagonal-Gaussian log density of each column of `a`.
template <typename T>
Eigen::VectorXd gaussian_log_prob(const nn::Matrix<T>& mean, const nn::Matrix<T>& log_std,
                                  const nn::Matrix<T>& a) {
  Eigen::VectorXd lp = Eigen::VectorXd::Zero(a.cols());
  for (Eigen::Index b = 0; b < a.cols(); ++b)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double ls = static_cast<double>(log_std(i, 0));
      const double z = (static_cast<double>(a(i, b)) - static_cast<double>(mean(i, b))) / std::exp(ls);
      lp[b] += -0.5 * z * z - ls - kHalfLog2Pi;
    }
  return lp;
}

/// Clipped surrogate + value + entropy loss on one batch. With `backward`,
/// accumulates gradients into the network parameters.
template <typename T>
PpoLossInfo ppo_loss(ActorCritic<T>& net, const PpoBatch<T>& batch, const PpoConfig& cfg, bool backward) {
  const Eigen::Index B = batch.obs.cols();
  const int A = static_cast<int>(batch.actions.rows());
  const auto out = net.forward(batch.obs);
  const nn::Matrix<T>& log_std = net.log_std().value;
  const Eigen::VectorXd lp = gaussian_log_prob<T>(out.mean, log_std, batch.actions);

  Eigen::VectorXd adv = batch.advantages;
  if (cfg.normalize_advantage && B > 1) {
    const double m = adv.mean();
    const double sd = std::sqrt((adv.array() - m).square().sum() / static_cast<double>(B - 1));
    adv = (adv.array() - m) / (sd + 1e-8);
  }

  PpoLossInfo info;
  nn::Matrix<T> d_mean(A, B), d_value(1, B);
  Eigen::VectorXd d_logstd = Eigen::VectorXd::Zero(A);
  const double invB = 1.0 / static_cast<double>(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double log_ratio = lp[b] - batch.old_log_prob[b];
    const double ratio = std::exp(log_ratio);
    const double s1 = ratio * adv[b];
    const double s2 = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv[b];
    info.policy_loss -= std::min(s1, s2) * invB;
    if (std::abs(ratio - 1.0) > cfg.clip) info.clip_fraction += invB;
    info.approx_kl += ((ratio - 1.0) - log_ratio) * invB;
    // d(loss)/d(log_prob): only the unclipped branch carries gradient.
    const double g_lp = (s1 <= s2) ? -adv[b] * ratio * invB : 0.0;

    const double v = static_cast<double>(out.value(0, b));
    const double err = v - batch.returns[b];
    info.value_loss += err * err * invB;
    d_value(0, b) = static_cast<T>(cfg.vf_coef * 2.0 * err * invB);

    for (int i = 0; i < A; ++i) {
      const double sigma = std::exp(static_cast<double>(log_std(i, 0)));
      const double z = (static_cast<double>(batch.actions(i, b)) - static_cast<double>(out.mean(i, b))) / sigma;
      d_mean(i, b) = static_cast<T>(g_lp * z / sigma);
      d_logstd[i] += g_lp * (z * z - 1.0);
    }
  }
  for (int i = 0; i < A; ++i) info.entropy += static_cast<double>(log_std(i, 0)) + 0.5 + kHalfLog2Pi;
  info.loss = info.policy_loss + cfg.vf_coef * info.value_loss - cfg.ent_coef * info.entropy;

  if (backward) {
    net.backward(d_mean, d_value, cfg.value_trains_encoder);
    auto& g = net.log_std().grad;
    for (int i = 0; i < A; ++i) g(i, 0) += static_cast<T>(d_logstd[i] - cfg.ent_coef);
  }
  return info;
}

// -- normalization --------------------------------------------------------------

/// Scales rewards by the running std of the discounted return.
class ReturnScaler {
 public:
  ReturnScaler(double gamma, double clip) : gamma_(gamma), clip_(clip), moments_(1) {}
  double scale(double r, bool episode_end) {
    ret_ = ret_ * gamma_ + r;
    moments_.update(Eigen::VectorXd::Constant(1, ret_));
    if (episode_end) ret_ = 0.0;
    return std::clamp(r / std::sqrt(moments_.var[0] + 1e-8), -clip_, clip_);
  }
  double factor() const { return 1.0 / std::sqrt(moments_.var[0] + 1e-8); }

 private:
  double gamma_, clip_;
  RunningMoments moments_;
  double ret_ = 0.0;
};

// -- training loop --------------------------------------------------------------

struct CurvePoint {
  long long step = 0;
  double mean_return = 0.0;
  double mean_tracking_error = 0.0;
  int episodes = 0;
  // Update diagnostics, averaged over the minibatches of the last epoch run.
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double mean_log_std = 0.0;
};

struct TrainResult {
  PolicyBundle bundle;
  std::vector<CurvePoint> curve;
};

inline void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write learning curve " + path);
  f << "step,mean_return,mean_tracking_error\n";
  f.precision(10);
  for (const auto& c : curve) f << c.step << ',' << c.mean_return << ',' << c.mean_tracking_error << '\n';
}

struct TrainHooks {
  std::string checkpoint_prefix;  // empty disables checkpoints
  std::function<void(const CurvePoint&)> on_progress;
};

inline TrainResult train_ppo(const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const NetShape shape = cfg.shape();
  ActionDecoding dec{cfg.sim.thrust_ceiling, cfg.sim.rate_limit};
  PolicyBundle bundle(cfg.obs, dec, shape);
  Rng init_rng(mix_seed(cfg.seed, 0x1217));
  bundle.net().init(init_rng, cfg.ppo.log_std_init);
  auto& net = bundle.net();
  nn::Adam<float> adam(net.params(), {cfg.ppo.lr, 0.9, 0.999, cfg.ppo.adam_eps, cfg.ppo.max_grad_norm});

  const int D = cfg.obs.input_dim();
  const int E = cfg.n_envs;
  const int N = cfg.ppo.n_steps;
  std::vector<TrackingEnv> envs;
  for (int e = 0; e < E; ++e) envs.emplace_back(cfg, mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(e)));
  Rng act_rng(mix_seed(cfg.seed, 0xAC7));
  RunningMoments obs_stats(D);
  ReturnScaler ret_scaler(cfg.ppo.gamma, cfg.clip_reward);
  auto sync_normalizer = [&] {
    bundle.normalizer() = cfg.normalize_obs ? obs_stats.normalizer(static_cast<float>(cfg.clip_obs))
                                            : Normalizer::identity(D);
  };
  sync_normalizer();

  long long step = 0;
  auto fixed_phase = [&] { return cfg.curriculum && step < cfg.curriculum_steps; };
  std::vector<Eigen::VectorXd> raw_obs(static_cast<std::size_t>(E));
  for (int e = 0; e < E; ++e) {
    envs[static_cast<std::size_t>(e)].reset(fixed_phase());
    raw_obs[static_cast<std::size_t>(e)] = envs[static_cast<std::size_t>(e)].observe().flatten(cfg.obs);
    if (cfg.normalize_obs) obs_stats.update(raw_obs[static_cast<std::size_t>(e)]);
  }

  const std::size_t total = static_cast<std::size_t>(N) * static_cast<std::size_t>(E);
  nn::Matrix<float> buf_obs(D, static_cast<Eigen::Index>(total));
  nn::Matrix<float> buf_act(4, static_cast<Eigen::Index>(total));
  std::vector<double> buf_lp(total), buf_val(total), buf_rew(total);
  std::vector<std::uint8_t> buf_done(total);
  auto idx = [N](int e, int k) { return static_cast<std::size_t>(e) * static_cast<std::size_t>(N) + static_cast<std::size_t>(k); };

  TrainResult result{bundle, {}};
  long long next_checkpoint = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : -1;
  std::vector<std::size_t> order(total);

  while (step < cfg.total_steps) {
    sync_normalizer();
    double ret_sum = 0.0, err_sum = 0.0;
    int episodes = 0;
    for (int k = 0; k < N; ++k) {
      for (int e = 0; e < E; ++e) {
        auto& env = envs[static_cast<std::size_t>(e)];
        const std::size_t j = idx(e, k);
        const Eigen::VectorXf x = bundle.normalizer().apply(raw_obs[static_cast<std::size_t>(e)]);
        const auto o = net.infer(x);
        Eigen::Vector4d raw;
        for (int i = 0; i < 4; ++i)
          raw[i] = static_cast<double>(o.mean(i, 0)) +
                   std::exp(static_cast<double>(net.log_std().value(i, 0))) * act_rng.normal();
        buf_obs.col(static_cast<Eigen::Index>(j)) = x;
        buf_act.col(static_cast<Eigen::Index>(j)) = raw.cast<float>();
        nn::Matrix<float> a1 = raw.cast<float>();
        buf_lp[j] = gaussian_log_prob<float>(o.mean, net.log_std().value, a1)[0];
        buf_val[j] = static_cast<double>(o.value(0, 0));

        const EnvStep st = env.step(dec.decode(raw));
        ++step;
        const bool end = st.terminated || st.truncated;
        double r = cfg.normalize_reward ? ret_scaler.scale(st.reward, end) : st.reward;
        if (end) {
          ret_sum += env.episode_return();
          err_sum += env.episode_mean_error();
          ++episodes;
        }
        if (st.truncated) {
          // Bootstrap through the time limit from the final observation.
          const Eigen::VectorXd fin = env.observe().flatten(cfg.obs);
          const Eigen::VectorXf xf = bundle.normalizer().apply(fin);
          r += cfg.ppo.gamma * static_cast<double>(net.value(xf)(0, 0));
        }
        buf_rew[j] = r;
        buf_done[j] = end ? 1 : 0;
        if (end) env.reset(fixed_phase());
        raw_obs[static_cast<std::size_t>(e)] = env.observe().flatten(cfg.obs);
        if (cfg.normalize_obs) obs_stats.update(raw_obs[static_cast<std::size_t>(e)]);
      }
    }

    // Advantages per environment stream.
    std::vector<double> adv(total), rets(total);
    for (int e = 0; e < E; ++e) {
      const Eigen::VectorXf xl = bundle.normalizer().apply(raw_obs[static_cast<std::size_t>(e)]);
      const double last_v = static_cast<double>(net.value(xl)(0, 0));
      const auto b = idx(e, 0);
      std::vector<double> r(buf_rew.begin() + static_cast<std::ptrdiff_t>(b), buf_rew.begin() + static_cast<std::ptrdiff_t>(b + N));
      std::vector<double> v(buf_val.begin() + static_cast<std::ptrdiff_t>(b), buf_val.begin() + static_cast<std::ptrdiff_t>(b + N));
      std::vector<std::uint8_t> d(buf_done.begin() + static_cast<std::ptrdiff_t>(b), buf_done.begin() + static_cast<std::ptrdiff_t>(b + N));
      const auto g = compute_gae(r, v, d, last_v, cfg.ppo.gamma, cfg.ppo.gae_lambda);
      std::copy(g.advantages.begin(), g.advantages.end(), adv.begin() + static_cast<std::ptrdiff_t>(b));
      std::copy(g.returns.begin(), g.returns.end(), rets.begin() + static_cast<std::ptrdiff_t>(b));
    }

    // Note: the normalizer used for the buffer stays fixed during the update.
    std::iota(order.begin(), order.end(), std::size_t{0});
    const int bs = cfg.ppo.batch_size;
    PpoBatch<float> mb;
    double diag_kl = 0.0, diag_clip = 0.0, diag_vl = 0.0;
    int diag_n = 0;
    bool keep_training = true;
    for (int epoch = 0; epoch < cfg.ppo.epochs && keep_training; ++epoch) {
      for (std::size_t i = total; i > 1; --i) std::swap(order[i - 1], order[act_rng() % i]);
      diag_kl = diag_clip = diag_vl = 0.0;
      diag_n = 0;
      for (std::size_t start = 0; start < total; start += static_cast<std::size_t>(bs)) {
        const auto m = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(bs), total - start));
        mb.obs.resize(D, m);
        mb.actions.resize(4, m);
        mb.old_log_prob.resize(m);
        mb.advantages.resize(m);
        mb.returns.resize(m);
        for (Eigen::Index c = 0; c < m; ++c) {
          const std::size_t j = order[start + static_cast<std::size_t>(c)];
          mb.obs.col(c) = buf_obs.col(static_cast<Eigen::Index>(j));
          mb.actions.col(c) = buf_act.col(static_cast<Eigen::Index>(j));
          mb.old_log_prob[c] = buf_lp[j];
          mb.advantages[c] = adv[j];
          mb.returns[c] = rets[j];
        }
        adam.zero_grad();
        const PpoLossInfo info = ppo_loss<float>(net, mb, cfg.ppo, true);
        if (!std::isfinite(info.loss) || !std::isfinite(adam.grad_norm())) {
          if (!hooks.checkpoint_prefix.empty()) bundle.save(hooks.checkpoint_prefix + ".fault.bin");
          throw NumericalFault("train_ppo: non-finite loss at step " + std::to_string(step) +
                               " (policy " + std::to_string(info.policy_loss) + ", value " +
                               std::to_string(info.value_loss) + ")");
        }
        diag_kl += info.approx_kl;
        diag_clip += info.clip_fraction;
        diag_vl += info.value_loss;
        ++diag_n;
        if (cfg.ppo.target_kl > 0.0 && info.approx_kl > 1.5 * cfg.ppo.target_kl) {
          keep_training = false;
          break;
        }
        adam.step();
      }
    }

    CurvePoint cp{step, episodes ? ret_sum / episodes : std::numeric_limits<double>::quiet_NaN(),
                  episodes ? err_sum / episodes : std::numeric_limits<double>::quiet_NaN(), episodes};
    if (diag_n > 0) {
      cp.approx_kl = diag_kl / diag_n;
      cp.clip_fraction = diag_clip / diag_n;
      cp.value_loss = diag_vl / diag_n;
    }
    cp.mean_log_std = static_cast<double>(net.log_std().value.mean());
    result.curve.push_back(cp);
    if (hooks.on_progress) hooks.on_progress(cp);
    if (next_checkpoint > 0 && step >= next_checkpoint && !hooks.checkpoint_prefix.empty()) {
      sync_normalizer();
      bundle.save(hooks.checkpoint_prefix + ".step" + std::to_string(step) + ".bin");
      next_checkpoint += cfg.checkpoint_every;
    }
  }
  sync_normalizer();
  result.bundle = bundle;
  return result;
}

}  // namespace datt
