#pragma once

// Experiment plumbing: controller/estimator factories keyed by id, a
// config-hash keyed cache for trained policies, and ablation sweeps.

#include <filesystem>

#include "datt/rma.hpp"

namespace datt {

class DattController final : public Controller {
 public:
  DattController(std::shared_ptr<const PolicyBundle> bundle, std::string name = "datt")
      : bundle_(std::move(bundle)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  ControlCommand compute(const QuadState& s, const ReferenceTrajectory& traj, double t,
                         const Vec3& d_hat) override {
    return act(build_observation(s, traj, t, d_hat, bundle_->obs_config()), *bundle_);
  }
  const PolicyBundle& bundle() const { return *bundle_; }

 private:
  std::shared_ptr<const PolicyBundle> bundle_;
  std::string name_;
};

inline const std::vector<std::string>& controller_ids() {
  static const std::vector<std::string> ids{"flatness", "l1-flatness", "mppi",        "l1-mppc",
                                            "datt",     "datt-noadapt", "datt-rma"};
  return ids;
}

struct ControllerSetup {
  std::unique_ptr<Controller> controller;
  std::unique_ptr<DisturbanceEstimator> estimator;
};

struct ControllerResources {
  std::shared_ptr<const PolicyBundle> policy;
  std::shared_ptr<const RmaNet> rma;
};

inline ControllerSetup make_controller(const std::string& id, const KeyValueConfig& kv, const SimConfig& sim,
                                       const ControllerResources& res = {}) {
  ControllerSetup out;
  const L1Config l1 = L1Config::from_config(kv);
  auto need_policy = [&] {
    if (!res.policy) throw Error("controller " + id + " requires a trained policy bundle");
    return res.policy;
  };
  if (id == "flatness" || id == "l1-flatness") {
    out.controller = std::make_unique<FlatnessBaseline>(FlatnessGains::from_config(kv), sim, id);
  } else if (id == "mppi" || id == "l1-mppc") {
    out.controller = std::make_unique<MppiBaseline>(MppiConfig::from_config(kv), sim, id);
  } else if (id == "datt" || id == "datt-noadapt" || id == "datt-rma") {
    out.controller = std::make_unique<DattController>(need_policy(), id);
  } else {
    throw Error("unknown controller id: " + id);
  }
  if (id == "l1-flatness" || id == "l1-mppc" || id == "datt")
    out.estimator = std::make_unique<L1DisturbanceEstimator>(l1);
  else if (id == "datt-rma") {
    if (!res.rma) throw Error("controller datt-rma requires a trained adaptation network");
    out.estimator = std::make_unique<RmaDisturbanceEstimator>(res.rma, sim);
  } else
    out.estimator = std::make_unique<ZeroEstimator>();
  return out;
}

inline BankSpec bank_from_config(const KeyValueConfig& kv, const std::string& prefix = "bank.") {
  BankSpec b;
  b.kind = trajectory_kind_from_string(kv.get_string(prefix + "kind", to_string(b.kind)));
  b.count = static_cast<int>(kv.get_int(prefix + "count", b.count));
  b.seed = static_cast<std::uint64_t>(kv.get_int(prefix + "seed", static_cast<long long>(b.seed)));
  if (b.count < 1) throw Error("bank.count must be >= 1");
  return b;
}

inline EpisodeSpec episode_from_config(const KeyValueConfig& kv) {
  EpisodeSpec e;
  e.sim = SimConfig::from_config(kv, "sim.");
  e.steps = static_cast<int>(kv.get_int("eval.steps", e.steps));
  e.regime = regime_from_string(kv.get_string("eval.disturbance", "none"));
  e.velocity_noise_std = kv.get_double("eval.velocity_noise_std", 0.0);
  if (e.steps < 1) throw Error("eval.steps must be >= 1");
  return e;
}

// -- training cache -------------------------------------------------------------

/// Canonical string of every key that influences training.
inline std::string training_key(const KeyValueConfig& kv) {
  KeyValueConfig sub;
  for (const auto& [k, v] : kv.values())
    if (k.rfind("train.", 0) == 0 || k.rfind("ppo.", 0) == 0 || k.rfind("policy.", 0) == 0 ||
        k.rfind("sim.", 0) == 0)
      sub.set(k, v);
  return sub.canonical();
}

inline std::string config_hash_hex(const std::string& canonical) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
  return buf;
}

struct CachedPolicy {
  std::shared_ptr<const PolicyBundle> bundle;
  std::string path;
  bool trained_now = false;
};

/// Loads `<dir>/policy-<hash>.bin` or trains and stores it (with its curve
/// CSV and the canonical config beside it).
inline CachedPolicy cached_policy(const KeyValueConfig& kv, const std::string& dir,
                                  const TrainHooks& hooks = {}) {
  const std::string key = training_key(kv);
  const std::string base = dir + "/policy-" + config_hash_hex(key);
  CachedPolicy out;
  out.path = base + ".bin";
  if (std::filesystem::exists(out.path)) {
    out.bundle = std::make_shared<PolicyBundle>(PolicyBundle::load(out.path));
    return out;
  }
  std::filesystem::create_directories(dir);
  const TrainConfig cfg = TrainConfig::from_config(kv);
  TrainHooks h = hooks;
  if (h.checkpoint_prefix.empty()) h.checkpoint_prefix = base;
  TrainResult r = train_ppo(cfg, h);
  write_curve_csv(base + ".curve.csv", r.curve);
  {
    std::ofstream f(base + ".toml");
    f << key;
  }
  const std::string tmp = out.path + ".tmp";
  r.bundle.save(tmp);
  std::filesystem::rename(tmp, out.path);
  out.bundle = std::make_shared<PolicyBundle>(std::move(r.bundle));
  out.trained_now = true;
  return out;
}

inline RmaConfig rma_from_config(const KeyValueConfig& kv) {
  RmaConfig c = RmaConfig::preset(kv.get_string("rma.preset", "desk"));
  c.iterations = static_cast<int>(kv.get_int("rma.iterations", c.iterations));
  c.rollout_steps = static_cast<int>(kv.get_int("rma.rollout_steps", c.rollout_steps));
  c.history = static_cast<int>(kv.get_int("rma.history", c.history));
  c.lr = kv.get_double("rma.lr", c.lr);
  c.seed = static_cast<std::uint64_t>(kv.get_int("rma.seed", 0));
  c.brownian = kv.get_bool("rma.brownian", c.brownian);
  c.buffer_rollouts = static_cast<int>(kv.get_int("rma.buffer_rollouts", c.buffer_rollouts));
  c.sim = SimConfig::from_config(kv, "sim.");
  c.validate();
  return c;
}

inline std::shared_ptr<const RmaNet> cached_rma(const KeyValueConfig& kv, const CachedPolicy& policy,
                                                const std::string& dir,
                                                const std::function<void(int, double)>& on_progress = {}) {
  KeyValueConfig sub;
  for (const auto& [k, v] : kv.values())
    if (k.rfind("rma.", 0) == 0 || k.rfind("sim.", 0) == 0) sub.set(k, v);
  sub.set("rma.policy", policy.path);
  const std::string path = dir + "/rma-" + config_hash_hex(sub.canonical()) + ".bin";
  if (std::filesystem::exists(path)) return std::make_shared<RmaNet>(RmaNet::load(path));
  std::filesystem::create_directories(dir);
  RmaResult r = train_rma(*policy.bundle, rma_from_config(kv), on_progress);
  RmaNet saved = *r.net;
  saved.save(path + ".tmp");
  std::filesystem::rename(path + ".tmp", path);
  return r.net;
}

// -- ablations ------------------------------------------------------------------

enum class AblationAxis { Horizon, Curriculum, Feedback, Frame };

inline AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "horizon") return AblationAxis::Horizon;
  if (s == "curriculum") return AblationAxis::Curriculum;
  if (s == "feedback") return AblationAxis::Feedback;
  if (s == "frame") return AblationAxis::Frame;
  throw Error("unknown ablation axis: " + s);
}

struct AblationVariant {
  std::string label;
  KeyValueConfig config;
};

/// Horizon variants keep the 0.06 s spacing of the base window (N points
/// spanning H = 0.06 N; a single point is the current reference).
inline std::vector<AblationVariant> ablation_variants(const KeyValueConfig& base, AblationAxis axis) {
  std::vector<AblationVariant> out;
  auto with = [&](std::string label, std::initializer_list<std::pair<std::string, std::string>> kvs) {
    KeyValueConfig c = base;
    for (const auto& [k, v] : kvs) c.set(k, v);
    out.push_back({std::move(label), std::move(c)});
  };
  switch (axis) {
    case AblationAxis::Horizon:
      for (int n : {1, 5, 10, 15, 20}) {
        char h[32];
        std::snprintf(h, sizeof h, "%.2f", n == 1 ? 0.02 : 0.06 * n);
        with("horizon-" + std::to_string(n), {{"policy.count", std::to_string(n)}, {"policy.horizon", h}});
      }
      break;
    case AblationAxis::Curriculum:
      with("curriculum", {{"train.curriculum", "true"}});
      with("no-curriculum", {{"train.curriculum", "false"}});
      break;
    case AblationAxis::Feedback:
      with("feedback", {{"policy.feedback", "true"}});
      with("no-feedback", {{"policy.feedback", "false"}});
      break;
    case AblationAxis::Frame:
      with("body-frame", {{"policy.body_frame", "true"}});
      with("world-frame", {{"policy.body_frame", "false"}});
      break;
  }
  return out;
}

struct AblationRow {
  std::string label;
  Aggregate aggregate;
  bool failed = false;
  std::string note;
};

/// A variant has failed when it diverges: crashes on more than half the bank
/// or exceeds `fail_error` mean tracking error.
inline bool diverged(const Aggregate& a, double fail_error = 0.5) {
  return 2 * a.crashes > a.count || !(a.mean <= fail_error);
}

/// Trains (or loads) each variant and evaluates it without adaptation and
/// without disturbances on the fixed bank.
inline std::vector<AblationRow> ablation_sweep(const KeyValueConfig& base, AblationAxis axis, const BankSpec& bank,
                                               const std::string& cache_dir,
                                               const std::function<void(const std::string&)>& log = {}) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants(base, axis)) {
    AblationRow row;
    row.label = v.label;
    try {
      if (log) log("variant " + v.label + ": training or loading");
      const CachedPolicy p = cached_policy(v.config, cache_dir);
      EpisodeSpec spec = episode_from_config(v.config);
      spec.regime = DisturbanceRegime::None;
      DattController ctrl(p.bundle, v.label);
      ZeroEstimator est;
      row.aggregate = run_bank(spec, bank, ctrl, est).aggregate;
      row.failed = diverged(row.aggregate);
    } catch (const Error& e) {
      row.failed = true;
      row.note = e.what();
    }
    if (log) log(format_aggregate(row.label, row.aggregate) + (row.failed ? "  [failed]" : ""));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f.precision(10);
  f << "variant,mean_error,std_error,crashes,count,failed\n";
  for (const auto& r : rows)
    f << r.label << ',' << r.aggregate.mean << ',' << r.aggregate.std << ',' << r.aggregate.crashes << ','
      << r.aggregate.count << ',' << (r.failed ? 1 : 0) << '\n';
}

}  // namespace datt
