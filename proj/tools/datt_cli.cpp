// Command-line front end: trajectory generation, training, evaluation,
// ablation sweeps and rollout replay.

#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "datt/experiment.hpp"

namespace {

using namespace datt;

KeyValueConfig load_config(const std::string& path) {
  return path.empty() ? KeyValueConfig{} : KeyValueConfig::load(path);
}

int cmd_gen_traj(const std::string& kind, int count, std::uint64_t seed, const std::string& out_dir,
                 const std::string& format) {
  BankSpec bank;
  bank.kind = trajectory_kind_from_string(kind);
  bank.count = count;
  bank.seed = seed;
  std::filesystem::create_directories(out_dir);
  const auto trajs = make_bank(bank);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const std::string stem = out_dir + "/" + kind + "_" + std::to_string(i);
    if (format == "csv")
      save_trajectory_csv(trajs[i], stem + ".csv");
    else
      save_trajectory_json(trajs[i], stem + ".json");
    std::cout << stem << '.' << format << '\n';
  }
  return 0;
}

int cmd_train(const std::string& config, const std::string& out, const std::string& curve, bool quiet) {
  const KeyValueConfig kv = load_config(config);
  const TrainConfig cfg = TrainConfig::from_config(kv);
  TrainHooks hooks;
  hooks.checkpoint_prefix = out;
  if (!quiet)
    hooks.on_progress = [](const CurvePoint& p) {
      std::cout << "step " << p.step << "  return " << p.mean_return << "  error " << p.mean_tracking_error
                << " m\n";
    };
  TrainResult r = train_ppo(cfg, hooks);
  r.bundle.save(out);
  write_curve_csv(curve.empty() ? out + ".curve.csv" : curve, r.curve);
  std::cout << "saved " << out << '\n';
  return 0;
}

int cmd_train_rma(const std::string& config, const std::string& policy_path, const std::string& out, bool quiet) {
  const KeyValueConfig kv = load_config(config);
  const PolicyBundle policy = PolicyBundle::load(policy_path);
  RmaResult r = train_rma(policy, rma_from_config(kv), [quiet](int it, double loss) {
    if (!quiet && it % 50 == 0) std::cout << "iteration " << it << "  loss " << loss << '\n';
  });
  r.net->save(out);
  std::cout << "saved " << out << '\n';
  return 0;
}

nlohmann::json summary_json(const EvalResult& r) {
  nlohmann::json j;
  j["controller"] = r.controller;
  j["mean_error"] = r.aggregate.mean;
  j["std_error"] = r.aggregate.std;
  j["crashes"] = r.aggregate.crashes;
  j["count"] = r.aggregate.count;
  j["mean_compute_us"] = r.aggregate.mean_compute_us;
  auto& rows = j["episodes"] = nlohmann::json::array();
  for (const auto& e : r.episodes)
    rows.push_back({{"index", e.index}, {"mean_error", e.mean_error}, {"crashed", e.crashed},
                    {"steps", e.steps_run}, {"mean_compute_us", e.mean_compute_us}});
  return j;
}

int cmd_eval(const std::string& config, const std::string& controller, const std::string& bank_kind, int count,
             std::uint64_t seed, const std::string& disturbance, const std::string& policy_path,
             const std::string& rma_path, const std::string& out_dir, bool log_rollouts) {
  KeyValueConfig kv = load_config(config);
  if (!disturbance.empty()) kv.set("eval.disturbance", disturbance);
  BankSpec bank = bank_from_config(kv);
  if (!bank_kind.empty()) bank.kind = trajectory_kind_from_string(bank_kind);
  if (count > 0) bank.count = count;
  if (seed != 0) bank.seed = seed;
  EpisodeSpec spec = episode_from_config(kv);
  spec.log_rollout = log_rollouts;

  ControllerResources res;
  const std::string pol = policy_path.empty() ? kv.get_string("eval.policy", "") : policy_path;
  if (!pol.empty()) res.policy = std::make_shared<PolicyBundle>(PolicyBundle::load(pol));
  const std::string rma = rma_path.empty() ? kv.get_string("eval.rma", "") : rma_path;
  if (!rma.empty()) res.rma = std::make_shared<RmaNet>(RmaNet::load(rma));
  ControllerSetup setup = make_controller(controller, kv, spec.sim, res);

  std::filesystem::create_directories(out_dir);
  const std::string stem = out_dir + "/" + controller + "_" + to_string(bank.kind);
  const EvalResult r = run_bank(spec, bank, *setup.controller, *setup.estimator, [&](const EpisodeResult& e) {
    std::cout << "  traj " << e.index << ": " << (e.crashed ? "crash" : std::to_string(e.mean_error) + " m")
              << '\n';
    if (log_rollouts) write_rollout_csv(e.rollout, stem + "_rollout" + std::to_string(e.index) + ".csv");
  });
  write_rows_csv(r, stem + ".csv");
  std::ofstream(stem + ".json") << summary_json(r).dump(2) << '\n';
  std::cout << format_aggregate(controller, r.aggregate) << '\n';
  return 0;
}

int cmd_ablate(const std::string& config, const std::string& axis, const std::string& cache_dir,
               const std::string& out) {
  const KeyValueConfig kv = load_config(config);
  BankSpec bank = bank_from_config(kv);
  const auto rows = ablation_sweep(kv, ablation_axis_from_string(axis), bank, cache_dir,
                                   [](const std::string& s) { std::cout << s << '\n'; });
  write_ablation_csv(rows, out);
  for (const auto& r : rows)
    std::cout << r.label << ": " << (r.failed ? "failed" : std::to_string(r.aggregate.mean) + " m") << '\n';
  return 0;
}

int cmd_replay(const std::string& log) {
  const auto rows = read_rollout_csv(log);
  std::cout << "steps " << rows.size() << "  mean tracking error " << mean_tracking_error(rows) << " m\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quadrotor trajectory tracking: simulation, baselines, learned policy"};
  app.require_subcommand(1);

  std::string kind = "zigzag", out_dir = "trajectories", format = "json";
  int count = 10;
  std::uint64_t seed = 2024;
  auto* gen = app.add_subcommand("gen-traj", "Write a seeded trajectory bank");
  gen->add_option("--kind", kind, "zigzag | poly5 | chained | star | triangle");
  gen->add_option("--count", count);
  gen->add_option("--seed", seed);
  gen->add_option("--out", out_dir, "Output directory");
  gen->add_option("--format", format)->check(CLI::IsMember({"json", "csv"}));

  std::string config, out = "policy.bin", curve;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a tracking policy with PPO");
  train->add_option("--config", config, "Flat key = value config file");
  train->add_option("--out", out, "Policy bundle path");
  train->add_option("--curve", curve, "Learning-curve CSV (default <out>.curve.csv)");
  train->add_flag("--quiet", quiet);

  std::string rma_policy, rma_out = "rma.bin";
  auto* train_rma_cmd = app.add_subcommand("train-rma", "Train the history-based disturbance regressor");
  train_rma_cmd->add_option("--config", config);
  train_rma_cmd->add_option("--policy", rma_policy, "Trained policy bundle to roll out")->required();
  train_rma_cmd->add_option("--out", rma_out, "Adaptation network path");
  train_rma_cmd->add_flag("--quiet", quiet);

  std::string controller, bank_kind, disturbance, policy, rma, eval_out = "results";
  int eval_count = 0;
  std::uint64_t eval_seed = 0;
  bool log_rollouts = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a controller on a trajectory bank");
  eval->add_option("--config", config);
  eval->add_option("--controller", controller)->required()->check(CLI::IsMember(controller_ids()));
  eval->add_option("--bank", bank_kind, "Trajectory kind of the bank");
  eval->add_option("--count", eval_count);
  eval->add_option("--seed", eval_seed);
  eval->add_option("--disturbance", disturbance)->check(CLI::IsMember({"none", "constant", "brownian"}));
  eval->add_option("--policy", policy, "Policy bundle for datt controllers");
  eval->add_option("--rma", rma, "Adaptation network for datt-rma");
  eval->add_option("--out", eval_out, "Output directory");
  eval->add_flag("--log-rollouts", log_rollouts, "Write per-step rollout CSVs");

  std::string axis, cache_dir = "cache", ablate_out = "ablation.csv";
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  ablate->add_option("--config", config);
  ablate->add_option("--axis", axis)->required()->check(CLI::IsMember({"horizon", "curriculum", "feedback", "frame"}));
  ablate->add_option("--cache", cache_dir, "Directory of cached trained policies");
  ablate->add_option("--out", ablate_out);

  std::string log;
  auto* replay = app.add_subcommand("replay", "Recompute metrics from a rollout CSV");
  replay->add_option("--log", log)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen_traj(kind, count, seed, out_dir, format);
    if (*train) return cmd_train(config, out, curve, quiet);
    if (*train_rma_cmd) return cmd_train_rma(config, rma_policy, rma_out, quiet);
    if (*eval)
      return cmd_eval(config, controller, bank_kind, eval_count, eval_seed, disturbance, policy, rma, eval_out,
                      log_rollouts);
    if (*ablate) return cmd_ablate(config, axis, cache_dir, ablate_out);
    if (*replay) return cmd_replay(log);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
