// ems: command-line front end.
//
//   ems train --interval low [--config f.ini] [--store dir]
//   ems transfer --cycle c.csv [--store dir] [--out dir]
//   ems dp --cycle c.csv [--soc-nodes 201] [--action-nodes 41] [--out trace.csv]
//   ems eval --policy store [--cycle c.csv] [--out dir]
//   ems compare --config f.ini
//   ems gradcheck [--networks 100]
//
// A cycle argument without '/' or '.' names a built-in profile. EMS_SEED
// replaces the configured seed.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ems/config.hpp"
#include "ems/dp.hpp"
#include "ems/error.hpp"
#include "ems/harness.hpp"
#include "ems/network.hpp"
#include "ems/simd/kernels.hpp"
#include "ems/transfer.hpp"

namespace fs = std::filesystem;
using namespace ems;

namespace {

struct Common {
  std::string config_path;
  std::string unit = "mps";
};

config::ExperimentConfig load(const Common& c) {
  auto cfg = c.config_path.empty() ? config::ExperimentConfig{} : config::load_config(c.config_path);
  config::apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

cycles::DrivingCycle cycle_arg(const std::string& spec, const config::ExperimentConfig& cfg, const Common& c) {
  return config::resolve_cycle(spec, cfg.target.synth_seed, cycles::parse_unit(c.unit));
}

std::string g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void print_metrics(const harness::FuelMetrics& m) {
  std::cout << "fuel_g = " << g(m.fuel_g) << '\n'
            << "distance_m = " << g(m.distance_m) << '\n'
            << "l_per_100km = " << g(m.l_per_100km) << '\n'
            << "final_soc = " << g(m.final_soc) << '\n'
            << "corrected_fuel_g = " << g(m.corrected_fuel_g) << '\n'
            << "corrected_l_per_100km = " << g(m.corrected_l_per_100km) << '\n';
}

harness::FuelMetrics metrics(const env::Trajectory& t, const cycles::DrivingCycle& cycle,
                             const config::ExperimentConfig& cfg) {
  const double gw = cfg.soc_correction > 0.0 ? cfg.soc_correction : harness::default_soc_correction(cfg.powertrain);
  return harness::compute_fuel_metrics(t, cycle, cfg.fuel_density, cfg.env.reward.soc_ref, cfg.powertrain.battery, gw);
}

fs::path run_dir(const config::ExperimentConfig& cfg) { return cfg.output_dir / cfg.name; }

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "experiment config (INI)")->check(CLI::ExistingFile);
  sub->add_option("--unit", c.unit, "speed unit of cycle CSVs")->check(CLI::IsMember({"mps", "kmh"}));
}

int cmd_train(const Common& c, const std::string& interval, std::string store_dir) {
  const auto cfg = load(c);
  const auto s = cycles::parse_interval(interval);
  const auto hash = config::config_hash(cfg);
  std::vector<cycles::DrivingCycle> corpus;
  for (std::size_t i = 0; i < cfg.training.size(); ++i)
    corpus.push_back(config::resolve_cycle(cfg.training[i], cfg.target.synth_seed + 101 + i, cycles::parse_unit(c.unit)));
  const auto pool = transfer::segment_pool(corpus, s, cfg.transfer.min_segment);
  auto trained = transfer::train_interval(s, pool, cfg.powertrain, cfg.env, cfg.transfer,
                                          cfg.seed * 1000 + static_cast<std::uint64_t>(s), hash);
  if (store_dir.empty()) store_dir = (run_dir(cfg) / "store").string();
  transfer::PolicyStore(store_dir).save(trained.entry);
  const auto log_path = fs::path(store_dir).parent_path() / ("train_" + interval + ".csv");
  harness::write_train_log(log_path, trained.log.episodes, hash);
  std::cout << "config_hash = " << hash << '\n'
            << "interval = " << interval << '\n'
            << "segments = " << pool.size() << '\n'
            << "episodes = " << trained.log.episodes.size() << '\n'
            << "converged = " << (trained.log.converged ? "true" : "false") << '\n'
            << "final_return = " << g(trained.entry.meta.final_return) << '\n'
            << "store = " << store_dir << '\n'
            << "train_log = " << log_path.string() << '\n';
  return 0;
}

int cmd_transfer(const Common& c, const std::string& cycle_spec, std::string store_dir, std::string out) {
  const auto cfg = load(c);
  const auto hash = config::config_hash(cfg);
  const auto cycle = cycle_arg(cycle_spec, cfg, c);
  if (store_dir.empty()) store_dir = (run_dir(cfg) / "store").string();
  if (out.empty()) out = (run_dir(cfg) / "transfer").string();
  const transfer::PolicyStore store(store_dir);
  auto tr = transfer::transfer_to_cycle(store, cycle, cfg.powertrain, cfg.env, cfg.transfer, cfg.seed * 1000 + 11);
  transfer::PolicyStore out_store(fs::path(out) / "store");
  for (const auto& [s, e] : tr.entries) out_store.save(e);
  const env::Dynamics dyn(cfg.powertrain, cfg.env);
  env::EmsEnv env(cfg.powertrain, cfg.env);
  const auto traj = env::run_policy(env, cycle, cfg.env.soc0, tr.policy.power_policy(dyn));
  harness::emit_traces(out, traj, dyn, hash, tr.log.episodes);
  harness::write_train_log(fs::path(out) / "train.csv", tr.log.episodes, hash);
  std::cout << "config_hash = " << hash << '\n'
            << "cycle = " << cycle.name << '\n'
            << "episodes = " << tr.log.episodes.size() << '\n'
            << "converged = " << (tr.log.converged ? "true" : "false") << '\n'
            << "hidden_unchanged = " << (tr.hidden_unchanged ? "true" : "false") << '\n';
  print_metrics(metrics(traj, cycle, cfg));
  std::cout << "out = " << out << '\n';
  return tr.hidden_unchanged ? 0 : 1;
}

// Grid flags override the config's [dp] section when given.
int cmd_dp(const Common& c, const std::string& cycle_spec, std::optional<std::size_t> soc_nodes_flag,
           std::optional<std::size_t> action_nodes_flag, std::optional<std::string> interp_flag,
           const std::string& out) {
  const auto cfg = load(c);
  const std::size_t soc_nodes = soc_nodes_flag.value_or(cfg.dp_soc_nodes);
  const std::size_t action_nodes = action_nodes_flag.value_or(cfg.dp_action_nodes);
  const bool nearest = interp_flag ? *interp_flag == "nearest" : cfg.dp_interpolation == dp::ValueInterpolation::nearest;
  const auto cycle = cycle_arg(cycle_spec, cfg, c);
  const env::Dynamics dyn(cfg.powertrain, cfg.env);
  const auto& b = cfg.powertrain.battery;
  const auto grid = dp::DpGrid::uniform(b.soc_min, b.soc_max, soc_nodes, dyn.max_engine_power(), action_nodes);
  const auto sol = dp::solve(cycle, grid, dyn, cfg.env.soc0,
                             {nearest ? dp::ValueInterpolation::nearest : dp::ValueInterpolation::linear});
  const auto traj = dp::rollout(sol, cycle, dyn, cfg.env.soc0);
  const auto violations = harness::check_constraints(traj, cfg.powertrain, cfg.env);
  if (!violations.empty()) throw Error("DP trajectory violates limits at sample " + std::to_string(violations[0].k));
  if (!out.empty()) {
    const fs::path p(out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    f << "# config_hash = " << config::config_hash(cfg) << '\n'
      << "k,time_s,speed_mps,soc,engine_w,battery_w,demand_w,fuel_g,reward\n";
    char buf[256];
    for (const auto& r : traj.steps) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.k, r.k * traj.dt,
                    r.v, r.info.soc, r.info.engine_power, r.info.battery_power, r.info.demand, r.info.fuel_g,
                    r.reward);
      f << buf;
    }
    if (!f) throw Error("failed writing " + out);
  }
  std::cout << "config_hash = " << config::config_hash(cfg) << '\n'
            << "cycle = " << cycle.name << '\n'
            << "samples = " << cycle.size() << '\n'
            << "soc_nodes = " << soc_nodes << '\n'
            << "action_nodes = " << action_nodes << '\n'
            << "total_cost = " << g(sol.total_cost) << '\n';
  print_metrics(metrics(traj, cycle, cfg));
  return 0;
}

int cmd_eval(const Common& c, const std::string& store_dir, std::string cycle_spec, const std::string& out) {
  const auto cfg = load(c);
  const auto cycle = cycle_spec.empty() ? config::resolve_cycle(cfg.target) : cycle_arg(cycle_spec, cfg, c);
  const transfer::PolicyStore store(store_dir);
  const auto policy = transfer::assemble_policy(store);
  const env::Dynamics dyn(cfg.powertrain, cfg.env);
  env::EmsEnv env(cfg.powertrain, cfg.env);
  const auto traj = env::run_policy(env, cycle, cfg.env.soc0, policy.power_policy(dyn));
  const auto violations = harness::check_constraints(traj, cfg.powertrain, cfg.env);
  if (!out.empty()) harness::emit_traces(out, traj, dyn, config::config_hash(cfg));
  std::cout << "config_hash = " << config::config_hash(cfg) << '\n'
            << "cycle = " << cycle.name << '\n'
            << "total_reward = " << g(traj.total_reward()) << '\n'
            << "violations = " << violations.size() << '\n';
  print_metrics(metrics(traj, cycle, cfg));
  return violations.empty() ? 0 : 1;
}

int cmd_compare(const Common& c) {
  const auto cfg = load(c);
  const auto res = harness::run_compare(cfg);
  std::ifstream in(res.run_dir / "summary.txt");
  std::cout << in.rdbuf();
  std::cout << "run_dir = " << res.run_dir.string() << '\n';
  return 0;
}

int cmd_gradcheck(std::size_t networks, std::uint64_t seed) {
  nn::GradCheckOptions opt;
  opt.networks = networks;
  opt.seed = seed;
  const auto r = nn::gradient_check(opt);
  std::string worst;
  for (auto s : r.worst) worst += (worst.empty() ? "" : "-") + std::to_string(s);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
  std::cout << "simd = " << simd::isa_name(simd::active().isa) << '\n'
            << "networks = " << r.networks << '\n'
            << "partials = " << r.checked << '\n'
            << "max_rel_error = " << buf << '\n'
            << "worst_network = " << worst << '\n'
            << "pass = " << (r.max_rel_error < 1e-4 ? "true" : "false") << '\n';
  return r.max_rel_error < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy management workbench for a series hybrid tracked vehicle"};
  app.require_subcommand(1);
  Common common;

  std::string interval, store, out, cycle, policy;
  std::optional<std::size_t> soc_nodes, action_nodes;
  std::optional<std::string> interp;
  std::size_t networks = 100;
  std::uint64_t seed = 1;

  auto* train = app.add_subcommand("train", "train one speed-interval agent on the training corpus");
  add_common(train, common);
  train->add_option("--interval", interval)->required()->check(CLI::IsMember({"low", "medium", "high"}));
  train->add_option("--store", store, "policy store directory");

  auto* tl = app.add_subcommand("transfer", "retrain stored output layers on a new cycle");
  add_common(tl, common);
  tl->add_option("--cycle", cycle)->required();
  tl->add_option("--store", store, "pre-trained policy store");
  tl->add_option("--out", out, "output directory");

  auto* dpc = app.add_subcommand("dp", "dynamic-programming benchmark on a cycle");
  add_common(dpc, common);
  dpc->add_option("--cycle", cycle)->required();
  dpc->add_option("--soc-nodes", soc_nodes)->check(CLI::Range(2, 100000));
  dpc->add_option("--action-nodes", action_nodes)->check(CLI::Range(2, 100000));
  dpc->add_option("--interpolation", interp)->check(CLI::IsMember({"linear", "nearest"}));
  dpc->add_option("--out", out, "trace CSV");

  auto* ev = app.add_subcommand("eval", "run a stored policy on a cycle");
  add_common(ev, common);
  ev->add_option("--policy", policy)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--cycle", cycle, "defaults to the configured target");
  ev->add_option("--out", out, "trace directory");

  auto* cmp = app.add_subcommand("compare", "DP vs DDPG+TL vs DDPG from scratch");
  add_common(cmp, common);
  cmp->get_option("--config")->required();

  auto* gc = app.add_subcommand("gradcheck", "backward pass against finite differences");
  gc->add_option("--networks", networks)->check(CLI::Range(1, 100000));
  gc->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(common, interval, store);
    if (*tl) return cmd_transfer(common, cycle, store, out);
    if (*dpc) return cmd_dp(common, cycle, soc_nodes, action_nodes, interp, out);
    if (*ev) return cmd_eval(common, policy, cycle, out);
    if (*cmp) return cmd_compare(common);
    if (*gc) return cmd_gradcheck(networks, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
