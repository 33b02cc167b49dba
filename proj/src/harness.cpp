#include "ems/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "ems/dp.hpp"
#include "ems/error.hpp"
#include "ems/transfer.hpp"

namespace ems::harness {
namespace {

namespace fs = std::filesystem;
using cycles::SpeedInterval;

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void close_out(std::ofstream& out, const fs::path& p) {
  out.flush();
  if (!out) throw Error("failed writing " + p.string());
}

// Re-throws any failure with the stage named.
template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error("stage '" + name + "' failed: " + e.what());
  }
}

MethodResult evaluate(const std::string& method, std::uint64_t seed, const env::Trajectory& traj,
                      const cycles::DrivingCycle& cycle, const config::ExperimentConfig& cfg, double g_per_wh) {
  MethodResult r;
  r.method = method;
  r.seed = seed;
  r.metrics = compute_fuel_metrics(traj, cycle, cfg.fuel_density, cfg.env.reward.soc_ref, cfg.powertrain.battery,
                                   g_per_wh);
  r.total_reward = traj.total_reward();
  r.violations = check_constraints(traj, cfg.powertrain, cfg.env).size();
  return r;
}

void metric_lines(std::ostream& out, const std::string& prefix, const MethodResult& m) {
  out << prefix << ".final_soc = " << g17(m.metrics.final_soc) << '\n'
      << prefix << ".fuel_g = " << g17(m.metrics.fuel_g) << '\n'
      << prefix << ".l_per_100km = " << g17(m.metrics.l_per_100km) << '\n'
      << prefix << ".corrected_fuel_g = " << g17(m.metrics.corrected_fuel_g) << '\n'
      << prefix << ".corrected_l_per_100km = " << g17(m.metrics.corrected_l_per_100km) << '\n'
      << prefix << ".total_reward = " << g17(m.total_reward) << '\n'
      << prefix << ".episodes = " << m.episodes << '\n'
      << prefix << ".converged = " << (m.converged ? "true" : "false") << '\n'
      << prefix << ".violations = " << m.violations << '\n';
}

void csv_row(std::ostream& out, const std::string& seed, const MethodResult& m) {
  out << m.method << ',' << seed << ',' << g17(m.metrics.final_soc) << ',' << g17(m.metrics.fuel_g) << ','
      << g17(m.metrics.l_per_100km) << ',' << g17(m.metrics.corrected_fuel_g) << ','
      << g17(m.metrics.corrected_l_per_100km) << ',' << m.episodes << ',' << (m.converged ? 1 : 0) << '\n';
}

}  // namespace

double median(std::vector<double> xs) {
  if (xs.empty()) throw Error("median of an empty set");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

FuelMetrics compute_fuel_metrics(const env::Trajectory& traj, const cycles::DrivingCycle& cycle,
                                 double density_g_per_l, double soc_ref, const powertrain::BatteryParams& battery,
                                 double g_per_wh) {
  if (traj.terminated_early || traj.steps.size() != cycle.size())
    throw Error("trajectory does not cover the cycle (" + std::to_string(traj.steps.size()) + " of " +
                std::to_string(cycle.size()) + " samples)");
  if (!(density_g_per_l > 0.0)) throw Error("fuel density must be positive");
  if (g_per_wh < 0.0) throw Error("SOC correction factor must be >= 0");
  FuelMetrics m;
  m.distance_m = cycle.distance();
  if (!(m.distance_m > 0.0)) throw Error("cycle '" + cycle.name + "' covers zero distance");
  m.fuel_g = traj.total_fuel();
  m.final_soc = traj.final_soc();
  const double km = m.distance_m / 1000.0;
  m.l_per_100km = m.fuel_g / density_g_per_l / km * 100.0;
  m.soc_deficit_wh = std::max(0.0, soc_ref - m.final_soc) * battery.capacity_ah * battery.open_circuit_voltage;
  m.corrected_fuel_g = m.fuel_g + (m.soc_deficit_wh > 0.0 ? m.soc_deficit_wh * g_per_wh : 0.0);
  m.corrected_l_per_100km = m.corrected_fuel_g / density_g_per_l / km * 100.0;
  return m;
}

double default_soc_correction(const powertrain::Powertrain& pt) { return pt.bsfc_map.min_value() / 1000.0; }

std::vector<Violation> check_constraints(const env::Trajectory& traj, const powertrain::Powertrain& pt,
                                         const env::EnvConfig& cfg) {
  std::vector<Violation> out;
  const auto& e = pt.egs;
  const auto& b = pt.battery;
  auto bad = [&](std::size_t k, std::string what) { out.push_back({k, std::move(what)}); };
  for (const auto& r : traj.steps) {
    const auto& i = r.info;
    if (!(i.engine_torque >= e.engine_torque_min && i.engine_torque <= e.engine_torque_max))
      bad(r.k, "engine torque " + g17(i.engine_torque));
    if (i.engine_power > 0.0 && !(i.engine_speed >= e.engine_speed_min && i.engine_speed <= e.engine_speed_max))
      bad(r.k, "engine speed " + g17(i.engine_speed));
    if (!(i.engine_power >= 0.0 && i.engine_power <= e.max_engine_power()))
      bad(r.k, "engine power " + g17(i.engine_power));
    if (!(i.generator_speed >= e.generator_speed_min && i.generator_speed <= e.generator_speed_max))
      bad(r.k, "generator speed " + g17(i.generator_speed));
    if (!(i.demand >= cfg.demand_min && i.demand <= cfg.demand_max)) bad(r.k, "demand power " + g17(i.demand));
    if (pt.motor.use_map && powertrain::motor_speed(pt.motor, r.v) > pt.motor.speed_max)
      bad(r.k, "motor speed at v = " + g17(r.v));
    if (!(i.soc >= b.soc_min && i.soc <= b.soc_max)) bad(r.k, "SOC " + g17(i.soc));
    if (!(r.soc >= b.soc_min && r.soc <= b.soc_max)) bad(r.k, "SOC " + g17(r.soc));
    if (i.infeasible) bad(r.k, "infeasible step");
  }
  return out;
}

void emit_traces(const fs::path& dir, const env::Trajectory& traj, const env::Dynamics& dyn,
                 const std::string& config_hash, const std::vector<agents::EpisodeStats>& curves) {
  const auto violations = check_constraints(traj, dyn.powertrain(), dyn.config());
  if (!violations.empty())
    throw Error("trajectory violates operating limits at sample " + std::to_string(violations.front().k) + ": " +
                violations.front().what + " (" + std::to_string(violations.size()) + " violations)");
  fs::create_directories(dir);
  const std::string head = "# config_hash = " + config_hash + "\n";
  {
    const auto p = dir / "soc_trace.csv";
    auto out = open_out(p);
    out << head << "k,time_s,speed_mps,soc,reward,fuel_g\n";
    for (const auto& r : traj.steps)
      out << r.k << ',' << g17(static_cast<double>(r.k) * traj.dt) << ',' << g17(r.v) << ',' << g17(r.info.soc)
          << ',' << g17(r.reward) << ',' << g17(r.info.fuel_g) << '\n';
    close_out(out, p);
  }
  {
    const auto p = dir / "power_split.csv";
    auto out = open_out(p);
    out << head << "k,demand_w,engine_w,generator_w,battery_w,motor_efficiency\n";
    for (const auto& r : traj.steps)
      out << r.k << ',' << g17(r.info.demand) << ',' << g17(r.info.engine_power) << ','
          << g17(r.info.generator_power) << ',' << g17(r.info.battery_power) << ',' << g17(r.info.motor_efficiency)
          << '\n';
    close_out(out, p);
  }
  {
    const auto p = dir / "engine_points.csv";
    auto out = open_out(p);
    out << head << "k,torque_nm,speed_rpm,power_w\n";
    for (const auto& r : traj.steps)
      out << r.k << ',' << g17(r.info.engine_torque) << ',' << g17(r.info.engine_speed / powertrain::kRpmToRadPerSec)
          << ',' << g17(r.info.engine_power) << '\n';
    close_out(out, p);
  }
  if (!curves.empty()) {
    const auto p = dir / "train_curves.csv";
    auto out = open_out(p);
    out << head << "episode,return,mean_abs_td_error,fuel_g,final_soc\n";
    for (const auto& e : curves)
      out << e.episode << ',' << g17(e.ret) << ',' << g17(e.mean_abs_td) << ',' << g17(e.fuel_g) << ','
          << g17(e.final_soc) << '\n';
    close_out(out, p);
  }
}

void write_train_log(const fs::path& path, const std::vector<agents::EpisodeStats>& log,
                     const std::string& config_hash) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto out = open_out(path);
  out << "# config_hash = " << config_hash << "\n"
      << "# wall_ms covers environment stepping and network updates only\n"
      << "episode,return,mean_abs_td_error,fuel_g,final_soc,wall_ms\n";
  for (const auto& e : log)
    out << e.episode << ',' << g17(e.ret) << ',' << g17(e.mean_abs_td) << ',' << g17(e.fuel_g) << ','
        << g17(e.final_soc) << ',' << g17(e.wall_ms) << '\n';
  close_out(out, path);
}

CompareResult run_compare(const config::ExperimentConfig& cfg) {
  cfg.validate();
  CompareResult result;
  result.config_hash = config::config_hash(cfg);
  result.run_dir = cfg.output_dir / cfg.name;
  fs::create_directories(result.run_dir);
  const auto& hash = result.config_hash;
  const auto& pt = cfg.powertrain;
  const double g_per_wh = cfg.soc_correction > 0.0 ? cfg.soc_correction : default_soc_correction(pt);

  const auto target = stage("load target cycle", [&] { return config::resolve_cycle(cfg.target); });
  const auto training = stage("load training cycles", [&] {
    std::vector<cycles::DrivingCycle> cs;
    for (std::size_t i = 0; i < cfg.training.size(); ++i)
      cs.push_back(config::resolve_cycle(cfg.training[i], cfg.target.synth_seed + 101 + i, cfg.target.unit));
    return cs;
  });
  const env::Dynamics dyn(pt, cfg.env);

  // DP does not depend on the seed.
  const auto dp_traj = stage("dp", [&] {
    const auto grid = dp::DpGrid::uniform(pt.battery.soc_min, pt.battery.soc_max, cfg.dp_soc_nodes,
                                          dyn.max_engine_power(), cfg.dp_action_nodes);
    const auto sol = dp::solve(target, grid, dyn, cfg.env.soc0, {cfg.dp_interpolation});
    return dp::rollout(sol, target, dyn, cfg.env.soc0);
  });
  stage("emit dp traces", [&] { emit_traces(result.run_dir / "dp", dp_traj, dyn, hash); });
  const auto dp_result = evaluate("dp", 0, dp_traj, target, cfg, g_per_wh);

  const auto target_intervals = cycles::classify_intervals(target);
  for (std::size_t i = 0; i < cfg.seeds; ++i) {
    const std::uint64_t seed = cfg.seed + i;
    const std::string tag = "seed " + std::to_string(seed);
    const fs::path seed_dir = result.run_dir / ("seed_" + std::to_string(seed));
    SeedResult sr;
    sr.seed = seed;
    sr.dp = dp_result;
    sr.dp.seed = seed;

    // upper level: per-interval pretraining on the training corpus
    transfer::PolicyStore store(seed_dir / "store");
    bool needed[3] = {false, false, false};
    for (const auto& seg : target_intervals.segments) needed[static_cast<int>(seg.interval)] = true;
    for (auto s : {SpeedInterval::low, SpeedInterval::medium, SpeedInterval::high}) {
      const std::string name = "pretrain " + std::string(cycles::to_string(s)) + " (" + tag + ")";
      stage(name, [&] {
        const auto pool = transfer::segment_pool(training, s, cfg.transfer.min_segment);
        // an interval the training corpus never reaches is only an error if the target needs it
        if (pool.empty() && !needed[static_cast<int>(s)]) return;
        auto trained = transfer::train_interval(s, pool, pt, cfg.env, cfg.transfer,
                                                seed * 1000 + static_cast<std::uint64_t>(s), hash);
        store.save(trained.entry);
        write_train_log(seed_dir / "pretrain" / (std::string(cycles::to_string(s)) + "_train.csv"),
                        trained.log.episodes, hash);
      });
    }

    // common DDPG: from scratch on the target cycle
    env::EmsEnv eval_env(pt, cfg.env);
    nn::DenseNetwork scratch_actor;
    stage("ddpg from scratch (" + tag + ")", [&] {
      auto dc = cfg.transfer.ddpg;
      dc.schedule_episodes = cfg.scratch_budget;
      agents::DdpgAgent agent(3, dc, seed * 1000 + 7);
      auto buffer = agent.make_buffer();
      agents::EmsAgentEnv aenv(pt, cfg.env, {target}, cfg.transfer.soc0_jitter, seed * 1000 + 8);
      std::mt19937_64 rng(seed * 1000 + 9);
      const auto log = agents::train_ddpg(agent, aenv, buffer, cfg.scratch_budget, cfg.transfer.criterion, rng);
      scratch_actor = agent.actor();
      const auto traj = agents::evaluate_actor(scratch_actor, eval_env, target, cfg.env.soc0);
      sr.scratch = evaluate("ddpg", seed, traj, target, cfg, g_per_wh);
      sr.scratch.episodes = log.episodes_to_convergence;
      sr.scratch.converged = log.converged;
      sr.scratch.wall_s = log.wall_s;
      sr.scratch.curves = log.episodes;
      emit_traces(seed_dir / "ddpg", traj, dyn, hash, log.episodes);
      write_train_log(seed_dir / "ddpg" / "train.csv", log.episodes, hash);
    });
    // lower level: output-layer retraining on the target cycle
    stage("transfer (" + tag + ")", [&] {
      auto tr = transfer::transfer_to_cycle(store, target, pt, cfg.env, cfg.transfer, seed * 1000 + 11);
      sr.hidden_unchanged = tr.hidden_unchanged;
      sr.tl.episodes = tr.log.episodes_to_convergence;
      sr.tl.converged = tr.log.converged;
      sr.tl.wall_s = tr.log.wall_s;
      sr.tl.curves = tr.log.episodes;
      write_train_log(seed_dir / "ddpg_tl" / "train.csv", tr.log.episodes, hash);

      auto policy = tr.policy;
      for (auto& rep : tr.reports) {
        // validation rollouts: this cycle's segments of the interval, each from soc0
        const auto pool = transfer::segment_pool({target}, rep.interval, 2);
        if (pool.empty()) continue;
        rep.validation_return =
            transfer::rollout_return(tr.entries.at(rep.interval).actor, pool, eval_env, cfg.env.soc0);
        rep.baseline_return = transfer::rollout_return(scratch_actor, pool, eval_env, cfg.env.soc0);
        rep.negative_transfer = transfer::detect_negative_transfer(rep.validation_return, rep.baseline_return,
                                                                   cfg.transfer.negative_threshold);
        if (!rep.negative_transfer) continue;
        // fall back to from-scratch training on the same segments
        auto fb = transfer::train_interval(rep.interval, pool, pt, cfg.env, cfg.transfer,
                                           seed * 1000 + 20 + static_cast<std::uint64_t>(rep.interval), hash);
        fb.entry.meta.fallback = true;
        policy.set(rep.interval, fb.entry.actor);
        tr.entries[rep.interval] = fb.entry;
        sr.tl.wall_s += fb.log.wall_s;
        sr.fallbacks.push_back(rep.interval);
      }
      transfer::PolicyStore out_store(seed_dir / "store_tl");
      for (const auto& [s, entry] : tr.entries) out_store.save(entry);

      const auto traj = env::run_policy(eval_env, target, cfg.env.soc0, policy.power_policy(dyn));
      const auto episodes = sr.tl.episodes;
      const auto converged = sr.tl.converged;
      const auto wall = sr.tl.wall_s;
      auto curves = std::move(sr.tl.curves);
      sr.tl = evaluate("ddpg_tl", seed, traj, target, cfg, g_per_wh);
      sr.tl.episodes = episodes;
      sr.tl.converged = converged;
      sr.tl.wall_s = wall;
      sr.tl.curves = std::move(curves);
      sr.reports = tr.reports;
      emit_traces(seed_dir / "ddpg_tl", traj, dyn, hash, sr.tl.curves);
    });
    result.seeds.push_back(std::move(sr));
  }

  // aggregation
  stage("write summary", [&] {
    std::vector<double> tl_fuel, sc_fuel, tl_soc, sc_soc, tl_ep, sc_ep, tl_wall, sc_wall;
    for (const auto& s : result.seeds) {
      tl_fuel.push_back(s.tl.metrics.corrected_fuel_g);
      sc_fuel.push_back(s.scratch.metrics.corrected_fuel_g);
      tl_soc.push_back(s.tl.metrics.final_soc);
      sc_soc.push_back(s.scratch.metrics.final_soc);
      tl_ep.push_back(static_cast<double>(s.tl.episodes));
      sc_ep.push_back(static_cast<double>(s.scratch.episodes));
      tl_wall.push_back(s.tl.wall_s);
      sc_wall.push_back(s.scratch.wall_s);
    }
    {
      const auto p = result.run_dir / "comparison.csv";
      auto out = open_out(p);
      out << "# config_hash = " << hash << "\n"
          << "method,seed,final_soc,fuel_g,l_per_100km,corrected_fuel_g,corrected_l_per_100km,episodes,converged\n";
      csv_row(out, "all", dp_result);
      for (const auto& s : result.seeds) {
        csv_row(out, std::to_string(s.seed), s.tl);
        csv_row(out, std::to_string(s.seed), s.scratch);
      }
      close_out(out, p);
    }
    {
      const auto p = result.run_dir / "summary.txt";
      auto out = open_out(p);
      out << "config_hash = " << hash << '\n'
          << "name = " << cfg.name << '\n'
          << "cycle = " << target.name << '\n'
          << "cycle.samples = " << target.size() << '\n'
          << "cycle.distance_m = " << g17(target.distance()) << '\n'
          << "cycle.segments = " << target_intervals.segments.size() << '\n'
          << "soc_correction_g_per_wh = " << g17(g_per_wh) << '\n'
          << "fuel_density_g_per_l = " << g17(cfg.fuel_density) << '\n';
      metric_lines(out, "dp", dp_result);
      for (const auto& s : result.seeds) {
        const std::string pre = "seed." + std::to_string(s.seed);
        metric_lines(out, pre + ".ddpg_tl", s.tl);
        metric_lines(out, pre + ".ddpg", s.scratch);
        for (const auto& rep : s.reports) {
          const std::string ip = pre + ".transfer." + std::string(cycles::to_string(rep.interval));
          out << ip << ".samples = " << rep.samples << '\n'
              << ip << ".return = " << g17(rep.eval_return) << '\n'
              << ip << ".validation_return = " << g17(rep.validation_return) << '\n'
              << ip << ".baseline_return = " << g17(rep.baseline_return) << '\n'
              << ip << ".negative_transfer = " << (rep.negative_transfer ? "true" : "false") << '\n';
        }
        out << pre << ".hidden_unchanged = " << (s.hidden_unchanged ? "true" : "false") << '\n';
        std::string fb;
        for (auto f : s.fallbacks) fb += (fb.empty() ? "" : ",") + std::string(cycles::to_string(f));
        out << pre << ".fallback = " << (fb.empty() ? "none" : fb) << '\n';
      }
      out << "median.ddpg_tl.corrected_fuel_g = " << g17(median(tl_fuel)) << '\n'
          << "median.ddpg.corrected_fuel_g = " << g17(median(sc_fuel)) << '\n'
          << "median.ddpg_tl.final_soc = " << g17(median(tl_soc)) << '\n'
          << "median.ddpg.final_soc = " << g17(median(sc_soc)) << '\n'
          << "median.ddpg_tl.episodes = " << g17(median(tl_ep)) << '\n'
          << "median.ddpg.episodes = " << g17(median(sc_ep)) << '\n'
          << "gap.ddpg_tl_vs_dp = " << g17(median(tl_fuel) / dp_result.metrics.corrected_fuel_g - 1.0) << '\n'
          << "gap.ddpg_vs_dp = " << g17(median(sc_fuel) / dp_result.metrics.corrected_fuel_g - 1.0) << '\n';
      close_out(out, p);
    }
    {
      const auto p = result.run_dir / "timing.txt";
      auto out = open_out(p);
      out << "# wall time covers environment stepping and network updates only; file I/O excluded\n";
      for (const auto& s : result.seeds) {
        out << "seed." << s.seed << ".ddpg_tl.wall_s = " << g17(s.tl.wall_s) << '\n'
            << "seed." << s.seed << ".ddpg.wall_s = " << g17(s.scratch.wall_s) << '\n';
      }
      out << "median.ddpg_tl.wall_s = " << g17(median(tl_wall)) << '\n'
          << "median.ddpg.wall_s = " << g17(median(sc_wall)) << '\n';
      close_out(out, p);
    }
  });
  return result;
}

}  // namespace ems::harness
