#pragma once

// Metrics, constraint audits, trace emission and the DP / DDPG+TL / common
// DDPG comparison.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ems/agents.hpp"
#include "ems/config.hpp"
#include "ems/cycles.hpp"
#include "ems/env.hpp"

namespace ems::harness {

struct FuelMetrics {
  double fuel_g = 0.0;
  double distance_m = 0.0;
  double l_per_100km = 0.0;
  double final_soc = 0.0;
  double soc_deficit_wh = 0.0;  // max(0, SOC_r - SOC_final) C_b V_oc
  double corrected_fuel_g = 0.0;
  double corrected_l_per_100km = 0.0;
};

// L/100km = (fuel / density) / distance_km * 100. The SOC-corrected figure
// adds the final deficit below soc_ref priced at g_per_wh. Throws for a
// zero-distance cycle or an incomplete trajectory.
FuelMetrics compute_fuel_metrics(const env::Trajectory& traj, const cycles::DrivingCycle& cycle,
                                 double density_g_per_l, double soc_ref, const powertrain::BatteryParams& battery,
                                 double g_per_wh);

// Best BSFC of the engine map, g/Wh.
double default_soc_correction(const powertrain::Powertrain& pt);

struct Violation {
  std::size_t k = 0;
  std::string what;
};

// Sample-by-sample audit of the operating limits and SOC window.
std::vector<Violation> check_constraints(const env::Trajectory& traj, const powertrain::Powertrain& pt,
                                         const env::EnvConfig& cfg);

// Writes soc_trace.csv, power_split.csv and engine_points.csv (and
// train_curves.csv when `curves` is non-empty). Throws if any sample
// violates the operating limits.
void emit_traces(const std::filesystem::path& dir, const env::Trajectory& traj, const env::Dynamics& dyn,
                 const std::string& config_hash, const std::vector<agents::EpisodeStats>& curves = {});

// Per-episode log: episode, return, mean_abs_td_error, fuel_g, final_soc, wall_ms.
void write_train_log(const std::filesystem::path& path, const std::vector<agents::EpisodeStats>& log,
                     const std::string& config_hash);

struct MethodResult {
  std::string method;  // "dp", "ddpg_tl", "ddpg"
  std::uint64_t seed = 0;
  FuelMetrics metrics;
  double total_reward = 0.0;
  std::size_t episodes = 0;
  bool converged = false;
  double wall_s = 0.0;
  std::size_t violations = 0;
  std::vector<agents::EpisodeStats> curves;
};

struct SeedResult {
  std::uint64_t seed = 0;
  MethodResult dp, tl, scratch;
  bool hidden_unchanged = false;
  std::vector<transfer::TransferReport> reports;
  std::vector<cycles::SpeedInterval> fallbacks;
};

struct CompareResult {
  std::string config_hash;
  std::filesystem::path run_dir;
  std::vector<SeedResult> seeds;
};

// Runs DP, DDPG+TL (pretraining on the training cycles, then output-layer
// retraining on the target) and from-scratch DDPG for every seed, writing
// run_dir/{summary.txt, comparison.csv, timing.txt} and per-seed, per-method
// traces. A failing stage aborts with its name in the error.
CompareResult run_compare(const config::ExperimentConfig& cfg);

double median(std::vector<double> xs);

}  // namespace ems::harness
