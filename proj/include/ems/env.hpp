#pragma once

// Episodic energy-management environment. State (v, a, SOC), action engine
// power, reward -[alpha fuel + beta dSOC^2], operating limits enforced by
// clamping the action before the dynamics run.

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ems/cycles.hpp"
#include "ems/powertrain.hpp"

namespace ems::env {

enum class EgsMode { quasi_static, dynamic };

struct RewardParams {
  double alpha = 1.0;
  double beta = 350.0;
  double soc_ref = 0.6;
};

struct EnvConfig {
  RewardParams reward;
  double soc0 = 0.65;
  double gamma = 0.95;
  EgsMode egs_mode = EgsMode::quasi_static;
  double infeasible_penalty = 1e3;
  double demand_min = -70e3;  // W, regenerative limit
  double demand_max = 70e3;   // W
  double accel_scale = 3.0;   // m/s^2 mapped to +-1
  std::size_t egs_substeps = 10;
  std::size_t operating_point_samples = 801;

  void validate(const powertrain::BatteryParams& battery) const;
};

struct EmsState {
  double v = 0.0;
  double a = 0.0;
  double soc = 0.0;
};

// v / v_max in [0, 1], a / accel_scale clipped to [-1, 1], SOC rescaled from
// [soc_min, soc_max] to [0, 1].
std::array<double, 3> normalize(const EmsState& s, const EnvConfig& cfg,
                                const powertrain::BatteryParams& battery);
EmsState denormalize(const std::array<double, 3>& n, const EnvConfig& cfg,
                     const powertrain::BatteryParams& battery);

struct EmsAction {
  double engine_power = 0.0;  // W
};

struct ClampFlags {
  bool action = false;          // request outside [0, P_e_max]
  bool soc_lower = false;       // raised to keep SOC >= soc_min
  bool soc_upper = false;       // lowered to keep SOC <= soc_max
  bool regen_limited = false;   // regeneration cut, friction brakes absorb the rest
  bool demand = false;          // demand outside [demand_min, demand_max]
  bool motor_speed = false;     // motor above its speed limit
  bool generator_speed = false;

  bool any() const {
    return action || soc_lower || soc_upper || regen_limited || demand || motor_speed ||
           generator_speed;
  }
};

struct StepInfo {
  double fuel_g = 0.0;
  double demand_raw = 0.0;      // W before limits
  double demand = 0.0;          // W delivered at the tracks
  double engine_request = 0.0;  // W as requested
  double engine_power = 0.0;    // W after clamping
  double engine_torque = 0.0;
  double engine_speed = 0.0;
  double generator_power = 0.0;
  double generator_speed = 0.0;
  double battery_power = 0.0;
  double motor_efficiency = 0.0;
  double soc = 0.0;             // SOC after the step
  ClampFlags flags;
  bool infeasible = false;
};

struct StepOutcome {
  EmsState next;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

// Exogenous demand for one cycle sample.
struct StageDemand {
  double speed = 0.0;
  double accel = 0.0;
  double demand_raw = 0.0;
  double demand = 0.0;
  double eta_m = 1.0;
  double bus_power = 0.0;  // electrical power the motors draw (negative when regenerating)
  bool demand_clamped = false;
  bool motor_overspeed = false;
};

struct EngineResult {
  double power = 0.0;
  double torque = 0.0;
  double speed = 0.0;
  double fuel_g = 0.0;
};

struct EngineWindow {
  double power = 0.0;  // clamped engine power
  ClampFlags flags;
  bool feasible = true;
};

// Deterministic single-sample powertrain transition (quasi-static EGS).
class Dynamics {
 public:
  Dynamics(powertrain::Powertrain pt, EnvConfig cfg);

  StageDemand demand(double v1, double v2, double accel) const;
  EngineWindow clamp_engine_power(const StageDemand& d, double soc, double request,
                                  double dt) const;
  EngineResult engine(double power, double dt) const;
  // Applies a clamped engine power; `engine` must be engine(window.power, dt).
  StepInfo complete(const StageDemand& d, double soc, const EngineWindow& window,
                    const EngineResult& engine, double dt) const;
  StepInfo apply(const StageDemand& d, double soc, double request, double dt) const;

  double reward(double fuel_g, double soc_next) const;
  double stage_cost(double fuel_g, double soc_next) const { return -reward(fuel_g, soc_next); }
  double terminal_cost(double soc) const;

  const powertrain::Powertrain& powertrain() const { return pt_; }
  const EnvConfig& config() const { return cfg_; }
  double max_engine_power() const { return pt_.egs.max_engine_power(); }

 private:
  powertrain::Powertrain pt_;
  EnvConfig cfg_;
};

class EmsEnv {
 public:
  EmsEnv(powertrain::Powertrain pt, EnvConfig cfg);

  EmsState reset(const cycles::DrivingCycle& cycle, double soc0);
  StepOutcome step(const EmsAction& action);

  bool done() const { return done_; }
  std::size_t index() const { return k_; }
  const cycles::DrivingCycle& cycle() const { return cycle_; }
  const Dynamics& dynamics() const { return dyn_; }
  const EmsState& state() const { return state_; }
  std::array<double, 3> observation() const;

 private:
  StepInfo dynamic_step(const StageDemand& d, double request);

  Dynamics dyn_;
  cycles::DrivingCycle cycle_;
  std::vector<double> accel_;
  std::vector<StageDemand> demand_;
  EmsState state_;
  powertrain::PowertrainState egs_state_;
  std::size_t k_ = 0;
  bool done_ = true;
};

struct TrajectoryRecord {
  std::size_t k = 0;
  double v = 0.0;
  double a = 0.0;
  double soc = 0.0;  // before the step
  double reward = 0.0;
  StepInfo info;
};

// One closed-loop pass over a cycle; the schema every method emits.
struct Trajectory {
  double soc0 = 0.0;
  double dt = 1.0;
  std::vector<TrajectoryRecord> steps;
  bool terminated_early = false;

  double total_fuel() const;
  double final_soc() const;
  double total_reward() const;
  // Accumulated stage cost plus the terminal SOC penalty.
  double total_cost(const Dynamics& dyn) const;
};

// Maps the current state and sample index to an engine power request in W.
using PowerPolicy = std::function<double(const EmsState&, std::size_t)>;

Trajectory run_policy(EmsEnv& env, const cycles::DrivingCycle& cycle, double soc0,
                      const PowerPolicy& policy);

// sum_t gamma^t r_{t+1}
double episode_return(std::span<const double> rewards, double gamma);

// Precomputed demand for every sample of a cycle.
std::vector<StageDemand> cycle_demand(const Dynamics& dyn, const cycles::DrivingCycle& cycle);

}  // namespace ems::env
