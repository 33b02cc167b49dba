#include "ems/env.hpp"

#include <algorithm>
#include <cmath>

#include "ems/error.hpp"

namespace ems::env {

using powertrain::BatteryParams;

namespace {

// Generator current per rad/s of speed error in dynamic EGS mode.
constexpr double kSpeedGain = 1.5;

}  // namespace

void EnvConfig::validate(const BatteryParams& battery) const {
  if (!(reward.alpha > 0.0) || !(reward.beta >= 0.0)) throw Error("reward weights must be positive");
  if (!(reward.soc_ref > battery.soc_min && reward.soc_ref < battery.soc_max))
    throw Error("soc_ref must lie strictly inside [soc_min, soc_max]");
  if (!(soc0 >= battery.soc_min && soc0 <= battery.soc_max)) throw Error("soc0 must lie inside [soc_min, soc_max]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  if (!(demand_min < 0.0 && demand_max > 0.0)) throw Error("demand limits must bracket zero");
  if (!(accel_scale > 0.0)) throw Error("accel_scale must be positive");
  if (egs_substeps == 0) throw Error("egs_substeps must be >= 1");
}

std::array<double, 3> normalize(const EmsState& s, const EnvConfig& cfg, const BatteryParams& b) {
  return {s.v / cycles::kMaxSpeed, std::clamp(s.a / cfg.accel_scale, -1.0, 1.0),
          (s.soc - b.soc_min) / (b.soc_max - b.soc_min)};
}

EmsState denormalize(const std::array<double, 3>& n, const EnvConfig& cfg, const BatteryParams& b) {
  return {n[0] * cycles::kMaxSpeed, n[1] * cfg.accel_scale, b.soc_min + n[2] * (b.soc_max - b.soc_min)};
}

Dynamics::Dynamics(powertrain::Powertrain pt, EnvConfig cfg) : pt_(std::move(pt)), cfg_(cfg) {
  pt_.validate();
  cfg_.validate(pt_.battery);
}

StageDemand Dynamics::demand(double v1, double v2, double accel) const {
  StageDemand d;
  d.speed = 0.5 * (v1 + v2);
  d.accel = accel;
  d.demand_raw = powertrain::demand_power(v1, v2, accel, pt_.vehicle);
  d.demand = std::clamp(d.demand_raw, cfg_.demand_min, cfg_.demand_max);
  d.demand_clamped = d.demand != d.demand_raw;
  d.eta_m = powertrain::motor_efficiency(pt_.motor, pt_.motor_map, d.demand, d.speed);
  d.bus_power = d.demand >= 0.0 ? d.demand / d.eta_m : d.demand * d.eta_m;
  d.motor_overspeed = pt_.motor.use_map && powertrain::motor_speed(pt_.motor, d.speed) > pt_.motor.speed_max;
  return d;
}

EngineWindow Dynamics::clamp_engine_power(const StageDemand& d, double soc, double request,
                                          double dt) const {
  if (!std::isfinite(request)) throw Error("engine power request must be finite");
  EngineWindow w;
  w.flags.demand = d.demand_clamped;
  w.flags.motor_speed = d.motor_overspeed;
  const double p_max = max_engine_power();
  double p = request;
  if (p < 0.0 || p > p_max) {
    w.flags.action = true;
    p = std::clamp(p, 0.0, p_max);
  }
  const auto limits = powertrain::battery_power_limits(soc, dt, pt_.battery);
  const double eta_g = pt_.egs.generator_efficiency;
  const double lo = (d.bus_power - limits.max) / eta_g;
  const double hi = (d.bus_power - limits.min) / eta_g;
  if (lo > p_max) {
    w.power = p_max;
    w.flags.soc_lower = true;
    w.feasible = false;
    return w;
  }
  if (hi < 0.0) {
    w.flags.soc_upper = p > 0.0;
    w.flags.regen_limited = true;
    w.power = 0.0;
    return w;
  }
  if (p < lo) {
    p = lo;
    w.flags.soc_lower = true;
  } else if (p > hi) {
    p = hi;
    w.flags.soc_upper = true;
  }
  w.power = p;
  return w;
}

EngineResult Dynamics::engine(double power, double dt) const {
  EngineResult e;
  e.power = power;
  const auto op = powertrain::optimal_operating_point(power, pt_.bsfc_map, pt_.egs,
                                                      cfg_.operating_point_samples);
  e.torque = op.torque;
  e.speed = op.speed;
  e.fuel_g = power > 0.0 ? powertrain::fuel_rate(pt_.bsfc_map.lookup(op.torque, op.speed), power) * dt : 0.0;
  return e;
}

StepInfo Dynamics::complete(const StageDemand& d, double soc, const EngineWindow& window,
                            const EngineResult& eng, double dt) const {
  const auto& bat = pt_.battery;
  StepInfo info;
  info.flags = window.flags;
  info.demand_raw = d.demand_raw;
  info.demand = d.demand;
  info.engine_power = eng.power;
  info.engine_torque = eng.torque;
  info.engine_speed = eng.speed;
  info.generator_power = eng.power;
  info.generator_speed = eng.speed * pt_.egs.gear_ratio;
  info.motor_efficiency = d.eta_m;
  info.fuel_g = eng.fuel_g;

  const double eta_g = pt_.egs.generator_efficiency;
  double pb = powertrain::split_power(d.demand, info.generator_power, eta_g, d.eta_m);
  const auto limits = powertrain::battery_power_limits(soc, dt, bat);
  if (pb < limits.min) {
    pb = limits.min;
    info.flags.regen_limited = true;
    info.demand = powertrain::combine_power(info.generator_power, pb, eta_g, d.eta_m);
  }
  info.battery_power = pb;
  info.infeasible = !window.feasible;
  double next = soc;
  try {
    next = powertrain::battery_step(soc, pb, dt, bat).soc;
  } catch (const powertrain::InfeasiblePower&) {
    info.infeasible = true;
  }
  // Clamped powers land on the SOC bounds up to rounding.
  if (next < bat.soc_min - 1e-9 || next > bat.soc_max + 1e-9) info.infeasible = true;
  next = std::clamp(next, bat.soc_min, bat.soc_max);
  info.soc = next;
  return info;
}

StepInfo Dynamics::apply(const StageDemand& d, double soc, double request, double dt) const {
  const auto w = clamp_engine_power(d, soc, request, dt);
  auto info = complete(d, soc, w, engine(w.power, dt), dt);
  info.engine_request = request;
  return info;
}

double Dynamics::reward(double fuel_g, double soc_next) const {
  const double deficit = std::max(0.0, cfg_.reward.soc_ref - soc_next);
  return -(cfg_.reward.alpha * fuel_g + cfg_.reward.beta * deficit * deficit);
}

double Dynamics::terminal_cost(double soc) const {
  const double deficit = std::max(0.0, cfg_.reward.soc_ref - soc);
  return cfg_.reward.beta * deficit * deficit;
}

std::vector<StageDemand> cycle_demand(const Dynamics& dyn, const cycles::DrivingCycle& cycle) {
  const auto accel = cycles::derive_accel(cycle);
  std::vector<StageDemand> out;
  out.reserve(cycle.size());
  for (std::size_t k = 0; k < cycle.size(); ++k)
    out.push_back(dyn.demand(cycle.track1(k), cycle.track2(k), accel[k]));
  return out;
}

EmsEnv::EmsEnv(powertrain::Powertrain pt, EnvConfig cfg) : dyn_(std::move(pt), cfg) {}

EmsState EmsEnv::reset(const cycles::DrivingCycle& cycle, double soc0) {
  const auto& bat = dyn_.powertrain().battery;
  if (!(soc0 >= bat.soc_min && soc0 <= bat.soc_max))
    throw Error("initial SOC " + std::to_string(soc0) + " outside [" + std::to_string(bat.soc_min) +
                ", " + std::to_string(bat.soc_max) + "]");
  cycle.validate();
  cycle_ = cycle;
  accel_ = cycles::derive_accel(cycle_);
  demand_ = cycle_demand(dyn_, cycle_);
  k_ = 0;
  done_ = false;
  state_ = {cycle_.v[0], accel_[0], soc0};
  egs_state_ = {dyn_.powertrain().egs.engine_speed_min * dyn_.powertrain().egs.gear_ratio, soc0, 0.0};
  return state_;
}

std::array<double, 3> EmsEnv::observation() const {
  return normalize(state_, dyn_.config(), dyn_.powertrain().battery);
}

StepInfo EmsEnv::dynamic_step(const StageDemand& d, double request) {
  const auto& pt = dyn_.powertrain();
  const auto& egs = pt.egs;
  const double dt = cycle_.dt;
  const auto w = dyn_.clamp_engine_power(d, state_.soc, request, dt);
  const auto op = powertrain::optimal_operating_point(w.power, pt.bsfc_map, egs,
                                                      dyn_.config().operating_point_samples);
  const double target = op.speed * egs.gear_ratio;
  const double base_current = w.power > 0.0 ? powertrain::equilibrium_current(op.torque, egs) : 0.0;
  const std::size_t n = dyn_.config().egs_substeps;
  const double h = dt / static_cast<double>(n);

  EngineResult eng;
  eng.torque = op.torque;
  double energy = 0.0;
  bool overspeed = false;
  for (std::size_t s = 0; s < n; ++s) {
    const double current = std::max(0.0, base_current + kSpeedGain * (egs_state_.omega_g - target));
    const auto g = powertrain::generator_step(egs_state_, op.torque, current, h, egs);
    const double n_eg = egs_state_.omega_g / egs.gear_ratio;
    const double shaft = op.torque * n_eg;
    if (shaft > 0.0)
      eng.fuel_g += powertrain::fuel_rate(pt.bsfc_map.lookup(op.torque, n_eg), shaft) * h;
    energy += g.power * h;
    overspeed = overspeed || g.speed_violation;
    egs_state_.omega_g = std::clamp(g.omega_g, egs.generator_speed_min, egs.generator_speed_max);
  }
  egs_state_.t += dt;
  eng.speed = egs_state_.omega_g / egs.gear_ratio;
  eng.power = energy / dt;

  auto window = w;
  window.power = eng.power;
  auto info = dyn_.complete(d, state_.soc, window, eng, dt);
  info.engine_request = request;
  info.engine_power = w.power;
  info.generator_power = eng.power;
  info.generator_speed = egs_state_.omega_g;
  info.flags.generator_speed = overspeed;
  // Generator output can overshoot the SOC window; the battery absorbs it
  // only up to its limit.
  const auto limits = powertrain::battery_power_limits(state_.soc, dt, pt.battery);
  if (info.battery_power > limits.max && !info.infeasible) {
    info.battery_power = limits.max;
    info.flags.soc_lower = true;
    info.demand = powertrain::combine_power(eng.power, limits.max, egs.generator_efficiency, d.eta_m);
    info.soc = std::clamp(powertrain::battery_step(state_.soc, limits.max, dt, pt.battery).soc,
                          pt.battery.soc_min, pt.battery.soc_max);
  }
  return info;
}

StepOutcome EmsEnv::step(const EmsAction& action) {
  if (done_) throw Error("step called on a finished episode");
  const auto& d = demand_[k_];
  StepOutcome out;
  out.info = dyn_.config().egs_mode == EgsMode::quasi_static
                 ? dyn_.apply(d, state_.soc, action.engine_power, cycle_.dt)
                 : dynamic_step(d, action.engine_power);
  out.reward = out.info.infeasible ? -dyn_.config().infeasible_penalty
                                   : dyn_.reward(out.info.fuel_g, out.info.soc);
  ++k_;
  done_ = k_ == cycle_.size() || out.info.infeasible;
  const std::size_t next = std::min(k_, cycle_.size() - 1);
  state_ = {cycle_.v[next], accel_[next], out.info.soc};
  out.next = state_;
  out.done = done_;
  return out;
}

double episode_return(std::span<const double> rewards, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

}  // namespace ems::env

namespace ems::env {

double Trajectory::total_fuel() const {
  double f = 0.0;
  for (const auto& s : steps) f += s.info.fuel_g;
  return f;
}

double Trajectory::final_soc() const { return steps.empty() ? soc0 : steps.back().info.soc; }

double Trajectory::total_reward() const {
  double r = 0.0;
  for (const auto& s : steps) r += s.reward;
  return r;
}

double Trajectory::total_cost(const Dynamics& dyn) const {
  return -total_reward() + dyn.terminal_cost(final_soc());
}

Trajectory run_policy(EmsEnv& env, const cycles::DrivingCycle& cycle, double soc0,
                      const PowerPolicy& policy) {
  Trajectory traj;
  traj.soc0 = soc0;
  traj.dt = cycle.dt;
  auto state = env.reset(cycle, soc0);
  traj.steps.reserve(cycle.size());
  while (!env.done()) {
    const std::size_t k = env.index();
    const auto out = env.step({policy(state, k)});
    traj.steps.push_back({k, state.v, state.a, state.soc, out.reward, out.info});
    if (out.info.infeasible) traj.terminated_early = true;
    state = out.next;
  }
  return traj;
}

}  // namespace ems::env
