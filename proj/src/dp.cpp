#include "ems/dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ems/error.hpp"

namespace ems::dp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool strictly_increasing(const std::vector<double>& a) {
  for (std::size_t k = 1; k < a.size(); ++k)
    if (!(a[k] > a[k - 1])) return false;
  return true;
}

// Engine evaluations for the two clamped powers a node can produce.
struct ClampCache {
  double power[2] = {-1.0, -1.0};
  env::EngineResult result[2];
  int next = 0;

  const env::EngineResult& get(const env::Dynamics& dyn, double p, double dt) {
    for (int s = 0; s < 2; ++s)
      if (power[s] == p) return result[s];
    const int s = next;
    next ^= 1;
    power[s] = p;
    result[s] = dyn.engine(p, dt);
    return result[s];
  }
};

struct Choice {
  double cost = kInf;
  std::int32_t action = -1;
};

Choice best_action(const DpSolution& sol, std::size_t k, double soc, const env::StageDemand& d,
                   const env::Dynamics& dyn, const std::vector<env::EngineResult>& grid_engine,
                   double dt) {
  const auto& actions = sol.grid.action_points;
  ClampCache cache;
  Choice best;
  for (std::size_t a = 0; a < actions.size(); ++a) {
    const auto w = dyn.clamp_engine_power(d, soc, actions[a], dt);
    const auto& eng = w.power == actions[a] ? grid_engine[a] : cache.get(dyn, w.power, dt);
    const auto info = dyn.complete(d, soc, w, eng, dt);
    if (info.infeasible) continue;
    const double future = sol.interpolate(k + 1, info.soc);
    if (!std::isfinite(future)) continue;
    const double c = dyn.stage_cost(info.fuel_g, info.soc) + future;
    if (c < best.cost) best = {c, static_cast<std::int32_t>(a)};
  }
  return best;
}

}  // namespace

DpGrid DpGrid::uniform(double soc_min, double soc_max, std::size_t soc_nodes, double power_max,
                       std::size_t action_nodes) {
  if (soc_nodes < 2 || action_nodes < 2) throw Error("DP grid needs at least 2 points per axis");
  DpGrid g;
  for (std::size_t i = 0; i < soc_nodes; ++i)
    g.soc_points.push_back(i + 1 == soc_nodes ? soc_max
                                              : soc_min + (soc_max - soc_min) * static_cast<double>(i) /
                                                              static_cast<double>(soc_nodes - 1));
  for (std::size_t a = 0; a < action_nodes; ++a)
    g.action_points.push_back(a + 1 == action_nodes ? power_max
                                                    : power_max * static_cast<double>(a) /
                                                          static_cast<double>(action_nodes - 1));
  return g;
}

void DpGrid::validate(const powertrain::BatteryParams& battery, double power_max) const {
  if (soc_points.size() < 2 || action_points.size() < 2)
    throw Error("DP grid needs at least 2 points per axis");
  if (!strictly_increasing(soc_points) || !strictly_increasing(action_points))
    throw Error("DP grid axes must be strictly increasing");
  if (soc_points.front() < battery.soc_min || soc_points.back() > battery.soc_max)
    throw Error("DP SOC grid must lie within [soc_min, soc_max]");
  if (action_points.front() < 0.0 || action_points.back() > power_max)
    throw Error("DP action grid must lie within [0, P_e_max]");
}

std::size_t DpSolution::nearest_node(double soc) const {
  const auto& s = grid.soc_points;
  if (soc <= s.front()) return 0;
  if (soc >= s.back()) return s.size() - 1;
  const auto it = std::upper_bound(s.begin(), s.end(), soc);
  const std::size_t hi = static_cast<std::size_t>(it - s.begin());
  const std::size_t lo = hi - 1;
  return (soc - s[lo]) <= (s[hi] - soc) ? lo : hi;
}

double DpSolution::interpolate(std::size_t k, double soc) const {
  if (interpolation == ValueInterpolation::nearest) return value(k, nearest_node(soc));
  const auto& s = grid.soc_points;
  if (soc <= s.front()) return value(k, 0);
  if (soc >= s.back()) return value(k, s.size() - 1);
  const auto it = std::upper_bound(s.begin(), s.end(), soc);
  const std::size_t hi = static_cast<std::size_t>(it - s.begin());
  const std::size_t lo = hi - 1;
  const double w = (soc - s[lo]) / (s[hi] - s[lo]);
  const double a = value(k, lo);
  const double b = value(k, hi);
  if (w == 0.0) return a;
  if (!std::isfinite(a) || !std::isfinite(b)) return kInf;
  return (1.0 - w) * a + w * b;
}

DpSolution solve(const cycles::DrivingCycle& cycle, const DpGrid& grid, const env::Dynamics& dyn,
                 double soc0, DpOptions options) {
  cycle.validate();
  grid.validate(dyn.powertrain().battery, dyn.max_engine_power());
  const auto& bat = dyn.powertrain().battery;
  if (!(soc0 >= bat.soc_min && soc0 <= bat.soc_max)) throw Error("initial SOC outside bounds");

  DpSolution sol;
  sol.grid = grid;
  sol.interpolation = options.interpolation;
  sol.stages = cycle.size();
  sol.soc0 = soc0;
  const std::size_t n = grid.soc_points.size();
  const std::size_t stages = sol.stages;
  sol.policy.assign(stages * n, -1);
  sol.cost_to_go.assign((stages + 1) * n, kInf);
  sol.feasible.assign((stages + 1) * n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    sol.cost_to_go[stages * n + i] = dyn.terminal_cost(grid.soc_points[i]);
    sol.feasible[stages * n + i] = 1;
  }

  const double dt = cycle.dt;
  const auto demand = env::cycle_demand(dyn, cycle);
  std::vector<env::EngineResult> grid_engine;
  grid_engine.reserve(grid.action_points.size());
  for (double p : grid.action_points) grid_engine.push_back(dyn.engine(p, dt));

  for (std::size_t k = stages; k-- > 0;) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = best_action(sol, k, grid.soc_points[i], demand[k], dyn, grid_engine, dt);
      sol.cost_to_go[k * n + i] = c.cost;
      sol.policy[k * n + i] = c.action;
      sol.feasible[k * n + i] = c.action >= 0 ? 1 : 0;
    }
  }

  const auto start = best_action(sol, 0, soc0, demand[0], dyn, grid_engine, dt);
  if (start.action < 0) throw Error("no feasible action sequence from the initial SOC");
  sol.total_cost = start.cost;
  return sol;
}

env::Trajectory rollout(const DpSolution& sol, const cycles::DrivingCycle& cycle,
                        const env::Dynamics& dyn, double soc0) {
  if (cycle.size() != sol.stages) throw Error("DP solution and cycle lengths differ");
  const auto& s = sol.grid.soc_points;
  if (soc0 < s.front() || soc0 > s.back()) throw Error("initial SOC outside the DP grid");
  env::EmsEnv env(dyn.powertrain(), dyn.config());
  auto traj = env::run_policy(env, cycle, soc0, [&](const env::EmsState& st, std::size_t k) {
    const auto a = sol.action(k, sol.nearest_node(st.soc));
    if (a < 0) throw Error("DP rollout entered an infeasible node at stage " + std::to_string(k));
    return sol.grid.action_points[static_cast<std::size_t>(a)];
  });
  if (traj.terminated_early) throw Error("DP rollout hit an infeasible battery power");
  return traj;
}

}  // namespace ems::dp
