#pragma once

// Finite-horizon backward induction over a SOC grid and an engine-power
// action grid. Stage cost is the negated environment reward; the terminal
// cost is the same SOC-deficit penalty applied to the final SOC.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ems/cycles.hpp"
#include "ems/env.hpp"

namespace ems::dp {

enum class ValueInterpolation {
  linear,   // next-stage value interpolated between the two enclosing SOC nodes
  nearest,  // next SOC snapped to the nearest node
};

struct DpGrid {
  std::vector<double> soc_points;
  std::vector<double> action_points;  // engine power, W

  static DpGrid uniform(double soc_min, double soc_max, std::size_t soc_nodes, double power_max,
                        std::size_t action_nodes);
  void validate(const powertrain::BatteryParams& battery, double power_max) const;
};

struct DpSolution {
  DpGrid grid;
  ValueInterpolation interpolation = ValueInterpolation::linear;
  std::size_t stages = 0;
  // policy[k * nodes + i]: best action index, -1 where no action is feasible.
  std::vector<std::int32_t> policy;
  // cost_to_go[k * nodes + i] for k in [0, stages]; +inf where infeasible.
  std::vector<double> cost_to_go;
  std::vector<std::uint8_t> feasible;
  double soc0 = 0.0;
  double total_cost = 0.0;  // optimal cost from soc0 at stage 0

  std::size_t nodes() const { return grid.soc_points.size(); }
  double value(std::size_t k, std::size_t i) const { return cost_to_go[k * nodes() + i]; }
  std::int32_t action(std::size_t k, std::size_t i) const { return policy[k * nodes() + i]; }
  // Index of the SOC node nearest to soc.
  std::size_t nearest_node(double soc) const;
  // Next-stage value at an off-grid SOC under the solution's interpolation rule.
  double interpolate(std::size_t k, double soc) const;
};

struct DpOptions {
  ValueInterpolation interpolation = ValueInterpolation::linear;
};

// Throws when no action sequence from soc0 is feasible.
DpSolution solve(const cycles::DrivingCycle& cycle, const DpGrid& grid, const env::Dynamics& dyn,
                 double soc0, DpOptions options = {});

// Greedy execution of the stored policy using the nearest node's action.
// Throws if the trajectory reaches an infeasible node.
env::Trajectory rollout(const DpSolution& sol, const cycles::DrivingCycle& cycle,
                        const env::Dynamics& dyn, double soc0);

}  // namespace ems::dp
