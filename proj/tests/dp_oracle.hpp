#pragma once

// Brute-force reference for the DP solver, shared by the unit tests and the
// acceptance run.

#include <cmath>
#include <limits>

#include "ems/dp.hpp"

namespace ems::test {

// Small battery so that one step moves SOC across several grid nodes.
inline powertrain::Powertrain small_battery() {
  auto pt = powertrain::Powertrain::defaults();
  pt.battery.capacity_ah = 0.2;
  return pt;
}

inline cycles::DrivingCycle five_step() {
  cycles::DrivingCycle c;
  c.name = "five";
  c.v = {6.0, 11.0, 16.0, 12.0, 7.0};
  return c;
}

// min over all |A|^N action sequences, SOC snapped to the nearest node after
// every step exactly as the nearest-node value rule does.
inline double enumerate(const cycles::DrivingCycle& cycle, const dp::DpGrid& grid, const env::Dynamics& dyn,
                 double soc0) {
  const auto demand = env::cycle_demand(dyn, cycle);
  const std::size_t n = cycle.size(), na = grid.action_points.size();
  std::size_t total = 1;
  for (std::size_t k = 0; k < n; ++k) total *= na;
  auto snap = [&](double soc) {
    const auto& s = grid.soc_points;
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.size(); ++i)
      if (std::abs(s[i] - soc) < std::abs(s[best] - soc)) best = i;
    return s[best];
  };
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    double soc = soc0, cost = 0.0;
    bool ok = true;
    for (std::size_t k = 0; k < n && ok; ++k) {
      const double p = grid.action_points[c % na];
      c /= na;
      const auto info = dyn.apply(demand[k], soc, p, cycle.dt);
      if (info.infeasible) {
        ok = false;
        break;
      }
      cost += dyn.stage_cost(info.fuel_g, info.soc);
      soc = snap(info.soc);
    }
    if (ok) best = std::min(best, cost + dyn.terminal_cost(soc));
  }
  return best;
}

}  // namespace ems::test
