#include <doctest.h>

#include <cmath>

#include "ems/powertrain.hpp"
#include "support.hpp"

using namespace ems;
using namespace ems::powertrain;
using doctest::Approx;

TEST_CASE("demand power: rest, straight, turning") {
  const VehicleParams p;
  CHECK(demand_power(0, 0, 0, p) == 0.0);
  // F_i = 0.9*3.4*36^2/21.15, F_mu = 0.0494*2500*9.81
  const double fi = 0.9 * 3.4 * 36.0 * 36.0 / 21.15;
  const double fmu = 0.0494 * 2500.0 * 9.81;
  CHECK(demand_power(10, 10, 0, p) == Approx((fi + fmu) * 10.0).epsilon(1e-12));
  CHECK(demand_power(10, 10, 0, p) == Approx(13990).epsilon(1e-3));
  CHECK(demand_power(12, 8, 0, p) == Approx(30251).epsilon(2e-4));
  // acceleration adds m a v
  CHECK(demand_power(10, 10, 1.0, p) - demand_power(10, 10, 0, p) == Approx(2500.0 * 10.0));
}

TEST_CASE("steering moment") {
  const VehicleParams p;
  CHECK(steering_moment(10, 0, p) == 0.0);
  const double pivot = 0.25 * (0.8 / 0.925) * 2500 * 9.81 * 1.53;
  CHECK(steering_moment(0, 1, p) == Approx(pivot).epsilon(1e-12));
  CHECK(steering_moment(0, 1, p) == Approx(8114).epsilon(1e-3));
  CHECK(steering_moment(10, 2.8169, p) == Approx(5773).epsilon(5e-4));
  // symmetric in the turn direction
  CHECK(steering_moment(10, -2.0, p) == Approx(steering_moment(10, 2.0, p)));
}

TEST_CASE("gridded map: nodes, cell centres, clamping") {
  const GriddedMap m({0, 1, 2}, {0, 10}, {1, 2, 3, 4, 5, 6});
  CHECK(m.lookup(1, 10) == 4.0);
  CHECK(map_lookup(m, 0.5, 5) == Approx((1 + 2 + 3 + 4) / 4.0));
  CHECK(m.lookup(7, 10) == 6.0);
  CHECK(m.lookup(-1, -5) == 1.0);
  CHECK_THROWS(GriddedMap({0, 0}, {0, 1}, {1, 2, 3, 4}));
  CHECK_THROWS(GriddedMap({0, 1}, {0, 1}, {1, 2, 3}));
}

TEST_CASE("gridded map: property - lookup stays within the corner values") {
  test::Gen gen(3);
  for (int t = 0; t < 200; ++t) {
    const std::size_t nx = gen.integer(2, 6), ny = gen.integer(2, 6);
    std::vector<double> xs, ys;
    double x = gen.real(-5, 5), y = gen.real(-5, 5);
    for (std::size_t i = 0; i < nx; ++i) xs.push_back(x += gen.real(0.1, 2));
    for (std::size_t j = 0; j < ny; ++j) ys.push_back(y += gen.real(0.1, 2));
    const auto vals = gen.reals(nx * ny, -10, 10);
    const GriddedMap m(xs, ys, vals);
    const double qx = gen.real(xs.front() - 1, xs.back() + 1), qy = gen.real(ys.front() - 1, ys.back() + 1);
    const double v = m.lookup(qx, qy);
    CHECK(v >= m.min_value() - 1e-12);
    CHECK(v <= m.max_value() + 1e-12);
  }
}

TEST_CASE("optimal operating point") {
  const auto pt = Powertrain::defaults();
  const auto& e = pt.egs;
  const auto zero = optimal_operating_point(0.0, pt.bsfc_map, e);
  CHECK(zero.torque == 0.0);
  CHECK(zero.speed == e.engine_speed_min);

  const auto top = optimal_operating_point(e.max_engine_power(), pt.bsfc_map, e);
  CHECK(top.torque == Approx(e.engine_torque_max));
  CHECK(top.speed == Approx(e.engine_speed_max));

  // brute-force scan over the iso-power curve at 10x the resolution
  const double p = 20e3;
  const auto op = optimal_operating_point(p, pt.bsfc_map, e, 801);
  CHECK(op.torque * op.speed == Approx(p).epsilon(1e-9));
  double best = 1e300;
  for (int k = 0; k <= 8000; ++k) {
    const double n = e.engine_speed_min + (e.engine_speed_max - e.engine_speed_min) * k / 8000.0;
    const double t = p / n;
    if (t > e.engine_torque_max) continue;
    best = std::min(best, pt.bsfc_map.lookup(t, n));
  }
  // the library samples 801 speeds, the oracle 8001; one coarse step moves the
  // paraboloid by well under 0.01 g/kWh
  CHECK(pt.bsfc_map.lookup(op.torque, op.speed) <= best + 1e-2);
  CHECK(pt.bsfc_map.lookup(op.torque, op.speed) >= best - 1e-9);
  CHECK_THROWS(optimal_operating_point(e.max_engine_power() * 1.01, pt.bsfc_map, e));
  CHECK_THROWS(optimal_operating_point(-1.0, pt.bsfc_map, e));
}

TEST_CASE("generator step") {
  const EgsParams e;
  PowertrainState s;
  s.omega_g = 100.0;
  const auto r = generator_step(s, 0.0, 50.0, 0.1, e);
  CHECK(r.voltage == Approx(78.27).epsilon(1e-4));
  CHECK(r.torque == Approx(39.14).epsilon(1e-4));
  CHECK(r.power == Approx(3913.6).epsilon(1e-4));

  const auto idle = generator_step(s, 30.0, 0.0, 0.1, e);
  CHECK(idle.torque == 0.0);
  CHECK(idle.power == 0.0);
  CHECK(idle.omega_g == Approx(100.0 + 0.1 * (30.0 / e.gear_ratio) / e.total_inertia()));

  // equilibrium current balances the engine torque
  const double te = 60.0;
  const double i = equilibrium_current(te, e);
  const auto eq = generator_step(s, te, i, 0.1, e);
  CHECK(eq.omega_g == Approx(s.omega_g).epsilon(1e-12));
}

TEST_CASE("battery step") {
  const BatteryParams b;
  CHECK(battery_step(0.7, 0.0, 1.0, b).soc == 0.7);
  const double drop = 0.7 - battery_step(0.7, 10e3, 1.0, b).soc;
  const double current = (320.0 - std::sqrt(98400.0)) / (2 * 0.1);
  CHECK(drop == Approx(current / (37.5 * 3600)).epsilon(1e-9));
  CHECK(drop == Approx(2.337e-4).epsilon(1e-3));
  CHECK_THROWS_AS(battery_step(0.7, 320.0 * 320.0 / 0.4 + 1, 1.0, b), InfeasiblePower);
  CHECK(battery_step(0.7, -10e3, 1.0, b).soc > 0.7);
}

TEST_CASE("battery power limits keep SOC in bounds") {
  const BatteryParams b;
  test::Gen gen(5);
  for (int t = 0; t < 200; ++t) {
    const double soc = gen.real(b.soc_min, b.soc_max);
    const auto lim = battery_power_limits(soc, 1.0, b);
    CHECK(lim.min <= lim.max);
    CHECK(battery_step(soc, lim.max, 1.0, b).soc >= b.soc_min - 1e-12);
    CHECK(battery_step(soc, lim.min, 1.0, b).soc <= b.soc_max + 1e-12);
  }
}

TEST_CASE("power split and its forward form") {
  CHECK(split_power(0, 0, 0.92, 0.9) == 0.0);
  CHECK(split_power(20e3, 10e3, 0.92, 0.9) == Approx(13022.2).epsilon(1e-5));
  CHECK(split_power(-10e3, 0, 0.92, 0.9) == Approx(-9000));
  test::Gen gen(7);
  for (int t = 0; t < 500; ++t) {
    const double pr = gen.real(-60e3, 60e3), pg = gen.real(0, 80e3), em = gen.real(0.8, 0.95);
    const double pb = split_power(pr, pg, 0.92, em);
    CHECK(combine_power(pg, pb, 0.92, em) == Approx(pr).epsilon(1e-9).scale(1e3));
  }
}

TEST_CASE("default maps and parameters validate") {
  const auto pt = Powertrain::defaults();
  CHECK_NOTHROW(pt.validate());
  CHECK(pt.bsfc_map.min_value() == Approx(210.0).epsilon(0.02));
  CHECK(pt.egs.max_engine_power() == Approx(220.0 * 4000.0 * kRpmToRadPerSec));
  const double eta = motor_efficiency(pt.motor, pt.motor_map, 20e3, 10.0);
  CHECK(eta > 0.8);
  CHECK(eta <= 0.92 + 1e-12);
}
