#include <doctest.h>

#include <cmath>

#include "ems/env.hpp"
#include "ems/error.hpp"
#include "support.hpp"

using namespace ems;
using namespace ems::env;
using doctest::Approx;

namespace {

cycles::DrivingCycle constant(double v, std::size_t n) {
  cycles::DrivingCycle c;
  c.name = "const";
  c.v.assign(n, v);
  return c;
}

}  // namespace

TEST_CASE("reset") {
  const auto pt = powertrain::Powertrain::defaults();
  EmsEnv env(pt, EnvConfig{});
  auto c = constant(5.0, 10);
  c.v[0] = 3.0;
  const auto s = env.reset(c, 0.7);
  CHECK(s.v == 3.0);
  CHECK(s.a == 0.0);
  CHECK(s.soc == 0.7);
  const auto s2 = env.reset(c, 0.7);
  CHECK(s2.v == s.v);
  CHECK(s2.soc == s.soc);
  CHECK_THROWS(env.reset(c, 0.4));
  CHECK_THROWS(env.reset(c, 0.95));
}

TEST_CASE("step: reward branches and power split") {
  const auto pt = powertrain::Powertrain::defaults();
  EnvConfig cfg;
  EmsEnv env(pt, cfg);
  const auto c = constant(10.0, 5);

  env.reset(c, 0.8);
  const auto r = env.step({30e3});
  REQUIRE(r.info.soc >= cfg.reward.soc_ref);
  CHECK(r.reward == -cfg.reward.alpha * r.info.fuel_g);

  env.reset(c, 0.8);
  const auto b = env.step({0.0});
  CHECK(b.info.fuel_g == 0.0);
  CHECK(b.info.demand > 0.0);
  CHECK(b.info.battery_power == Approx(b.info.demand / b.info.motor_efficiency).epsilon(1e-12));

  // below the reference the squared deficit is charged
  env.reset(c, 0.55);
  const auto d = env.step({0.0});
  const double def = cfg.reward.soc_ref - d.info.soc;
  CHECK(d.reward == Approx(-(cfg.reward.alpha * d.info.fuel_g + cfg.reward.beta * def * def)).epsilon(1e-12));
}

TEST_CASE("step: termination and rejection") {
  const auto pt = powertrain::Powertrain::defaults();
  EmsEnv env(pt, EnvConfig{});
  const auto c = constant(10.0, 3);
  env.reset(c, 0.7);
  CHECK_FALSE(env.step({10e3}).done);
  CHECK_FALSE(env.step({10e3}).done);
  CHECK(env.step({10e3}).done);
  CHECK(env.done());
  CHECK_THROWS(env.step({10e3}));
}

TEST_CASE("step: property - limits hold for arbitrary requests") {
  const auto pt = powertrain::Powertrain::defaults();
  EnvConfig cfg;
  EmsEnv env(pt, cfg);
  test::Gen gen(21);
  const auto& e = pt.egs;
  for (int t = 0; t < 20; ++t) {
    const auto c = gen.cycle(100, cycles::kMaxSpeed * 0.9, gen.coin());
    env.reset(c, gen.real(0.5, 0.9));
    while (!env.done()) {
      const auto out = env.step({gen.real(-50e3, 150e3)});
      const auto& i = out.info;
      if (i.infeasible) break;
      CHECK(i.engine_power >= 0.0);
      CHECK(i.engine_power <= e.max_engine_power() * (1 + 1e-12));
      CHECK(i.engine_torque <= e.engine_torque_max + 1e-9);
      CHECK(i.soc >= pt.battery.soc_min - 1e-12);
      CHECK(i.soc <= pt.battery.soc_max + 1e-12);
      CHECK(i.demand >= cfg.demand_min);
      CHECK(i.demand <= cfg.demand_max);
      CHECK(std::isfinite(out.reward));
      // delivered power is reproduced by the forward split
      CHECK(powertrain::combine_power(i.generator_power, i.battery_power, e.generator_efficiency,
                                      i.motor_efficiency) == Approx(i.demand).epsilon(1e-9).scale(1e3));
    }
  }
}

TEST_CASE("normalize round trip") {
  const auto pt = powertrain::Powertrain::defaults();
  EnvConfig cfg;
  test::Gen gen(4);
  for (int t = 0; t < 100; ++t) {
    const EmsState s{gen.real(0, cycles::kMaxSpeed), gen.real(-2.9, 2.9), gen.real(0.5, 0.9)};
    const auto n = normalize(s, cfg, pt.battery);
    for (double x : n) {
      CHECK(x >= -1.0);
      CHECK(x <= 1.0);
    }
    const auto back = denormalize(n, cfg, pt.battery);
    CHECK(back.v == Approx(s.v));
    CHECK(back.a == Approx(s.a));
    CHECK(back.soc == Approx(s.soc));
  }
}

TEST_CASE("episode return") {
  CHECK(episode_return(std::vector<double>{0, 0, 0}, 0.9) == 0.0);
  CHECK(episode_return(std::vector<double>{2, 5, 7}, 0.0) == 2.0);
  CHECK(episode_return(std::vector<double>{1, 1, 1}, 0.5) == 1.75);
}

TEST_CASE("run_policy is deterministic") {
  const auto pt = powertrain::Powertrain::defaults();
  EmsEnv env(pt, EnvConfig{});
  test::Gen gen(8);
  const auto c = gen.cycle(80, 25.0);
  const PowerPolicy pol = [](const EmsState& s, std::size_t k) { return 1e3 * (k % 30) + 1e4 * s.v / 25.0; };
  const auto a = run_policy(env, c, 0.65, pol);
  const auto b = run_policy(env, c, 0.65, pol);
  REQUIRE(a.steps.size() == c.size());
  for (std::size_t k = 0; k < a.steps.size(); ++k) {
    CHECK(a.steps[k].info.soc == b.steps[k].info.soc);
    CHECK(a.steps[k].reward == b.steps[k].reward);
  }
  CHECK(a.total_fuel() == b.total_fuel());
}

TEST_CASE("zero-speed cycle with no engine power keeps SOC flat") {
  const auto pt = powertrain::Powertrain::defaults();
  EmsEnv env(pt, EnvConfig{});
  const auto t = run_policy(env, constant(0.0, 20), 0.7, [](const EmsState&, std::size_t) { return 0.0; });
  for (const auto& r : t.steps) CHECK(r.info.soc == 0.7);
  CHECK(t.total_fuel() == 0.0);
}
