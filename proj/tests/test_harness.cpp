#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ems/error.hpp"
#include "ems/harness.hpp"
#include "support.hpp"

using namespace ems;
using namespace ems::harness;
using doctest::Approx;

namespace {

// `n` samples at `v` m/s with `fuel` g each, SOC falling linearly to soc_end.
env::Trajectory flat_trajectory(std::size_t n, double v, double fuel, double soc0, double soc_end) {
  env::Trajectory t;
  t.soc0 = soc0;
  for (std::size_t k = 0; k < n; ++k) {
    env::TrajectoryRecord r;
    r.k = k;
    r.v = v;
    r.soc = soc0 + (soc_end - soc0) * static_cast<double>(k) / n;
    r.info.fuel_g = fuel;
    r.info.soc = soc0 + (soc_end - soc0) * static_cast<double>(k + 1) / n;
    t.steps.push_back(r);
  }
  return t;
}

cycles::DrivingCycle constant(double v, std::size_t n) {
  cycles::DrivingCycle c;
  c.name = "const";
  c.v.assign(n, v);
  return c;
}

std::vector<std::vector<double>> read_csv(const std::filesystem::path& p) {
  std::istringstream in(test::slurp(p));
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("fuel metrics: hand-computed examples") {
  const auto pt = powertrain::Powertrain::defaults();
  // 100 samples at 10 m/s = 1 km, 1 g per sample = 100 g
  const auto c = constant(10.0, 100);
  const auto t = flat_trajectory(100, 10.0, 1.0, 0.65, 0.62);
  const auto m = compute_fuel_metrics(t, c, 850.0, 0.6, pt.battery, 0.21);
  CHECK(m.distance_m == Approx(1000.0));
  CHECK(m.fuel_g == Approx(100.0));
  CHECK(m.l_per_100km == Approx(100.0 / 850.0 * 100.0));  // 11.76
  CHECK(m.l_per_100km == Approx(11.7647).epsilon(1e-4));
  // no deficit above the reference
  CHECK(m.soc_deficit_wh == 0.0);
  CHECK(m.corrected_fuel_g == m.fuel_g);

  const auto low = flat_trajectory(100, 10.0, 1.0, 0.65, 0.55);
  const auto d = compute_fuel_metrics(low, c, 850.0, 0.6, pt.battery, 0.21);
  const double wh = 0.05 * pt.battery.capacity_ah * pt.battery.open_circuit_voltage;
  CHECK(d.soc_deficit_wh == Approx(wh));
  CHECK(d.corrected_fuel_g == Approx(100.0 + 0.21 * wh));
  CHECK(d.corrected_l_per_100km == Approx(d.corrected_fuel_g / 850.0 * 100.0));

  CHECK_THROWS(compute_fuel_metrics(t, constant(0.0, 100), 850.0, 0.6, pt.battery, 0.21));
  CHECK_THROWS(compute_fuel_metrics(flat_trajectory(50, 10, 1, 0.65, 0.6), c, 850.0, 0.6, pt.battery, 0.21));
  CHECK_THROWS(compute_fuel_metrics(t, c, 0.0, 0.6, pt.battery, 0.21));

  CHECK(default_soc_correction(pt) == Approx(pt.bsfc_map.min_value() / 1000.0));
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK_THROWS(median({}));
}

TEST_CASE("constraint audit flags each limit") {
  const auto pt = powertrain::Powertrain::defaults();
  env::EnvConfig cfg;
  env::EmsEnv env(pt, cfg);
  test::Gen gen(1);
  const auto c = gen.cycle(100, 25.0);
  const auto ok = env::run_policy(env, c, 0.65, [](const env::EmsState&, std::size_t k) { return 2e3 * (k % 20); });
  CHECK(check_constraints(ok, pt, cfg).empty());

  auto bad = ok;
  bad.steps[3].info.engine_torque = pt.egs.engine_torque_max + 1.0;
  bad.steps[7].info.soc = pt.battery.soc_min - 0.01;
  const auto v = check_constraints(bad, pt, cfg);
  REQUIRE(v.size() == 2);
  CHECK(v[0].k == 3);
  CHECK(v[1].k == 7);

  const env::Dynamics dyn(pt, cfg);
  CHECK_THROWS(emit_traces(test::scratch_dir("bad_traces"), bad, dyn, "h"));
}

TEST_CASE("traces: row counts, power balance, idempotent, totals reconstructible") {
  const auto pt = powertrain::Powertrain::defaults();
  env::EnvConfig cfg;
  env::EmsEnv env(pt, cfg);
  const env::Dynamics dyn(pt, cfg);
  test::Gen gen(2);
  const auto c = gen.cycle(150, 25.0);
  const auto t = env::run_policy(env, c, 0.65, [](const env::EmsState& s, std::size_t) { return 4e3 * s.v; });
  REQUIRE_FALSE(t.terminated_early);
  const auto dir = test::scratch_dir("traces");
  std::vector<agents::EpisodeStats> curves(4);
  for (std::size_t i = 0; i < curves.size(); ++i) curves[i].episode = i;
  emit_traces(dir, t, dyn, "abc", curves);

  const auto soc = read_csv(dir / "soc_trace.csv");
  const auto split = read_csv(dir / "power_split.csv");
  const auto eng = read_csv(dir / "engine_points.csv");
  CHECK(soc.size() == c.size());
  CHECK(split.size() == c.size());
  CHECK(eng.size() == c.size());
  CHECK(read_csv(dir / "train_curves.csv").size() == 4);
  CHECK(test::slurp(dir / "soc_trace.csv").rfind("# config_hash = abc", 0) == 0);

  double fuel = 0;
  for (const auto& r : soc) fuel += r[5];
  CHECK(fuel == Approx(t.total_fuel()).epsilon(1e-12));
  CHECK(soc.back()[3] == t.final_soc());

  // demand = (P_g eta_g + P_b) eta_m, to 1e-6 relative
  const double eta_g = pt.egs.generator_efficiency;
  for (const auto& r : split) {
    const double delivered = powertrain::combine_power(r[3], r[4], eta_g, r[5]);
    CHECK(delivered == Approx(r[1]).epsilon(1e-6).scale(1.0));
  }
  for (std::size_t k = 0; k < eng.size(); ++k) {
    const double p = eng[k][1] * eng[k][2] * 2.0 * M_PI / 60.0;
    CHECK(p == Approx(eng[k][3]).epsilon(1e-9).scale(1.0));
  }

  const auto before = test::slurp(dir / "power_split.csv");
  emit_traces(dir, t, dyn, "abc", curves);
  CHECK(test::slurp(dir / "power_split.csv") == before);
}

TEST_CASE("write_train_log: one row per episode") {
  const auto dir = test::scratch_dir("trainlog");
  std::vector<agents::EpisodeStats> log(7);
  for (std::size_t i = 0; i < log.size(); ++i) {
    log[i].episode = i;
    log[i].ret = -static_cast<double>(i);
  }
  write_train_log(dir / "sub" / "t.csv", log, "h");
  const auto rows = read_csv(dir / "sub" / "t.csv");
  REQUIRE(rows.size() == 7);
  CHECK(rows[6][1] == -6.0);
}

TEST_CASE("run_compare on a tiny configuration: deterministic, DP ahead") {
  const auto dir = test::scratch_dir("compare");
  const auto low = test::Gen(3).cycle(40, 30 / 3.6);
  auto mid = test::Gen(4).cycle(40, 25 / 3.6);
  for (auto& v : mid.v) v += 45 / 3.6;
  cycles::save_cycle(low, dir / "low.csv");
  cycles::save_cycle(mid, dir / "mid.csv");
  cycles::DrivingCycle target = low;
  target.v.insert(target.v.end(), mid.v.begin(), mid.v.end());
  target.v.resize(60);
  cycles::save_cycle(target, dir / "target.csv");

  const std::string text = "[experiment]\nname = tiny\nseed = 5\nseeds = 2\noutput_dir = " + (dir / "out").string() +
                           "\n[cycle]\ntarget = " + (dir / "target.csv").string() + "\ntraining = " +
                           (dir / "low.csv").string() + "," + (dir / "mid.csv").string() +
                           "\nmin_segment = 5\n[ddpg]\nhidden = 8\nbatch = 16\nwarmup = 16\ncapacity = 5000\n"
                           "[transfer]\ntrain_budget = 4\ntransfer_budget = 3\nscratch_budget = 4\n"
                           "[dp]\nsoc_nodes = 41\naction_nodes = 11\n";
  const auto cfg = config::parse_config(text);
  const auto a = run_compare(cfg);
  REQUIRE(a.seeds.size() == 2);
  const auto run = a.run_dir;
  const auto summary = test::slurp(run / "summary.txt");
  const auto trace = test::slurp(run / "seed_5" / "ddpg_tl" / "soc_trace.csv");
  const auto dp_trace = test::slurp(run / "dp" / "power_split.csv");
  CHECK(summary.find("config_hash = " + config::config_hash(cfg)) == 0);

  const auto b = run_compare(cfg);
  CHECK(test::slurp(run / "summary.txt") == summary);
  CHECK(test::slurp(run / "seed_5" / "ddpg_tl" / "soc_trace.csv") == trace);
  CHECK(test::slurp(run / "dp" / "power_split.csv") == dp_trace);

  for (const auto& s : a.seeds) {
    CHECK(s.hidden_unchanged);
    CHECK(s.dp.violations == 0);
    CHECK(s.tl.violations == 0);
    CHECK(s.scratch.violations == 0);
    CHECK(s.dp.metrics.corrected_fuel_g <= s.tl.metrics.corrected_fuel_g);
    CHECK(s.dp.metrics.corrected_fuel_g <= s.scratch.metrics.corrected_fuel_g);
  }
  CHECK(std::filesystem::exists(run / "comparison.csv"));
  CHECK(std::filesystem::exists(run / "timing.txt"));
  CHECK(std::filesystem::exists(run / "seed_6" / "store" / "low" / "actor.net"));
}

TEST_CASE("run_compare names the failing stage") {
  auto cfg = config::parse_config("[cycle]\ntarget = /nonexistent/target.csv\n");
  cfg.output_dir = test::scratch_dir("compare_fail");
  try {
    run_compare(cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("stage '") != std::string::npos);
  }
}
