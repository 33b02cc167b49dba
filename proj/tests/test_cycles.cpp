#include <doctest.h>

#include "ems/cycles.hpp"
#include "ems/error.hpp"
#include "support.hpp"

using namespace ems;
using namespace ems::cycles;
using doctest::Approx;

TEST_CASE("load_cycle: well-formed, header, units") {
  const auto dir = test::scratch_dir("cycles");
  test::write_file(dir / "a.csv", "0,0\n1,5\n2,10\n");
  const auto c = load_cycle(dir / "a.csv", SpeedUnit::mps);
  CHECK(c.size() == 3);
  CHECK(c.dt == 1.0);
  CHECK(c.v[2] == 10.0);

  test::write_file(dir / "b.csv", "time_s,speed\n0,36\n1,72\n");
  const auto k = load_cycle(dir / "b.csv", SpeedUnit::kmh);
  CHECK(k.v[0] == Approx(10.0));
  CHECK(k.v[1] == Approx(20.0));

  test::write_file(dir / "t.csv", "time_s,speed,v1,v2\n0,10,11,9\n1,10,10,10\n");
  const auto t = load_cycle(dir / "t.csv", SpeedUnit::mps);
  CHECK(t.has_tracks());
  CHECK(t.track1(0) == 11.0);
  CHECK(t.track2(0) == 9.0);
}

TEST_CASE("load_cycle: errors name the row") {
  const auto dir = test::scratch_dir("cycles_err");
  test::write_file(dir / "order.csv", "0,1\n2,1\n1,1\n");
  try {
    load_cycle(dir / "order.csv", SpeedUnit::mps);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("row 3") != std::string::npos);
  }
  test::write_file(dir / "neg.csv", "0,1\n1,-1\n");
  CHECK_THROWS_AS(load_cycle(dir / "neg.csv", SpeedUnit::mps), ParseError);
  test::write_file(dir / "fast.csv", "0,130\n");
  CHECK_THROWS_AS(load_cycle(dir / "fast.csv", SpeedUnit::kmh), ParseError);
  test::write_file(dir / "uneven.csv", "0,1\n1,1\n3,1\n");
  CHECK_THROWS_AS(load_cycle(dir / "uneven.csv", SpeedUnit::mps), ParseError);
  test::write_file(dir / "empty.csv", "");
  CHECK_THROWS_AS(load_cycle(dir / "empty.csv", SpeedUnit::mps), ParseError);
  CHECK_THROWS(load_cycle(dir / "missing.csv", SpeedUnit::mps));
}

TEST_CASE("save/load round trip") {
  const auto dir = test::scratch_dir("cycles_rt");
  test::Gen gen(1);
  for (bool tracks : {false, true}) {
    const auto c = gen.cycle(50, 30.0, tracks);
    save_cycle(c, dir / "rt.csv");
    const auto back = load_cycle(dir / "rt.csv", SpeedUnit::mps);
    CHECK(back.v == c.v);
    CHECK(back.v1 == c.v1);
    CHECK(back.v2 == c.v2);
  }
}

TEST_CASE("derive_accel") {
  DrivingCycle c;
  c.v = {5, 5, 5, 5};
  for (double a : derive_accel(c)) CHECK(a == 0.0);
  c.v.clear();
  for (int k = 0; k <= 10; ++k) c.v.push_back(k);
  const auto ramp = derive_accel(c);
  CHECK(ramp[0] == 0.0);
  for (std::size_t k = 1; k < ramp.size(); ++k) CHECK(ramp[k] == 1.0);
  c.v = {0, 3, 1};
  CHECK(derive_accel(c) == std::vector<double>{0, 3, -2});
  c.dt = 0.5;
  CHECK(derive_accel(c) == std::vector<double>{0, 6, -4});
}

TEST_CASE("speed interval classification") {
  CHECK(classify_speed(30 / 3.6) == SpeedInterval::low);
  CHECK(classify_speed(40 / 3.6) == SpeedInterval::medium);
  CHECK(classify_speed(80 / 3.6) == SpeedInterval::high);
  CHECK(classify_speed(120 / 3.6) == SpeedInterval::high);
  CHECK_THROWS(classify_speed(121 / 3.6));

  DrivingCycle c;
  for (double kmh : {10, 10, 50, 50, 10}) c.v.push_back(kmh / 3.6);
  const auto cls = classify_intervals(c);
  REQUIRE(cls.segments.size() == 3);
  CHECK(cls.segments[0].interval == SpeedInterval::low);
  CHECK(cls.segments[1].interval == SpeedInterval::medium);
  CHECK(cls.segments[1].begin == 2);
  CHECK(cls.segments[1].end == 4);
  CHECK(cls.segments[2].interval == SpeedInterval::low);
}

TEST_CASE("classification: property - segments tile the cycle as maximal runs") {
  test::Gen gen(2);
  for (int t = 0; t < 100; ++t) {
    const auto c = gen.cycle(gen.integer(1, 200), kMaxSpeed);
    const auto cls = classify_intervals(c);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < cls.segments.size(); ++s) {
      const auto& seg = cls.segments[s];
      CHECK(seg.begin == pos);
      CHECK(seg.end > seg.begin);
      for (std::size_t k = seg.begin; k < seg.end; ++k) CHECK(cls.labels[k] == seg.interval);
      if (s > 0) CHECK(cls.segments[s - 1].interval != seg.interval);
      pos = seg.end;
    }
    CHECK(pos == c.size());
  }
}

TEST_CASE("synthetic cycles") {
  SynthSpec idle;
  idle.segments = {{60, 0, 0}};
  const auto z = synth_cycle(idle, 1);
  CHECK(z.size() == 60);
  for (double v : z.v) CHECK(v == 0.0);

  SynthSpec ramp;
  ramp.segments = {{10, 36, 10}, {10, 36, 0}};
  const auto r = synth_cycle(ramp, 1);
  REQUIRE(r.size() == 20);
  // v(t) = t on the ramp, sampled at t = 0..9, then held at 10 m/s
  for (std::size_t k = 0; k < 10; ++k) CHECK(r.v[k] == Approx(static_cast<double>(k)));
  for (std::size_t k = 10; k < 20; ++k) CHECK(r.v[k] == Approx(10.0));

  const auto a = synth_cycle(preset("mixed600"), 7);
  const auto b = synth_cycle(preset("mixed600"), 7);
  CHECK(a.v == b.v);
  CHECK(a.size() == 600);
  // the evaluation cycle visits every interval
  const auto cls = classify_intervals(a);
  bool seen[3] = {false, false, false};
  for (auto l : cls.labels) seen[static_cast<int>(l)] = true;
  CHECK((seen[0] && seen[1] && seen[2]));
  CHECK_THROWS(preset("nope"));
}

TEST_CASE("slice and distance") {
  DrivingCycle c;
  c.v = {1, 2, 3, 4};
  c.dt = 2.0;
  CHECK(c.distance() == Approx(20.0));
  const auto s = slice(c, 1, 3);
  CHECK(s.v == std::vector<double>{2, 3});
  CHECK(s.dt == 2.0);
  CHECK_THROWS(slice(c, 2, 2));
  CHECK_THROWS(slice(c, 0, 5));
}
