#include "ems/cycles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "csv.hpp"
#include "ems/error.hpp"

namespace ems::cycles {
namespace {

constexpr double kLowUpper = 40.0 / 3.6;
constexpr double kMediumUpper = 80.0 / 3.6;
constexpr double kDtTolerance = 1e-6;

}  // namespace

std::string_view to_string(SpeedInterval s) {
  switch (s) {
    case SpeedInterval::low: return "low";
    case SpeedInterval::medium: return "medium";
    case SpeedInterval::high: return "high";
  }
  return "?";
}

SpeedInterval parse_interval(std::string_view name) {
  if (name == "low") return SpeedInterval::low;
  if (name == "medium") return SpeedInterval::medium;
  if (name == "high") return SpeedInterval::high;
  throw Error("unknown speed interval '" + std::string(name) + "' (low|medium|high)");
}

SpeedUnit parse_unit(std::string_view name) {
  if (name == "mps") return SpeedUnit::mps;
  if (name == "kmh") return SpeedUnit::kmh;
  throw Error("unknown speed unit '" + std::string(name) + "' (mps|kmh)");
}

double DrivingCycle::distance() const {
  double d = 0.0;
  for (double s : v) d += s * dt;
  return d;
}

void DrivingCycle::validate() const {
  if (v.empty()) throw Error("cycle '" + name + "' is empty");
  if (!(dt > 0.0)) throw Error("cycle '" + name + "' needs dt > 0");
  if (!v1.empty() || !v2.empty()) {
    if (v1.size() != v.size() || v2.size() != v.size())
      throw Error("cycle '" + name + "' track speed sequences differ in length");
  }
  auto check = [&](const std::vector<double>& s) {
    for (std::size_t k = 0; k < s.size(); ++k)
      if (!std::isfinite(s[k]) || s[k] < 0.0 || s[k] > kMaxSpeed)
        throw Error("cycle '" + name + "' sample " + std::to_string(k) +
                    " outside [0, 120] km/h");
  };
  check(v);
  check(v1);
  check(v2);
}

DrivingCycle load_cycle(const std::filesystem::path& path, SpeedUnit unit) {
  std::vector<std::string> storage;
  const auto rows = detail::read_csv(path, storage);
  if (rows.empty()) throw ParseError(path.string() + ": empty cycle file");

  std::size_t col_t = 0, col_v = 1, col_v1 = 2, col_v2 = 3;
  bool tracks = false;
  std::size_t first = 0;
  double probe;
  if (!detail::parse_double(rows[0].fields[0], probe)) {
    const auto& h = rows[0].fields;
    auto find = [&](std::string_view name) -> std::size_t {
      for (std::size_t c = 0; c < h.size(); ++c)
        if (h[c] == name) return c;
      return h.size();
    };
    col_t = find("time_s");
    col_v = find("speed");
    col_v1 = find("v1");
    col_v2 = find("v2");
    if (col_t == h.size() || col_v == h.size())
      throw ParseError(path.string() + ":" + std::to_string(rows[0].line) +
                       ": header must name time_s and speed");
    tracks = col_v1 < h.size() && col_v2 < h.size();
    first = 1;
  } else {
    tracks = rows[0].fields.size() >= 4;
  }

  const double scale = unit == SpeedUnit::kmh ? 1.0 / 3.6 : 1.0;
  DrivingCycle cycle;
  cycle.name = path.stem().string();
  std::vector<double> times;
  for (std::size_t r = first; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t data_row = r - first + 1;
    auto fail = [&](const std::string& msg) {
      return ParseError(path.string() + ":" + std::to_string(row.line) + ": row " +
                        std::to_string(data_row) + ": " + msg);
    };
    auto field = [&](std::size_t c, const char* what) {
      double value;
      if (c >= row.fields.size() || !detail::parse_double(row.fields[c], value))
        throw fail(std::string("bad ") + what);
      return value;
    };
    const double t = field(col_t, "time");
    if (!times.empty() && !(t > times.back())) throw fail("timestamps must be strictly increasing");
    const double v = field(col_v, "speed");
    if (v < 0.0) throw fail("negative speed");
    if (v * scale > kMaxSpeed) throw fail("speed above 120 km/h");
    times.push_back(t);
    cycle.v.push_back(v * scale);
    if (tracks) {
      const double a = field(col_v1, "v1");
      const double b = field(col_v2, "v2");
      if (a < 0.0 || b < 0.0) throw fail("negative track speed");
      cycle.v1.push_back(a * scale);
      cycle.v2.push_back(b * scale);
    }
    if (times.size() >= 3) {
      const double step0 = times[1] - times[0];
      const double step = times.back() - times[times.size() - 2];
      if (std::abs(step - step0) > kDtTolerance) throw fail("non-uniform sample period");
    }
  }
  if (cycle.v.empty()) throw ParseError(path.string() + ": no samples");
  cycle.dt = times.size() >= 2 ? times[1] - times[0] : 1.0;
  cycle.validate();
  return cycle;
}

void save_cycle(const DrivingCycle& cycle, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  out << (cycle.has_tracks() ? "time_s,speed,v1,v2\n" : "time_s,speed\n");
  for (std::size_t k = 0; k < cycle.size(); ++k) {
    out << static_cast<double>(k) * cycle.dt << ',' << cycle.v[k];
    if (cycle.has_tracks()) out << ',' << cycle.v1[k] << ',' << cycle.v2[k];
    out << '\n';
  }
}

std::vector<double> derive_accel(const DrivingCycle& cycle) {
  std::vector<double> a(cycle.size(), 0.0);
  for (std::size_t k = 1; k < cycle.size(); ++k) a[k] = (cycle.v[k] - cycle.v[k - 1]) / cycle.dt;
  return a;
}

SpeedInterval classify_speed(double speed) {
  if (!std::isfinite(speed) || speed < 0.0) throw Error("speed must be finite and non-negative");
  if (speed > kMaxSpeed) throw Error("speed above 120 km/h cannot be classified");
  if (speed < kLowUpper) return SpeedInterval::low;
  if (speed < kMediumUpper) return SpeedInterval::medium;
  return SpeedInterval::high;
}

Classification classify_intervals(const DrivingCycle& cycle) {
  Classification out;
  out.labels.reserve(cycle.size());
  for (double s : cycle.v) out.labels.push_back(classify_speed(s));
  std::size_t start = 0;
  for (std::size_t k = 1; k <= out.labels.size(); ++k) {
    if (k == out.labels.size() || out.labels[k] != out.labels[start]) {
      out.segments.push_back({out.labels[start], start, k});
      start = k;
    }
  }
  return out;
}

DrivingCycle slice(const DrivingCycle& cycle, std::size_t begin, std::size_t end) {
  if (begin >= end || end > cycle.size()) throw Error("invalid cycle slice");
  DrivingCycle out;
  out.name = cycle.name + "[" + std::to_string(begin) + ":" + std::to_string(end) + "]";
  out.dt = cycle.dt;
  out.v.assign(cycle.v.begin() + begin, cycle.v.begin() + end);
  if (cycle.has_tracks()) {
    out.v1.assign(cycle.v1.begin() + begin, cycle.v1.begin() + end);
    out.v2.assign(cycle.v2.begin() + begin, cycle.v2.begin() + end);
  }
  return out;
}

DrivingCycle synth_cycle(const SynthSpec& spec, std::uint64_t seed) {
  if (!(spec.dt > 0.0)) throw Error("synthetic cycle needs dt > 0");
  DrivingCycle cycle;
  cycle.name = spec.name;
  cycle.dt = spec.dt;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  double previous = 0.0;  // km/h
  for (const auto& seg : spec.segments) {
    if (seg.target_kmh < 0.0 || seg.target_kmh > kMaxSpeedKmh)
      throw Error("synthetic target speed outside [0, 120] km/h");
    const auto samples = static_cast<std::size_t>(std::llround(seg.duration / spec.dt));
    for (std::size_t k = 0; k < samples; ++k) {
      const double t = static_cast<double>(k) * spec.dt;
      const double frac = seg.ramp > 0.0 ? std::min(1.0, t / seg.ramp) : 1.0;
      double kmh = previous + (seg.target_kmh - previous) * frac;
      if (spec.jitter_kmh > 0.0 && kmh > 0.0)
        kmh = std::clamp(kmh + spec.jitter_kmh * noise(rng), 0.0, kMaxSpeedKmh);
      cycle.v.push_back(kmh / 3.6);
    }
    previous = seg.target_kmh;
  }
  if (cycle.v.empty()) throw Error("synthetic cycle has no samples");
  return cycle;
}

SynthSpec preset(std::string_view name) {
  SynthSpec s;
  s.name = std::string(name);
  s.jitter_kmh = 1.5;
  if (name == "mixed600") {
    s.segments = {{60, 30, 15}, {50, 55, 15}, {70, 88, 25}, {60, 65, 15}, {40, 20, 15},
                  {20, 0, 10},  {60, 45, 15}, {80, 95, 30}, {50, 70, 15}, {50, 35, 15},
                  {20, 15, 8},  {40, 0, 15}};
  } else if (name == "train_a") {
    s.segments = {{40, 20, 10}, {30, 35, 10}, {40, 0, 10},  {60, 30, 15}, {50, 50, 15},
                  {30, 10, 10}, {20, 0, 8},   {60, 38, 15}, {40, 25, 10}, {30, 0, 10}};
  } else if (name == "train_b") {
    s.segments = {{60, 50, 20}, {80, 70, 20}, {50, 60, 10}, {60, 45, 15},
                  {70, 75, 15}, {40, 30, 15}, {60, 65, 20}, {30, 0, 15}};
  } else if (name == "train_c") {
    s.segments = {{40, 40, 20}, {90, 85, 30}, {100, 100, 20}, {60, 90, 15},
                  {80, 110, 20}, {60, 82, 20}, {40, 60, 15},  {30, 0, 20}};
  } else {
    throw Error("unknown cycle preset '" + std::string(name) + "'");
  }
  return s;
}

}  // namespace ems::cycles
