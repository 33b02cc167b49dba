#pragma once

// Driving cycles: CSV ingestion, acceleration, speed-interval
// classification and seeded synthetic profiles.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ems::cycles {

enum class SpeedUnit { mps, kmh };

// [0, 40), [40, 80), [80, 120] km/h.
enum class SpeedInterval { low = 0, medium = 1, high = 2 };

inline constexpr double kMaxSpeedKmh = 120.0;
inline constexpr double kMaxSpeed = kMaxSpeedKmh / 3.6;

std::string_view to_string(SpeedInterval s);
SpeedInterval parse_interval(std::string_view name);
SpeedUnit parse_unit(std::string_view name);

struct DrivingCycle {
  std::string name;
  double dt = 1.0;
  std::vector<double> v;   // mean speed, m/s
  std::vector<double> v1;  // per-track speeds; empty when not recorded
  std::vector<double> v2;

  std::size_t size() const { return v.size(); }
  bool has_tracks() const { return !v1.empty(); }
  double track1(std::size_t k) const { return has_tracks() ? v1[k] : v[k]; }
  double track2(std::size_t k) const { return has_tracks() ? v2[k] : v[k]; }
  // sum v * dt, metres
  double distance() const;
  void validate() const;
};

DrivingCycle load_cycle(const std::filesystem::path& path, SpeedUnit unit);
// Writes `time_s,speed[,v1,v2]` in m/s.
void save_cycle(const DrivingCycle& cycle, const std::filesystem::path& path);

// a[k] = (v[k] - v[k-1]) / dt, a[0] = 0.
std::vector<double> derive_accel(const DrivingCycle& cycle);

SpeedInterval classify_speed(double speed);

struct Segment {
  SpeedInterval interval;
  std::size_t begin;  // first sample
  std::size_t end;    // one past the last sample
  std::size_t size() const { return end - begin; }
};

struct Classification {
  std::vector<SpeedInterval> labels;
  std::vector<Segment> segments;  // maximal runs of equal label
};

Classification classify_intervals(const DrivingCycle& cycle);

// Samples [begin, end) as a standalone cycle.
DrivingCycle slice(const DrivingCycle& cycle, std::size_t begin, std::size_t end);

struct SynthSegment {
  double duration;    // s, including the ramp
  double target_kmh;
  double ramp;        // s to move linearly from the previous speed to the target
};

struct SynthSpec {
  std::string name = "synthetic";
  double dt = 1.0;
  std::vector<SynthSegment> segments;
  double jitter_kmh = 0.0;  // std-dev of seeded noise on moving samples
};

DrivingCycle synth_cycle(const SynthSpec& spec, std::uint64_t seed);

// Built-in profiles: "mixed600" (unseen evaluation cycle crossing all three
// intervals), "train_a", "train_b", "train_c" (training corpus).
SynthSpec preset(std::string_view name);

}  // namespace ems::cycles
