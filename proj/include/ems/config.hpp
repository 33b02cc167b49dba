#pragma once

// Experiment configuration: INI-style `key = value` with sections. Every
// field has a default, unknown keys are rejected, and the hash is taken over
// the canonical rendering so it does not depend on key order or spacing.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ems/agents.hpp"
#include "ems/dp.hpp"
#include "ems/env.hpp"
#include "ems/powertrain.hpp"
#include "ems/transfer.hpp"

namespace ems::config {

// A cycle source: a preset name ("mixed600", "train_a", ...) or a CSV path.
struct CycleSource {
  std::string spec = "mixed600";
  std::uint64_t synth_seed = 7;
  cycles::SpeedUnit unit = cycles::SpeedUnit::mps;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::size_t seeds = 3;  // compare runs seed, seed + 1, ...
  std::filesystem::path output_dir = "runs";

  CycleSource target;
  std::vector<std::string> training = {"train_a", "train_b", "train_c"};

  powertrain::Powertrain powertrain = powertrain::Powertrain::defaults();
  env::EnvConfig env;
  transfer::TransferConfig transfer;
  std::size_t scratch_budget = 1000;
  agents::DqnConfig dqn;

  std::size_t dp_soc_nodes = 201;
  std::size_t dp_action_nodes = 41;
  dp::ValueInterpolation dp_interpolation = dp::ValueInterpolation::linear;

  double fuel_density = 850.0;  // g/L
  double soc_correction = 0.0;  // g/Wh; 0 derives it from the best BSFC of the map

  void validate() const;
};

ExperimentConfig parse_config(std::string_view text, std::string_view source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Fixed-order rendering of every field; parse_config(canonical(c)) == c.
std::string canonical(const ExperimentConfig& c);
std::string config_hash(const ExperimentConfig& c);

// EMS_SEED, when set, replaces the seed. Returns true if applied.
bool apply_env_overrides(ExperimentConfig& c);

cycles::DrivingCycle resolve_cycle(const CycleSource& src);
cycles::DrivingCycle resolve_cycle(std::string_view spec, std::uint64_t synth_seed, cycles::SpeedUnit unit);

}  // namespace ems::config
