#pragma once

// Upper level: per-speed-interval DDPG training and storage. Lower level:
// output-layer retraining on a new cycle and runtime assembly of the
// interval actors into one policy.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ems/agents.hpp"
#include "ems/cycles.hpp"
#include "ems/env.hpp"
#include "ems/network.hpp"

namespace ems::transfer {

using cycles::SpeedInterval;

struct EntryMeta {
  SpeedInterval interval = SpeedInterval::low;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  bool converged = false;
  double final_return = 0.0;
  bool fallback = false;
  // FNV-1a of the stored network files, checked on load.
  std::string actor_digest;
  std::string critic_digest;
};

struct StoreEntry {
  nn::DenseNetwork actor;
  nn::DenseNetwork critic;
  EntryMeta meta;
};

// store/<low|medium|high>/{actor.net, critic.net, meta.txt}
class PolicyStore {
 public:
  explicit PolicyStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  bool has(SpeedInterval s) const;
  std::vector<SpeedInterval> intervals() const;
  // Fills the digests in the written metadata.
  void save(const StoreEntry& entry) const;
  StoreEntry load(SpeedInterval s) const;

 private:
  std::filesystem::path dir(SpeedInterval s) const;
  std::filesystem::path root_;
};

EntryMeta read_meta(const std::filesystem::path& path);
void write_meta(const EntryMeta& meta, const std::filesystem::path& path);

struct TransferConfig {
  agents::DdpgConfig ddpg;
  agents::ConvergenceCriterion criterion;
  std::size_t train_budget = 1000;
  std::size_t transfer_budget = 100;
  double transfer_noise_start = 0.05;
  double transfer_noise_end = 0.01;
  double soc0_jitter = 0.0;          // full-cycle episodes (transfer, from scratch)
  double segment_soc0_jitter = 0.0;  // segment episodes: a segment can start at any SOC
  double negative_threshold = 0.9;
  std::size_t min_segment = 10;  // shortest training segment, samples

  void validate() const;
};

// Slices of every cycle's maximal runs labelled `interval` with at least
// min_segment samples.
std::vector<cycles::DrivingCycle> segment_pool(const std::vector<cycles::DrivingCycle>& cycles,
                                               SpeedInterval interval, std::size_t min_segment);

struct TrainedEntry {
  StoreEntry entry;
  agents::TrainLog log;
};

// Round-robin DDPG training over the pool until convergence or the budget.
TrainedEntry train_interval(SpeedInterval interval, const std::vector<cycles::DrivingCycle>& pool,
                            const powertrain::Powertrain& pt, const env::EnvConfig& env_cfg,
                            const TransferConfig& cfg, std::uint64_t seed, const std::string& config_hash);

// One actor per interval; the sample's speed picks the actor.
class CompositePolicy {
 public:
  CompositePolicy() = default;
  void set(SpeedInterval s, nn::DenseNetwork actor);
  bool has(SpeedInterval s) const { return actors_[static_cast<int>(s)].has_value(); }
  const nn::DenseNetwork& actor(SpeedInterval s) const;
  SpeedInterval select(double speed) const;  // throws above 120 km/h or for a missing actor
  // Normalized action in [0, 1].
  double act(const env::EmsState& s, const env::EnvConfig& cfg, const powertrain::BatteryParams& bat) const;
  env::PowerPolicy power_policy(const env::Dynamics& dyn) const;

 private:
  std::array<std::optional<nn::DenseNetwork>, 3> actors_;
};

CompositePolicy assemble_policy(const PolicyStore& store);
CompositePolicy assemble_policy(const std::map<SpeedInterval, nn::DenseNetwork>& actors);

struct TransferReport {
  SpeedInterval interval = SpeedInterval::low;
  std::size_t episodes = 0;
  double wall_s = 0.0;
  bool converged = false;
  bool negative_transfer = false;
  double eval_return = 0.0;  // reward accumulated on this interval's samples
  // Negative-transfer check: the transferred actor and the baseline actor on
  // the same validation rollouts (see rollout_return).
  double validation_return = 0.0;
  double baseline_return = 0.0;
  double eval_fuel = 0.0;
  std::size_t samples = 0;
};

// Hidden-layer parameter bytes of a network, for the freeze contract.
std::string hidden_bytes(const nn::DenseNetwork& net);

struct TransferResult {
  CompositePolicy policy;
  std::map<SpeedInterval, StoreEntry> entries;  // retrained networks
  std::vector<TransferReport> reports;
  agents::TrainLog log;           // joint full-cycle episodes
  bool hidden_unchanged = false;  // freeze contract, checked byte-wise
};

// Joint full-cycle episodes: each sample's interval selects the agent that
// acts, stores the transition in its own fresh buffer and takes the update.
TransferResult transfer_to_cycle(const PolicyStore& store, const cycles::DrivingCycle& cycle,
                                 const powertrain::Powertrain& pt, const env::EnvConfig& env_cfg,
                                 const TransferConfig& cfg, std::uint64_t seed);

// Sign-aware: flagged when transferred < baseline - (1 - threshold) |baseline|,
// which equals transferred < threshold * baseline for positive returns.
bool detect_negative_transfer(double transferred_return, double baseline_return, double threshold);

// Summed reward of `actor` over the rollouts, each started at soc0. The
// negative-transfer check scores both actors this way on the target's segments
// of the interval, so neither inherits the SOC the other left behind.
double rollout_return(const nn::DenseNetwork& actor, const std::vector<cycles::DrivingCycle>& rollouts,
                      const env::EmsEnv& env, double soc0);

// Per-interval reward and fuel of a trajectory.
std::map<SpeedInterval, std::pair<double, double>> interval_totals(const env::Trajectory& traj);

}  // namespace ems::transfer
