#pragma once

// DQN and DDPG agents over a generic episodic environment with a scalar
// action normalized to [0, 1], plus the EMS adapter that maps it to engine
// power.

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "ems/cycles.hpp"
#include "ems/env.hpp"
#include "ems/network.hpp"
#include "ems/replay.hpp"

namespace ems::agents {

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool terminal = false;   // no bootstrap past this step
  bool truncated = false;  // episode ends but the state is not terminal
  double fuel_g = 0.0;
  double soc = 0.0;
  bool ended() const { return terminal || truncated; }
};

class AgentEnv {
 public:
  virtual ~AgentEnv() = default;
  virtual std::size_t state_size() const = 0;
  virtual std::vector<double> reset() = 0;
  // action in [0, 1]
  virtual StepResult step(double action) = 0;
};

// Episodes cycle round-robin through a pool of driving cycles. Each episode
// starts at soc0 plus a seeded uniform offset in [-soc0_jitter, soc0_jitter].
class EmsAgentEnv : public AgentEnv {
 public:
  EmsAgentEnv(powertrain::Powertrain pt, env::EnvConfig cfg, std::vector<cycles::DrivingCycle> pool,
              double soc0_jitter = 0.0, std::uint64_t seed = 0);

  std::size_t state_size() const override { return 3; }
  std::vector<double> reset() override;
  StepResult step(double action) override;

  const env::EmsEnv& env() const { return env_; }
  const std::vector<cycles::DrivingCycle>& pool() const { return pool_; }
  double power_of(double action) const;

 private:
  env::EmsEnv env_;
  std::vector<cycles::DrivingCycle> pool_;
  double soc0_jitter_;
  std::mt19937_64 rng_;
  std::size_t next_ = 0;
};

std::vector<double> observe(const env::EmsEnv& env);

enum class NoiseKind { gaussian, ou };
std::string_view to_string(NoiseKind k);
NoiseKind parse_noise(std::string_view name);

struct NoiseProcess {
  NoiseKind kind = NoiseKind::gaussian;
  double theta = 0.15;  // OU mean reversion per step
  double state = 0.0;

  void reset() { state = 0.0; }
  double sample(double scale, std::mt19937_64& rng);
};

// clamp(mu(s) + noise, 0, 1); scale 0 returns mu(s) exactly.
double act_with_noise(const nn::DenseNetwork& actor, std::span<const double> state, NoiseProcess& noise,
                      double scale, std::mt19937_64& rng);

// Linear schedule from `start` to `end` over `span` episodes, then flat.
double linear_schedule(double start, double end, std::size_t episode, std::size_t span);

// y = r if done else r + gamma max_a' Q'(s', a')
double td_target_dqn(double r, std::span<const double> s_next, bool done, const nn::DenseNetwork& target,
                     double gamma);
// y = r if done else r + gamma Q'(s', mu'(s'))
double td_target_ddpg(double r, std::span<const double> s_next, bool done, const nn::DenseNetwork& target_actor,
                      const nn::DenseNetwork& target_critic, double gamma);

struct EpisodeStats {
  std::size_t episode = 0;
  double ret = 0.0;           // undiscounted sum of rewards
  double mean_abs_td = 0.0;   // over the episode's own transitions
  double mean_loss = 0.0;     // mean critic minibatch loss, 0 without updates
  std::size_t steps = 0;
  std::size_t updates = 0;
  double fuel_g = 0.0;
  double final_soc = 0.0;
  bool terminated = false;
  double wall_ms = 0.0;
};

struct UpdateStats {
  double loss = 0.0;  // importance-weighted mean squared TD error
  double mean_abs_td = 0.0;
};

struct DdpgConfig {
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  nn::UpdateRule::Kind optimizer = nn::UpdateRule::Kind::adam;
  double tau = 0.005;
  double gamma = 0.95;
  std::size_t batch = 64;
  std::size_t capacity = 100000;
  std::size_t warmup = 64;  // transitions stored before updates start
  bool prioritized = true;
  double priority_alpha = 0.6;
  double beta_start = 0.4;
  double beta_end = 1.0;
  NoiseKind noise = NoiseKind::gaussian;
  double ou_theta = 0.15;
  double noise_start = 0.2;
  double noise_end = 0.01;
  std::size_t schedule_episodes = 1000;  // span of the noise and beta schedules
  double reward_scale = 1.0;             // rewards are multiplied before storage
  double output_init = 3e-3;
  // Adds penalty * mean(z^2) to the actor loss, z being the output layer's
  // pre-activation. Keeps a sigmoid output out of saturation, where the
  // critic's gradient can no longer move it.
  double preact_penalty = 0.0;

  void validate() const;
};

class DdpgAgent {
 public:
  DdpgAgent(std::size_t state_size, DdpgConfig cfg, std::uint64_t seed);

  const DdpgConfig& config() const { return cfg_; }
  DdpgConfig& config() { return cfg_; }
  std::size_t state_size() const { return state_size_; }

  double act(std::span<const double> s) const;
  double q(std::span<const double> s, double a) const;
  double td_target(double r, std::span<const double> s_next, bool done) const;
  double td_error(const Transition& t) const;

  // One critic step, one actor step and soft target updates.
  UpdateStats update(ReplayBuffer& buffer, std::mt19937_64& rng);

  double noise_scale() const;
  double beta() const;
  std::size_t episodes() const { return episodes_; }
  void end_episode() { ++episodes_; }
  void restart_schedules() { episodes_ = 0; }

  nn::DenseNetwork& actor() { return actor_; }
  nn::DenseNetwork& critic() { return critic_; }
  const nn::DenseNetwork& actor() const { return actor_; }
  const nn::DenseNetwork& critic() const { return critic_; }
  const nn::DenseNetwork& target_actor() const { return target_actor_; }
  const nn::DenseNetwork& target_critic() const { return target_critic_; }

  // Replaces all four networks (targets copy the mains) and resets optimizers.
  void load_networks(nn::DenseNetwork actor, nn::DenseNetwork critic);
  // Freezes every layer except the output layer of actor and critic.
  void freeze_hidden();
  void reset_optimizers();
  ReplayBuffer make_buffer() const;
  NoiseProcess make_noise() const { return NoiseProcess{cfg_.noise, cfg_.ou_theta, 0.0}; }

 private:
  std::size_t state_size_;
  DdpgConfig cfg_;
  nn::DenseNetwork actor_, critic_, target_actor_, target_critic_;
  nn::Optimizer actor_opt_, critic_opt_;
  std::size_t episodes_ = 0;
  // scratch buffers for minibatch passes
  nn::ForwardCache c_next_actor_, c_next_critic_, c_critic_, c_actor_, c_policy_critic_;
  nn::GradientSet g_critic_, g_actor_, g_unused_;
  std::vector<double> in_a_, in_c_, up_;
};

// Acts with exploration noise, stores each transition, updates once per step
// once the buffer holds max(batch, warmup) transitions.
EpisodeStats ddpg_episode(DdpgAgent& agent, AgentEnv& env, ReplayBuffer& buffer, std::mt19937_64& rng);

struct DqnConfig {
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::size_t actions = 11;
  double lr = 1e-3;
  nn::UpdateRule::Kind optimizer = nn::UpdateRule::Kind::adam;
  double gamma = 0.95;
  std::size_t batch = 64;
  std::size_t capacity = 100000;
  std::size_t warmup = 64;
  std::size_t target_period = 200;  // hard update every k steps
  bool prioritized = true;
  double priority_alpha = 0.6;
  double beta_start = 0.4;
  double beta_end = 1.0;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t schedule_episodes = 1000;
  double reward_scale = 1.0;

  void validate() const;
};

class DqnAgent {
 public:
  DqnAgent(std::size_t state_size, DqnConfig cfg, std::uint64_t seed);

  const DqnConfig& config() const { return cfg_; }
  std::vector<double> q_values(std::span<const double> s) const;
  std::size_t greedy(std::span<const double> s) const;
  std::size_t act(std::span<const double> s, double epsilon, std::mt19937_64& rng) const;
  double action_value(std::size_t index) const;  // normalized action of a discrete index
  double td_target(double r, std::span<const double> s_next, bool done) const;
  double td_error(const Transition& t) const;

  UpdateStats update(ReplayBuffer& buffer, std::mt19937_64& rng);
  // Counts an environment step; hard-updates the target every k steps.
  void tick();

  double epsilon() const;
  double beta() const;
  std::size_t episodes() const { return episodes_; }
  std::size_t steps() const { return steps_; }
  void end_episode() { ++episodes_; }
  void set_epsilon_override(double e) { epsilon_override_ = e; }

  nn::DenseNetwork& network() { return q_; }
  const nn::DenseNetwork& network() const { return q_; }
  const nn::DenseNetwork& target() const { return target_; }
  ReplayBuffer make_buffer() const;

 private:
  std::size_t state_size_;
  DqnConfig cfg_;
  nn::DenseNetwork q_, target_;
  nn::Optimizer opt_;
  std::size_t episodes_ = 0;
  std::size_t steps_ = 0;
  double epsilon_override_ = -1.0;
  nn::ForwardCache c_q_, c_next_;
  nn::GradientSet g_;
  std::vector<double> in_, up_;
};

EpisodeStats dqn_episode(DqnAgent& agent, AgentEnv& env, ReplayBuffer& buffer, std::mt19937_64& rng);

// Moving average of the returns (window episodes) must stay within a
// relative tolerance of its latest value over the last `lookback` episodes.
struct ConvergenceCriterion {
  std::size_t window = 50;
  std::size_t lookback = 100;
  double tolerance = 0.01;

  std::size_t min_episodes() const { return window + lookback; }
  bool converged(std::span<const double> returns) const;
  void validate() const;
};

std::vector<double> moving_average(std::span<const double> xs, std::size_t window);

struct TrainLog {
  std::vector<EpisodeStats> episodes;
  bool converged = false;
  std::size_t episodes_to_convergence = 0;  // budget when not converged
  double wall_s = 0.0;                      // stepping + updates only

  std::vector<double> returns() const;
};

// Runs ddpg_episode until convergence or the budget. budget 0 is an error.
TrainLog train_ddpg(DdpgAgent& agent, AgentEnv& env, ReplayBuffer& buffer, std::size_t budget,
                    const ConvergenceCriterion& criterion, std::mt19937_64& rng);

// Noise-free rollout of an actor on a cycle.
env::Trajectory evaluate_actor(const nn::DenseNetwork& actor, env::EmsEnv& env, const cycles::DrivingCycle& cycle,
                               double soc0);

}  // namespace ems::agents
