#include "ems/agents.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "ems/error.hpp"

namespace ems::agents {
namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> layer_sizes(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out) {
  std::vector<std::size_t> s{in};
  for (std::size_t l = 0; l < layers; ++l) s.push_back(hidden);
  s.push_back(out);
  return s;
}

nn::UpdateRule rule(nn::UpdateRule::Kind kind, double lr) {
  nn::UpdateRule r;
  r.kind = kind;
  r.learning_rate = lr;
  return r;
}

void check_state(std::span<const double> s, std::size_t n) {
  if (s.size() != n) throw Error("state has " + std::to_string(s.size()) + " entries, expected " + std::to_string(n));
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

// ---------------------------------------------------------------- env adapter

EmsAgentEnv::EmsAgentEnv(powertrain::Powertrain pt, env::EnvConfig cfg, std::vector<cycles::DrivingCycle> pool,
                         double soc0_jitter, std::uint64_t seed)
    : env_(std::move(pt), cfg), pool_(std::move(pool)), soc0_jitter_(soc0_jitter), rng_(seed) {
  if (pool_.empty()) throw Error("cycle pool is empty");
  for (const auto& c : pool_) c.validate();
  if (soc0_jitter_ < 0.0) throw Error("soc0 jitter must be >= 0");
}

std::vector<double> observe(const env::EmsEnv& env) {
  const auto o = env.observation();
  return {o.begin(), o.end()};
}

std::vector<double> EmsAgentEnv::reset() {
  const auto& cycle = pool_[next_];
  next_ = (next_ + 1) % pool_.size();
  const auto& bat = env_.dynamics().powertrain().battery;
  double soc0 = env_.dynamics().config().soc0;
  if (soc0_jitter_ > 0.0) {
    std::uniform_real_distribution<double> u(-soc0_jitter_, soc0_jitter_);
    soc0 = std::clamp(soc0 + u(rng_), bat.soc_min, bat.soc_max);
  }
  env_.reset(cycle, soc0);
  return observe(env_);
}

double EmsAgentEnv::power_of(double action) const {
  return std::clamp(action, 0.0, 1.0) * env_.dynamics().max_engine_power();
}

StepResult EmsAgentEnv::step(double action) {
  const auto out = env_.step({power_of(action)});
  StepResult r;
  r.obs = observe(env_);
  r.reward = out.reward;
  r.terminal = out.info.infeasible;
  r.truncated = out.done && !out.info.infeasible;
  r.fuel_g = out.info.fuel_g;
  r.soc = out.info.soc;
  return r;
}

// ---------------------------------------------------------------- noise

std::string_view to_string(NoiseKind k) { return k == NoiseKind::ou ? "ou" : "gaussian"; }

NoiseKind parse_noise(std::string_view name) {
  if (name == "gaussian") return NoiseKind::gaussian;
  if (name == "ou") return NoiseKind::ou;
  throw Error("unknown noise kind '" + std::string(name) + "'");
}

double NoiseProcess::sample(double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  if (kind == NoiseKind::gaussian) return scale * n(rng);
  state += -theta * state + scale * n(rng);
  return state;
}

double act_with_noise(const nn::DenseNetwork& actor, std::span<const double> state, NoiseProcess& noise,
                      double scale, std::mt19937_64& rng) {
  const double mu = actor.forward(state)[0];
  if (scale == 0.0) return std::clamp(mu, 0.0, 1.0);
  return std::clamp(mu + noise.sample(scale, rng), 0.0, 1.0);
}

double linear_schedule(double start, double end, std::size_t episode, std::size_t span) {
  if (span == 0 || episode >= span) return end;
  const double f = static_cast<double>(episode) / static_cast<double>(span);
  return start + (end - start) * f;
}

// ---------------------------------------------------------------- TD targets

double td_target_dqn(double r, std::span<const double> s_next, bool done, const nn::DenseNetwork& target,
                     double gamma) {
  if (done || gamma == 0.0) return r;
  const auto q = target.forward(s_next);
  return r + gamma * *std::max_element(q.begin(), q.end());
}

double td_target_ddpg(double r, std::span<const double> s_next, bool done, const nn::DenseNetwork& target_actor,
                      const nn::DenseNetwork& target_critic, double gamma) {
  if (done || gamma == 0.0) return r;
  std::vector<double> in(s_next.begin(), s_next.end());
  in.push_back(target_actor.forward(s_next)[0]);
  return r + gamma * target_critic.forward(in)[0];
}

// ---------------------------------------------------------------- DDPG

void DdpgConfig::validate() const {
  if (hidden == 0 || hidden_layers == 0) throw Error("DDPG needs at least one hidden layer");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw Error("learning rates must be positive");
  if (!(tau > 0.0 && tau <= 1.0)) throw Error("tau must lie in (0, 1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  if (batch == 0 || capacity < batch) throw Error("need 1 <= batch <= capacity");
  if (!(noise_start >= 0.0 && noise_end >= 0.0)) throw Error("noise scales must be >= 0");
  if (!(reward_scale > 0.0)) throw Error("reward scale must be positive");
  if (!(preact_penalty >= 0.0)) throw Error("pre-activation penalty must be >= 0");
}

DdpgAgent::DdpgAgent(std::size_t state_size, DdpgConfig cfg, std::uint64_t seed)
    : state_size_(state_size), cfg_(cfg) {
  cfg_.validate();
  if (state_size == 0) throw Error("state size must be positive");
  std::mt19937_64 rng(seed);
  actor_ = nn::DenseNetwork(layer_sizes(state_size, cfg_.hidden, cfg_.hidden_layers, 1), nn::Activation::tanh,
                            nn::Activation::sigmoid);
  critic_ = nn::DenseNetwork(layer_sizes(state_size + 1, cfg_.hidden, cfg_.hidden_layers, 1),
                             nn::Activation::tanh, nn::Activation::linear);
  actor_.init_uniform(rng, cfg_.output_init);
  critic_.init_uniform(rng, cfg_.output_init);
  target_actor_ = actor_;
  target_critic_ = critic_;
  reset_optimizers();
}

void DdpgAgent::reset_optimizers() {
  actor_opt_ = nn::Optimizer(actor_, rule(cfg_.optimizer, cfg_.actor_lr));
  critic_opt_ = nn::Optimizer(critic_, rule(cfg_.optimizer, cfg_.critic_lr));
  g_actor_ = actor_.make_gradients();
  g_critic_ = critic_.make_gradients();
}

void DdpgAgent::load_networks(nn::DenseNetwork actor, nn::DenseNetwork critic) {
  if (actor.input_size() != state_size_ || actor.output_size() != 1)
    throw Error("actor shape does not match the agent");
  if (critic.input_size() != state_size_ + 1 || critic.output_size() != 1)
    throw Error("critic shape does not match the agent");
  actor_ = std::move(actor);
  critic_ = std::move(critic);
  target_actor_ = actor_;
  target_critic_ = critic_;
  reset_optimizers();
}

void DdpgAgent::freeze_hidden() {
  actor_.freeze_all_but_output();
  critic_.freeze_all_but_output();
}

ReplayBuffer DdpgAgent::make_buffer() const {
  return ReplayBuffer(cfg_.capacity, cfg_.prioritized ? cfg_.priority_alpha : 0.0);
}

double DdpgAgent::noise_scale() const {
  return linear_schedule(cfg_.noise_start, cfg_.noise_end, episodes_, cfg_.schedule_episodes);
}

double DdpgAgent::beta() const {
  if (!cfg_.prioritized) return 0.0;
  return linear_schedule(cfg_.beta_start, cfg_.beta_end, episodes_, cfg_.schedule_episodes);
}

double DdpgAgent::act(std::span<const double> s) const {
  check_state(s, state_size_);
  return actor_.forward(s)[0];
}

double DdpgAgent::q(std::span<const double> s, double a) const {
  check_state(s, state_size_);
  std::vector<double> in(s.begin(), s.end());
  in.push_back(a);
  return critic_.forward(in)[0];
}

double DdpgAgent::td_target(double r, std::span<const double> s_next, bool done) const {
  return td_target_ddpg(r, s_next, done, target_actor_, target_critic_, cfg_.gamma);
}

double DdpgAgent::td_error(const Transition& t) const {
  return td_target(t.r, t.s_next, t.done) - q(t.s, t.a.at(0));
}

namespace {

// z * dz/da for an output a = f(z); zero where f is flat to double precision.
double preact_times_slope(nn::Activation f, double a) {
  switch (f) {
    case nn::Activation::sigmoid: {
      const double d = a * (1.0 - a);
      return d > 0.0 ? std::log(a / (1.0 - a)) / d : 0.0;
    }
    case nn::Activation::tanh: {
      const double d = 1.0 - a * a;
      return d > 0.0 ? std::atanh(a) / d : 0.0;
    }
    default:
      return a;  // linear; relu is its own pre-activation where it is not flat
  }
}

}  // namespace

UpdateStats DdpgAgent::update(ReplayBuffer& buffer, std::mt19937_64& rng) {
  const std::size_t n = cfg_.batch;
  const std::size_t S = state_size_;
  const auto batch = buffer.sample_prioritized(n, rng, beta());

  // targets y = r + gamma Q'(s', mu'(s'))
  in_a_.resize(n * S);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(batch.items[i]->s_next.begin(), S, in_a_.begin() + static_cast<std::ptrdiff_t>(i * S));
  target_actor_.forward(in_a_, n, c_next_actor_);
  in_c_.resize(n * (S + 1));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(in_a_.begin() + static_cast<std::ptrdiff_t>(i * S), S,
                in_c_.begin() + static_cast<std::ptrdiff_t>(i * (S + 1)));
    in_c_[i * (S + 1) + S] = c_next_actor_.acts.back()[i];
  }
  target_critic_.forward(in_c_, n, c_next_critic_);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = *batch.items[i];
    y[i] = t.done ? t.r : t.r + cfg_.gamma * c_next_critic_.acts.back()[i];
  }

  // critic: minimize mean w (y - Q(s, a))^2
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = *batch.items[i];
    std::copy_n(t.s.begin(), S, in_c_.begin() + static_cast<std::ptrdiff_t>(i * (S + 1)));
    in_c_[i * (S + 1) + S] = t.a[0];
  }
  critic_.forward(in_c_, n, c_critic_);
  std::vector<double> td(n);
  UpdateStats st;
  up_.resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    td[i] = y[i] - c_critic_.acts.back()[i];
    st.loss += batch.weights[i] * td[i] * td[i] * inv_n;
    st.mean_abs_td += std::abs(td[i]) * inv_n;
    up_[i] = -2.0 * batch.weights[i] * td[i] * inv_n;
  }
  g_critic_.zero();
  critic_.backward(c_critic_, up_, g_critic_, nullptr);
  critic_opt_.step(critic_, g_critic_);

  // actor: ascend Q(s, mu(s)) via dQ/da * dmu/dtheta
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(batch.items[i]->s.begin(), S, in_a_.begin() + static_cast<std::ptrdiff_t>(i * S));
  actor_.forward(in_a_, n, c_actor_);
  for (std::size_t i = 0; i < n; ++i) in_c_[i * (S + 1) + S] = c_actor_.acts.back()[i];
  critic_.forward(in_c_, n, c_policy_critic_);
  std::fill(up_.begin(), up_.end(), -inv_n);
  std::vector<double> dq;
  critic_.backward_input(c_policy_critic_, up_, dq);
  for (std::size_t i = 0; i < n; ++i) up_[i] = dq[i * (S + 1) + S];
  if (cfg_.preact_penalty > 0.0) {
    const auto out = actor_.layer(actor_.layer_count() - 1).activation;
    for (std::size_t i = 0; i < n; ++i)
      up_[i] += 2.0 * cfg_.preact_penalty * inv_n * preact_times_slope(out, c_actor_.acts.back()[i]);
  }
  g_actor_.zero();
  actor_.backward(c_actor_, up_, g_actor_, nullptr);
  actor_opt_.step(actor_, g_actor_);

  nn::soft_update(target_actor_, actor_, cfg_.tau);
  nn::soft_update(target_critic_, critic_, cfg_.tau);
  if (cfg_.prioritized) buffer.update_from_td(batch.indices, td);
  return st;
}

EpisodeStats ddpg_episode(DdpgAgent& agent, AgentEnv& env, ReplayBuffer& buffer, std::mt19937_64& rng) {
  const auto t0 = Clock::now();
  const auto& cfg = agent.config();
  EpisodeStats st;
  st.episode = agent.episodes();
  auto noise = agent.make_noise();
  const double scale = agent.noise_scale();
  auto s = env.reset();
  const std::size_t ready = std::max(cfg.batch, cfg.warmup);
  double td_sum = 0.0;
  double loss_sum = 0.0;
  for (;;) {
    const double a = act_with_noise(agent.actor(), s, noise, scale, rng);
    auto res = env.step(a);
    Transition t{s, {a}, res.reward * cfg.reward_scale, res.obs, res.terminal};
    td_sum += std::abs(agent.td_error(t)) / cfg.reward_scale;
    buffer.push(std::move(t));
    if (buffer.size() >= ready) {
      loss_sum += agent.update(buffer, rng).loss;
      ++st.updates;
    }
    st.ret += res.reward;
    st.fuel_g += res.fuel_g;
    st.final_soc = res.soc;
    ++st.steps;
    s = std::move(res.obs);
    if (res.ended()) {
      st.terminated = res.terminal;
      break;
    }
  }
  st.mean_abs_td = td_sum / static_cast<double>(st.steps);
  st.mean_loss = st.updates ? loss_sum / static_cast<double>(st.updates) : 0.0;
  agent.end_episode();
  st.wall_ms = ms_since(t0);
  return st;
}

// ---------------------------------------------------------------- DQN

void DqnConfig::validate() const {
  if (hidden == 0 || hidden_layers == 0) throw Error("DQN needs at least one hidden layer");
  if (actions < 2) throw Error("DQN needs at least two actions");
  if (!(lr > 0.0)) throw Error("learning rate must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("gamma must lie in [0, 1]");
  if (batch == 0 || capacity < batch) throw Error("need 1 <= batch <= capacity");
  if (target_period == 0) throw Error("target period must be >= 1");
  if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0))
    throw Error("epsilon must lie in [0, 1]");
  if (!(reward_scale > 0.0)) throw Error("reward scale must be positive");
}

DqnAgent::DqnAgent(std::size_t state_size, DqnConfig cfg, std::uint64_t seed) : state_size_(state_size), cfg_(cfg) {
  cfg_.validate();
  if (state_size == 0) throw Error("state size must be positive");
  std::mt19937_64 rng(seed);
  q_ = nn::DenseNetwork(layer_sizes(state_size, cfg_.hidden, cfg_.hidden_layers, cfg_.actions),
                        nn::Activation::tanh, nn::Activation::linear);
  q_.init_uniform(rng, 3e-3);
  target_ = q_;
  opt_ = nn::Optimizer(q_, rule(cfg_.optimizer, cfg_.lr));
  g_ = q_.make_gradients();
}

ReplayBuffer DqnAgent::make_buffer() const {
  return ReplayBuffer(cfg_.capacity, cfg_.prioritized ? cfg_.priority_alpha : 0.0);
}

double DqnAgent::epsilon() const {
  if (epsilon_override_ >= 0.0) return epsilon_override_;
  return linear_schedule(cfg_.epsilon_start, cfg_.epsilon_end, episodes_, cfg_.schedule_episodes);
}

double DqnAgent::beta() const {
  if (!cfg_.prioritized) return 0.0;
  return linear_schedule(cfg_.beta_start, cfg_.beta_end, episodes_, cfg_.schedule_episodes);
}

std::vector<double> DqnAgent::q_values(std::span<const double> s) const {
  check_state(s, state_size_);
  return q_.forward(s);
}

std::size_t DqnAgent::greedy(std::span<const double> s) const {
  const auto q = q_values(s);
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

std::size_t DqnAgent::act(std::span<const double> s, double epsilon, std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (epsilon > 0.0 && u(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, cfg_.actions - 1);
    return pick(rng);
  }
  return greedy(s);
}

double DqnAgent::action_value(std::size_t index) const {
  if (index >= cfg_.actions) throw Error("action index out of range");
  return static_cast<double>(index) / static_cast<double>(cfg_.actions - 1);
}

double DqnAgent::td_target(double r, std::span<const double> s_next, bool done) const {
  return td_target_dqn(r, s_next, done, target_, cfg_.gamma);
}

double DqnAgent::td_error(const Transition& t) const {
  const auto idx = static_cast<std::size_t>(t.a.at(0));
  return td_target(t.r, t.s_next, t.done) - q_values(t.s).at(idx);
}

void DqnAgent::tick() {
  ++steps_;
  if (steps_ % cfg_.target_period == 0) nn::hard_update(target_, q_);
}

UpdateStats DqnAgent::update(ReplayBuffer& buffer, std::mt19937_64& rng) {
  const std::size_t n = cfg_.batch;
  const std::size_t S = state_size_;
  const std::size_t A = cfg_.actions;
  const auto batch = buffer.sample_prioritized(n, rng, beta());
  in_.resize(n * S);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(batch.items[i]->s_next.begin(), S, in_.begin() + static_cast<std::ptrdiff_t>(i * S));
  target_.forward(in_, n, c_next_);
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(batch.items[i]->s.begin(), S, in_.begin() + static_cast<std::ptrdiff_t>(i * S));
  q_.forward(in_, n, c_q_);

  UpdateStats st;
  std::vector<double> td(n);
  up_.assign(n * A, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = *batch.items[i];
    double y = t.r;
    if (!t.done) {
      const auto* row = c_next_.acts.back().data() + i * A;
      y += cfg_.gamma * *std::max_element(row, row + A);
    }
    const auto a = static_cast<std::size_t>(t.a[0]);
    td[i] = y - c_q_.acts.back()[i * A + a];
    st.loss += batch.weights[i] * td[i] * td[i] * inv_n;
    st.mean_abs_td += std::abs(td[i]) * inv_n;
    up_[i * A + a] = -2.0 * batch.weights[i] * td[i] * inv_n;
  }
  g_.zero();
  q_.backward(c_q_, up_, g_, nullptr);
  opt_.step(q_, g_);
  if (cfg_.prioritized) buffer.update_from_td(batch.indices, td);
  return st;
}

EpisodeStats dqn_episode(DqnAgent& agent, AgentEnv& env, ReplayBuffer& buffer, std::mt19937_64& rng) {
  const auto t0 = Clock::now();
  const auto& cfg = agent.config();
  EpisodeStats st;
  st.episode = agent.episodes();
  const double eps = agent.epsilon();
  auto s = env.reset();
  const std::size_t ready = std::max(cfg.batch, cfg.warmup);
  double td_sum = 0.0;
  double loss_sum = 0.0;
  for (;;) {
    const std::size_t idx = agent.act(s, eps, rng);
    auto res = env.step(agent.action_value(idx));
    Transition t{s, {static_cast<double>(idx)}, res.reward * cfg.reward_scale, res.obs, res.terminal};
    td_sum += std::abs(agent.td_error(t)) / cfg.reward_scale;
    buffer.push(std::move(t));
    if (buffer.size() >= ready) {
      loss_sum += agent.update(buffer, rng).loss;
      ++st.updates;
    }
    agent.tick();
    st.ret += res.reward;
    st.fuel_g += res.fuel_g;
    st.final_soc = res.soc;
    ++st.steps;
    s = std::move(res.obs);
    if (res.ended()) {
      st.terminated = res.terminal;
      break;
    }
  }
  st.mean_abs_td = td_sum / static_cast<double>(st.steps);
  st.mean_loss = st.updates ? loss_sum / static_cast<double>(st.updates) : 0.0;
  agent.end_episode();
  st.wall_ms = ms_since(t0);
  return st;
}

// ---------------------------------------------------------------- training

std::vector<double> moving_average(std::span<const double> xs, std::size_t window) {
  if (window == 0) throw Error("moving-average window must be positive");
  std::vector<double> out;
  if (xs.size() < window) return out;
  double acc = std::accumulate(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(window), 0.0);
  out.push_back(acc / static_cast<double>(window));
  for (std::size_t i = window; i < xs.size(); ++i) {
    acc += xs[i] - xs[i - window];
    out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

void ConvergenceCriterion::validate() const {
  if (window == 0 || lookback == 0) throw Error("convergence window and lookback must be positive");
  if (!(tolerance > 0.0)) throw Error("convergence tolerance must be positive");
}

bool ConvergenceCriterion::converged(std::span<const double> returns) const {
  if (returns.size() < min_episodes()) return false;
  const auto ma = moving_average(returns, window);
  const double latest = ma.back();
  const double band = tolerance * std::abs(latest);
  for (std::size_t j = ma.size() - 1 - lookback; j < ma.size(); ++j)
    if (std::abs(ma[j] - latest) > band) return false;
  return true;
}

std::vector<double> TrainLog::returns() const {
  std::vector<double> r;
  r.reserve(episodes.size());
  for (const auto& e : episodes) r.push_back(e.ret);
  return r;
}

TrainLog train_ddpg(DdpgAgent& agent, AgentEnv& env, ReplayBuffer& buffer, std::size_t budget,
                    const ConvergenceCriterion& criterion, std::mt19937_64& rng) {
  if (budget == 0) throw Error("episode budget must be positive");
  criterion.validate();
  TrainLog log;
  std::vector<double> returns;
  for (std::size_t e = 0; e < budget; ++e) {
    log.episodes.push_back(ddpg_episode(agent, env, buffer, rng));
    log.wall_s += log.episodes.back().wall_ms / 1000.0;
    returns.push_back(log.episodes.back().ret);
    if (criterion.converged(returns)) {
      log.converged = true;
      break;
    }
  }
  log.episodes_to_convergence = log.episodes.size();
  return log;
}

env::Trajectory evaluate_actor(const nn::DenseNetwork& actor, env::EmsEnv& env, const cycles::DrivingCycle& cycle,
                               double soc0) {
  const double pmax = env.dynamics().max_engine_power();
  return env::run_policy(env, cycle, soc0, [&](const env::EmsState& s, std::size_t) {
    const auto o = env::normalize(s, env.dynamics().config(), env.dynamics().powertrain().battery);
    return std::clamp(actor.forward(o)[0], 0.0, 1.0) * pmax;
  });
}

}  // namespace ems::agents
