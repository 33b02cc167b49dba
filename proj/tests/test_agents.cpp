#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ems/agents.hpp"
#include "ems/error.hpp"
#include "support.hpp"

using namespace ems;
using namespace ems::agents;
using doctest::Approx;

namespace {

// Two states, two actions; action a moves to state a. Episodes are cut after
// `horizon` steps without being terminal, so Q* is the infinite-horizon value.
struct ToyMdp : AgentEnv {
  static constexpr double r[2][2] = {{0.0, 1.0}, {2.0, 0.0}};
  std::size_t horizon = 10, t = 0, s = 0, starts = 0;

  static std::vector<double> enc(std::size_t s) { return s == 0 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}; }
  std::size_t state_size() const override { return 2; }
  std::vector<double> reset() override {
    t = 0;
    s = starts++ % 2;
    return enc(s);
  }
  StepResult step(double action) override {
    const std::size_t a = action > 0.5 ? 1 : 0;
    StepResult out;
    out.reward = r[s][a];
    s = a;
    out.obs = enc(s);
    out.truncated = ++t >= horizon;
    return out;
  }
};

// value iteration oracle
std::array<std::array<double, 2>, 2> q_star(double gamma) {
  std::array<std::array<double, 2>, 2> q{};
  for (int it = 0; it < 10000; ++it) {
    auto n = q;
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 2; ++a) n[s][a] = ToyMdp::r[s][a] + gamma * std::max(q[a][0], q[a][1]);
    q = n;
  }
  return q;
}

// One-step bandit with reward -(a - 0.3)^2.
struct Bandit : AgentEnv {
  std::size_t state_size() const override { return 1; }
  std::vector<double> reset() override { return {0.5}; }
  StepResult step(double a) override {
    StepResult out;
    out.obs = {0.5};
    out.reward = -(a - 0.3) * (a - 0.3);
    out.terminal = true;
    return out;
  }
};

nn::DenseNetwork bias_only(std::size_t in, std::vector<double> bias) {
  nn::DenseNetwork n({in, bias.size()}, nn::Activation::linear, nn::Activation::linear);
  std::fill(n.layer(0).weights.begin(), n.layer(0).weights.end(), 0.0);
  n.layer(0).bias = std::move(bias);
  return n;
}

}  // namespace

TEST_CASE("td targets: hand-computed examples") {
  const std::vector<double> s{0.2, 0.4};
  const auto q = bias_only(2, {1.0, 3.0, 2.0});
  CHECK(td_target_dqn(1.5, s, true, q, 0.9) == 1.5);
  CHECK(td_target_dqn(1.5, s, false, q, 0.0) == 1.5);
  CHECK(td_target_dqn(1.5, s, false, q, 0.9) == Approx(1.5 + 0.9 * 3.0));

  // mu'(s') = sigmoid(0) = 0.5, Q'(s', a) = 1 s0 + 2 s1 + 4 a - 1
  nn::DenseNetwork actor({2, 1}, nn::Activation::linear, nn::Activation::sigmoid);
  actor.layer(0).weights = {0.0, 0.0};
  actor.layer(0).bias = {0.0};
  nn::DenseNetwork critic({3, 1}, nn::Activation::linear, nn::Activation::linear);
  critic.layer(0).weights = {1.0, 2.0, 4.0};
  critic.layer(0).bias = {-1.0};
  const double qn = 0.2 + 0.8 + 2.0 - 1.0;
  CHECK(td_target_ddpg(-0.5, s, false, actor, critic, 0.95) == Approx(-0.5 + 0.95 * qn));
  CHECK(td_target_ddpg(-0.5, s, true, actor, critic, 0.95) == -0.5);
  CHECK(td_target_ddpg(-0.5, s, false, actor, critic, 0.0) == -0.5);
}

TEST_CASE("epsilon-greedy: epsilon 1 is uniform, epsilon 0 is greedy") {
  DqnConfig cfg;
  cfg.actions = 5;
  DqnAgent agent(2, cfg, 1);
  auto& out = agent.network().layer(agent.network().layer_count() - 1);
  std::fill(out.weights.begin(), out.weights.end(), 0.0);
  out.bias = {0, 0, 5, 0, 0};
  const std::vector<double> s{0.1, -0.3};
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) CHECK(agent.act(s, 0.0, rng) == 2);

  const int n = 10000;
  std::vector<double> hits(5, 0);
  for (int i = 0; i < n; ++i) hits[agent.act(s, 1.0, rng)] += 1;
  double chi2 = 0;
  for (double h : hits) chi2 += (h - n / 5.0) * (h - n / 5.0) / (n / 5.0);
  CHECK(chi2 < 18.47);  // 4 dof, p = 0.001

  CHECK(agent.action_value(0) == 0.0);
  CHECK(agent.action_value(4) == 1.0);
  CHECK(agent.action_value(2) == Approx(0.5));
}

TEST_CASE("DQN learns Q* of a two-state MDP") {
  const double gamma = 0.5;
  const auto qs = q_star(gamma);
  DqnConfig cfg;
  cfg.actions = 2;
  cfg.hidden = 16;
  cfg.gamma = gamma;
  cfg.batch = 32;
  cfg.warmup = 32;
  cfg.capacity = 2000;
  cfg.target_period = 50;
  cfg.lr = 3e-3;
  cfg.schedule_episodes = 300;
  cfg.epsilon_end = 0.2;
  DqnAgent agent(2, cfg, 3);
  auto buffer = agent.make_buffer();
  ToyMdp env;
  std::mt19937_64 rng(4);
  for (int e = 0; e < 500; ++e) dqn_episode(agent, env, buffer, rng);
  double worst = 0.0;
  for (std::size_t s = 0; s < 2; ++s) {
    const auto q = agent.q_values(ToyMdp::enc(s));
    for (std::size_t a = 0; a < 2; ++a) worst = std::max(worst, std::abs(q[a] - qs[s][a]));
  }
  CHECK(worst < 0.05);
  // the optimal policy alternates 0 -> 1 -> 0
  CHECK(agent.greedy(ToyMdp::enc(0)) == 1);
  CHECK(agent.greedy(ToyMdp::enc(1)) == 0);
}

TEST_CASE("DDPG finds the optimum of a one-step bandit") {
  DdpgConfig cfg;
  cfg.hidden = 16;
  cfg.batch = 32;
  cfg.warmup = 32;
  cfg.capacity = 5000;
  cfg.critic_lr = 3e-3;
  cfg.actor_lr = 1e-3;
  cfg.tau = 0.01;
  cfg.noise_start = 0.3;
  cfg.noise_end = 0.05;
  cfg.schedule_episodes = 1500;
  cfg.prioritized = false;
  DdpgAgent agent(1, cfg, 5);
  auto buffer = agent.make_buffer();
  Bandit env;
  std::mt19937_64 rng(6);
  for (int e = 0; e < 2000; ++e) ddpg_episode(agent, env, buffer, rng);
  CHECK(std::abs(agent.act(std::vector<double>{0.5}) - 0.3) < 0.05);
}

TEST_CASE("pre-activation penalty pulls a saturated actor back; zero penalty leaves it") {
  // The critic ignores its action input, so dQ/da = 0 and only the penalty
  // can move the actor. With SGD the output bias moves by exactly
  // lr * 2 * penalty * mean(z) per step.
  for (double penalty : {0.0, 1e-2}) {
    DdpgConfig cfg;
    cfg.hidden = 8;
    cfg.batch = 4;
    cfg.warmup = 4;
    cfg.capacity = 100;
    cfg.prioritized = false;
    cfg.optimizer = nn::UpdateRule::Kind::sgd;
    cfg.actor_lr = 0.5;
    cfg.preact_penalty = penalty;
    DdpgAgent agent(1, cfg, 3);
    auto& w0 = agent.critic().layer(0);
    for (std::size_t j = 0; j < w0.out; ++j) w0.weights[1 * w0.out + j] = 0.0;
    agent.critic().set_frozen(0, true);  // keeps the action row at zero
    auto& out = agent.actor().layer(agent.actor().layer_count() - 1);
    std::fill(out.weights.begin(), out.weights.end(), 0.0);
    out.bias[0] = 12.0;  // a = sigmoid(12), saturated
    agent.reset_optimizers();
    auto buffer = agent.make_buffer();
    for (int i = 0; i < 4; ++i) buffer.push({{0.5}, {0.5}, -1.0, {0.5}, true});
    std::mt19937_64 rng(1);
    const auto before = agent.actor().parameters();
    const std::vector<double> s{0.5};
    for (int it = 0; it < 20; ++it) {
      const double a = agent.act(s), z = std::log(a / (1.0 - a));
      const double b = agent.actor().layer(agent.actor().layer_count() - 1).bias[0];
      agent.update(buffer, rng);
      CHECK(agent.actor().layer(agent.actor().layer_count() - 1).bias[0] ==
            Approx(b - 0.5 * 2.0 * penalty * z).epsilon(1e-6));
    }
    if (penalty == 0.0)
      CHECK(agent.actor().parameters() == before);
    else
      CHECK(agent.act(s) < 1.0 / (1.0 + std::exp(-11.0)));  // z fell below 11
  }
}

TEST_CASE("critic loss strictly decreases on a fixed batch with a small step") {
  test::Gen gen(7);
  auto critic = gen.network({4, 16, 16, 1});
  const std::size_t rows = 32;
  const auto x = gen.reals(rows * 4, -1, 1);
  const auto y = gen.reals(rows, -2, 2);
  auto loss = [&] {
    nn::ForwardCache c;
    critic.forward(x, rows, c);
    double l = 0;
    for (std::size_t i = 0; i < rows; ++i) l += (c.output()[i] - y[i]) * (c.output()[i] - y[i]);
    return l / rows;
  };
  double prev = loss();
  for (int it = 0; it < 100; ++it) {
    auto total = critic.make_gradients();
    for (std::size_t i = 0; i < rows; ++i) {
      const std::span<const double> xi(x.data() + i * 4, 4);
      const double d = critic.forward(xi)[0] - y[i];
      const auto r = nn::backward(critic, xi, std::vector<double>{2.0 * d / rows});
      for (std::size_t l = 0; l < critic.layer_count(); ++l) {
        for (std::size_t j = 0; j < total.weights[l].size(); ++j) total.weights[l][j] += r.grads.weights[l][j];
        for (std::size_t j = 0; j < total.bias[l].size(); ++j) total.bias[l][j] += r.grads.bias[l][j];
      }
    }
    nn::apply_update(critic, total, 1e-3);
    const double now = loss();
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("exploration noise: zero scale, mean, clamp, decay") {
  DdpgConfig cfg;
  DdpgAgent agent(3, cfg, 8);
  const std::vector<double> s{0.1, 0.2, 0.7};
  const double mu = agent.act(s);
  std::mt19937_64 rng(9);
  auto noise = agent.make_noise();
  for (int i = 0; i < 50; ++i) CHECK(act_with_noise(agent.actor(), s, noise, 0.0, rng) == mu);

  // small output init keeps mu near 0.5, away from the clamp
  REQUIRE(std::abs(mu - 0.5) < 0.1);
  const double sigma = 0.05;
  const int n = 10000;
  double sum = 0;
  for (int i = 0; i < n; ++i) sum += act_with_noise(agent.actor(), s, noise, sigma, rng);
  CHECK(std::abs(sum / n - mu) < 3 * sigma / 100);

  for (int i = 0; i < 1000; ++i) {
    const double a = act_with_noise(agent.actor(), s, noise, 5.0, rng);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }

  NoiseProcess ou{NoiseKind::ou, 0.15, 0.0};
  double last = 0;
  for (int i = 0; i < 5; ++i) last = ou.sample(0.0, rng);
  CHECK(last == 0.0);

  CHECK(linear_schedule(1.0, 0.0, 0, 10) == 1.0);
  CHECK(linear_schedule(1.0, 0.0, 5, 10) == Approx(0.5));
  CHECK(linear_schedule(1.0, 0.0, 10, 10) == 0.0);
  CHECK(linear_schedule(1.0, 0.0, 99, 10) == 0.0);
  CHECK(parse_noise(to_string(NoiseKind::ou)) == NoiseKind::ou);
  CHECK_THROWS(parse_noise("pink"));
}

TEST_CASE("same seed, same agent: identical episodes and parameters") {
  const auto pt = powertrain::Powertrain::defaults();
  test::Gen gen(10);
  const auto cycle = gen.cycle(120, 20.0);
  DdpgConfig cfg;
  cfg.hidden = 8;
  cfg.batch = 16;
  cfg.warmup = 16;
  auto run = [&] {
    DdpgAgent agent(3, cfg, 11);
    EmsAgentEnv env(pt, env::EnvConfig{}, {cycle}, 0.02, 12);
    auto buffer = agent.make_buffer();
    std::mt19937_64 rng(13);
    std::vector<double> rets;
    for (int e = 0; e < 3; ++e) rets.push_back(ddpg_episode(agent, env, buffer, rng).ret);
    return std::make_pair(rets, agent.actor().parameters());
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);

  // noise-free evaluation is a pure function of the actor
  DdpgAgent agent(3, cfg, 14);
  env::EmsEnv e(pt, env::EnvConfig{});
  const auto t1 = evaluate_actor(agent.actor(), e, cycle, 0.65);
  const auto t2 = evaluate_actor(agent.actor(), e, cycle, 0.65);
  CHECK(t1.total_fuel() == t2.total_fuel());
}

TEST_CASE("EMS adapter: action maps to engine power, infeasibility is terminal") {
  const auto pt = powertrain::Powertrain::defaults();
  test::Gen gen(15);
  EmsAgentEnv env(pt, env::EnvConfig{}, {gen.cycle(30, 15.0)});
  CHECK(env.power_of(0.0) == 0.0);
  CHECK(env.power_of(1.0) == Approx(pt.egs.max_engine_power()));
  const auto s = env.reset();
  CHECK(s.size() == 3);
  std::size_t steps = 0;
  for (;;) {
    const auto r = env.step(0.5);
    ++steps;
    if (r.ended()) {
      // the cycle runs out: truncated, not terminal, unless SOC left its window
      CHECK(r.truncated != r.terminal);
      break;
    }
  }
  CHECK(steps <= 30);
}

TEST_CASE("convergence criterion and moving average") {
  CHECK(moving_average(std::vector<double>{1, 2, 3, 4}, 2) == std::vector<double>{1.5, 2.5, 3.5});
  CHECK(moving_average(std::vector<double>{1}, 2).empty());
  CHECK_THROWS(moving_average(std::vector<double>{1}, 0));

  // defaults: 50-episode moving average, 1% band over the last 100 episodes
  const ConvergenceCriterion d;
  CHECK(d.min_episodes() == 150);
  std::vector<double> flat(150, -100.0);
  CHECK(d.converged(flat));
  flat.pop_back();
  CHECK_FALSE(d.converged(flat));  // too few episodes

  const ConvergenceCriterion c{10, 20, 0.01};

  std::vector<double> trend;
  for (int i = 0; i < 60; ++i) trend.push_back(-100.0 + i);
  CHECK_FALSE(c.converged(trend));

  // a 0.5% wobble stays inside the 1% band
  std::vector<double> wobble;
  for (int i = 0; i < 40; ++i) wobble.push_back(i % 2 ? -100.0 : -100.5);
  CHECK(c.converged(wobble));
}

TEST_CASE("train_ddpg: budget and early stop") {
  DdpgConfig cfg;
  cfg.hidden = 8;
  cfg.batch = 8;
  cfg.warmup = 8;
  DdpgAgent agent(1, cfg, 16);
  auto buffer = agent.make_buffer();
  Bandit env;
  std::mt19937_64 rng(17);
  CHECK_THROWS(train_ddpg(agent, env, buffer, 0, {}, rng));
  const auto log = train_ddpg(agent, env, buffer, 25, {}, rng);
  // 25 < window + lookback, so the criterion cannot fire
  CHECK(log.episodes.size() == 25);
  CHECK_FALSE(log.converged);
  CHECK(log.episodes_to_convergence == 25);
}

TEST_CASE("config validation") {
  DdpgConfig d;
  d.tau = 1.5;
  CHECK_THROWS(d.validate());
  d = {};
  d.batch = 0;
  CHECK_THROWS(d.validate());
  d = {};
  d.preact_penalty = -1e-3;
  CHECK_THROWS(d.validate());
  DqnConfig q;
  q.actions = 1;
  CHECK_THROWS(q.validate());
  ConvergenceCriterion c;
  c.window = 0;
  CHECK_THROWS(c.validate());
}
