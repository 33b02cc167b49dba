#include "ems/transfer.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ems/error.hpp"
#include "ems/hash.hpp"

namespace ems::transfer {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T meta_get(const boost::property_tree::ptree& pt, const char* key, const fs::path& path) {
  try {
    return pt.get<T>(key);
  } catch (const boost::property_tree::ptree_error&) {
    throw ParseError(path.string() + ": missing or malformed key '" + key + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------- store

PolicyStore::PolicyStore(fs::path root) : root_(std::move(root)) {}

fs::path PolicyStore::dir(SpeedInterval s) const { return root_ / std::string(cycles::to_string(s)); }

bool PolicyStore::has(SpeedInterval s) const {
  const auto d = dir(s);
  return fs::exists(d / "actor.net") && fs::exists(d / "critic.net") && fs::exists(d / "meta.txt");
}

std::vector<SpeedInterval> PolicyStore::intervals() const {
  std::vector<SpeedInterval> out;
  for (auto s : {SpeedInterval::low, SpeedInterval::medium, SpeedInterval::high})
    if (has(s)) out.push_back(s);
  return out;
}

void write_meta(const EntryMeta& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "interval = " << cycles::to_string(m.interval) << '\n'
      << "config_hash = " << m.config_hash << '\n'
      << "seed = " << m.seed << '\n'
      << "episodes = " << m.episodes << '\n'
      << "converged = " << (m.converged ? "true" : "false") << '\n'
      << "final_return = " << fmt(m.final_return) << '\n'
      << "fallback = " << (m.fallback ? "true" : "false") << '\n'
      << "actor_digest = " << m.actor_digest << '\n'
      << "critic_digest = " << m.critic_digest << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

EntryMeta read_meta(const fs::path& path) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  EntryMeta m;
  try {
    m.interval = cycles::parse_interval(meta_get<std::string>(pt, "interval", path));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  m.config_hash = meta_get<std::string>(pt, "config_hash", path);
  m.seed = meta_get<std::uint64_t>(pt, "seed", path);
  m.episodes = meta_get<std::size_t>(pt, "episodes", path);
  m.converged = meta_get<bool>(pt, "converged", path);
  m.final_return = meta_get<double>(pt, "final_return", path);
  m.fallback = meta_get<bool>(pt, "fallback", path);
  m.actor_digest = meta_get<std::string>(pt, "actor_digest", path);
  m.critic_digest = meta_get<std::string>(pt, "critic_digest", path);
  return m;
}

void PolicyStore::save(const StoreEntry& entry) const {
  const auto d = dir(entry.meta.interval);
  fs::create_directories(d);
  entry.actor.save(d / "actor.net");
  entry.critic.save(d / "critic.net");
  EntryMeta m = entry.meta;
  m.actor_digest = hex64(fnv1a(read_file(d / "actor.net")));
  m.critic_digest = hex64(fnv1a(read_file(d / "critic.net")));
  write_meta(m, d / "meta.txt");
}

StoreEntry PolicyStore::load(SpeedInterval s) const {
  if (!has(s)) throw Error("policy store " + root_.string() + " has no entry for interval '" +
                           std::string(cycles::to_string(s)) + "'");
  const auto d = dir(s);
  StoreEntry e;
  e.meta = read_meta(d / "meta.txt");
  if (e.meta.interval != s) throw Error((d / "meta.txt").string() + ": interval does not match its directory");
  if (hex64(fnv1a(read_file(d / "actor.net"))) != e.meta.actor_digest)
    throw Error((d / "actor.net").string() + ": contents do not match meta.txt digest");
  if (hex64(fnv1a(read_file(d / "critic.net"))) != e.meta.critic_digest)
    throw Error((d / "critic.net").string() + ": contents do not match meta.txt digest");
  e.actor = nn::DenseNetwork::load(d / "actor.net");
  e.critic = nn::DenseNetwork::load(d / "critic.net");
  return e;
}

// ---------------------------------------------------------------- training

void TransferConfig::validate() const {
  ddpg.validate();
  criterion.validate();
  if (train_budget == 0 || transfer_budget == 0) throw Error("episode budgets must be positive");
  if (!(transfer_noise_start >= 0.0 && transfer_noise_end >= 0.0)) throw Error("noise scales must be >= 0");
  if (!(negative_threshold > 0.0 && negative_threshold < 1.0))
    throw Error("negative-transfer threshold must lie in (0, 1)");
  if (soc0_jitter < 0.0 || segment_soc0_jitter < 0.0) throw Error("soc0 jitter must be >= 0");
  if (min_segment < 2) throw Error("minimum segment length must be >= 2");
}

std::vector<cycles::DrivingCycle> segment_pool(const std::vector<cycles::DrivingCycle>& cs,
                                               SpeedInterval interval, std::size_t min_segment) {
  std::vector<cycles::DrivingCycle> pool;
  for (const auto& c : cs) {
    const auto cls = cycles::classify_intervals(c);
    for (const auto& seg : cls.segments) {
      if (seg.interval != interval || seg.size() < min_segment) continue;
      auto part = cycles::slice(c, seg.begin, seg.end);
      part.name = c.name + "[" + std::to_string(seg.begin) + ":" + std::to_string(seg.end) + "]";
      pool.push_back(std::move(part));
    }
  }
  return pool;
}

TrainedEntry train_interval(SpeedInterval interval, const std::vector<cycles::DrivingCycle>& pool,
                            const powertrain::Powertrain& pt, const env::EnvConfig& env_cfg,
                            const TransferConfig& cfg, std::uint64_t seed, const std::string& config_hash) {
  cfg.validate();
  if (pool.empty())
    throw Error("no training segments for interval '" + std::string(cycles::to_string(interval)) + "'");
  for (const auto& c : pool) {
    const auto cls = cycles::classify_intervals(c);
    if (cls.segments.size() != 1 || cls.segments.front().interval != interval)
      throw Error("segment '" + c.name + "' is not entirely in interval '" +
                  std::string(cycles::to_string(interval)) + "'");
  }
  auto dc = cfg.ddpg;
  dc.schedule_episodes = cfg.train_budget;
  agents::DdpgAgent agent(3, dc, seed);
  auto buffer = agent.make_buffer();
  agents::EmsAgentEnv aenv(pt, env_cfg, pool, cfg.segment_soc0_jitter, seed ^ 0x5bd1e995u);
  std::mt19937_64 rng(seed + 1);
  TrainedEntry out;
  out.log = agents::train_ddpg(agent, aenv, buffer, cfg.train_budget, cfg.criterion, rng);
  auto& e = out.entry;
  e.actor = agent.actor();
  e.critic = agent.critic();
  e.meta.interval = interval;
  e.meta.config_hash = config_hash;
  e.meta.seed = seed;
  e.meta.episodes = out.log.episodes.size();
  e.meta.converged = out.log.converged;
  e.meta.final_return = out.log.episodes.back().ret;
  return out;
}

// ---------------------------------------------------------------- composite policy

void CompositePolicy::set(SpeedInterval s, nn::DenseNetwork actor) {
  if (actor.input_size() != 3 || actor.output_size() != 1) throw Error("actor must map 3 inputs to 1 output");
  actors_[static_cast<int>(s)] = std::move(actor);
}

const nn::DenseNetwork& CompositePolicy::actor(SpeedInterval s) const {
  const auto& a = actors_[static_cast<int>(s)];
  if (!a) throw Error("composite policy has no actor for interval '" + std::string(cycles::to_string(s)) + "'");
  return *a;
}

SpeedInterval CompositePolicy::select(double speed) const {
  const auto s = cycles::classify_speed(speed);
  if (!has(s)) throw Error("composite policy has no actor for interval '" + std::string(cycles::to_string(s)) + "'");
  return s;
}

double CompositePolicy::act(const env::EmsState& s, const env::EnvConfig& cfg,
                            const powertrain::BatteryParams& bat) const {
  const auto o = env::normalize(s, cfg, bat);
  return std::clamp(actor(select(s.v)).forward(o)[0], 0.0, 1.0);
}

env::PowerPolicy CompositePolicy::power_policy(const env::Dynamics& dyn) const {
  const double pmax = dyn.max_engine_power();
  const auto cfg = dyn.config();
  const auto bat = dyn.powertrain().battery;
  return [self = *this, pmax, cfg, bat](const env::EmsState& s, std::size_t) { return self.act(s, cfg, bat) * pmax; };
}

CompositePolicy assemble_policy(const PolicyStore& store) {
  CompositePolicy p;
  const auto ivs = store.intervals();
  if (ivs.empty()) throw Error("policy store " + store.root().string() + " is empty");
  for (auto s : ivs) p.set(s, store.load(s).actor);
  return p;
}

CompositePolicy assemble_policy(const std::map<SpeedInterval, nn::DenseNetwork>& actors) {
  if (actors.empty()) throw Error("no actors to assemble");
  CompositePolicy p;
  for (const auto& [s, a] : actors) p.set(s, a);
  return p;
}

// ---------------------------------------------------------------- transfer

std::string hidden_bytes(const nn::DenseNetwork& net) {
  std::string out;
  for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
    const auto& layer = net.layer(l);
    out.append(reinterpret_cast<const char*>(layer.weights.data()), layer.weights.size() * sizeof(double));
    out.append(reinterpret_cast<const char*>(layer.bias.data()), layer.bias.size() * sizeof(double));
  }
  return out;
}

bool detect_negative_transfer(double transferred_return, double baseline_return, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error("negative-transfer threshold must lie in (0, 1)");
  return transferred_return < baseline_return - (1.0 - threshold) * std::abs(baseline_return);
}

double rollout_return(const nn::DenseNetwork& actor, const std::vector<cycles::DrivingCycle>& rollouts,
                      const env::EmsEnv& env, double soc0) {
  env::EmsEnv e = env;
  double total = 0.0;
  for (const auto& c : rollouts) total += agents::evaluate_actor(actor, e, c, soc0).total_reward();
  return total;
}

std::map<SpeedInterval, std::pair<double, double>> interval_totals(const env::Trajectory& traj) {
  std::map<SpeedInterval, std::pair<double, double>> out;
  for (const auto& r : traj.steps) {
    auto& t = out[cycles::classify_speed(r.v)];
    t.first += r.reward;
    t.second += r.info.fuel_g;
  }
  return out;
}

TransferResult transfer_to_cycle(const PolicyStore& store, const cycles::DrivingCycle& cycle,
                                 const powertrain::Powertrain& pt, const env::EnvConfig& env_cfg,
                                 const TransferConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  cycle.validate();
  const auto cls = cycles::classify_intervals(cycle);
  std::vector<SpeedInterval> present;
  for (const auto& seg : cls.segments)
    if (std::find(present.begin(), present.end(), seg.interval) == present.end()) present.push_back(seg.interval);
  std::sort(present.begin(), present.end());

  struct Slot {
    std::optional<agents::DdpgAgent> agent;
    std::optional<agents::ReplayBuffer> buffer;
    agents::NoiseProcess noise;
    std::string actor_hidden, critic_hidden;
    StoreEntry source;
  };
  std::array<Slot, 3> slots;
  auto dc = cfg.ddpg;
  dc.schedule_episodes = cfg.transfer_budget;
  dc.noise_start = cfg.transfer_noise_start;
  dc.noise_end = cfg.transfer_noise_end;
  for (auto s : present) {
    auto& slot = slots[static_cast<int>(s)];
    slot.source = store.load(s);  // throws naming the missing interval
    const auto& a = slot.source.actor;
    auto local = dc;
    local.hidden = a.layer(0).out;
    local.hidden_layers = a.layer_count() - 1;
    slot.agent.emplace(3, local, seed + 17 * (static_cast<std::uint64_t>(s) + 1));
    slot.agent->load_networks(slot.source.actor, slot.source.critic);
    slot.agent->freeze_hidden();
    slot.buffer.emplace(slot.agent->make_buffer());
    slot.noise = slot.agent->make_noise();
    slot.actor_hidden = hidden_bytes(slot.agent->actor());
    slot.critic_hidden = hidden_bytes(slot.agent->critic());
  }

  env::EmsEnv env(pt, env_cfg);
  const auto& bat = pt.battery;
  const double pmax = env.dynamics().max_engine_power();
  std::mt19937_64 rng(seed + 1);
  std::mt19937_64 soc_rng(seed ^ 0x5bd1e995u);
  TransferResult result;
  std::vector<double> returns;
  for (std::size_t e = 0; e < cfg.transfer_budget; ++e) {
    const auto t0 = Clock::now();
    double soc0 = env_cfg.soc0;
    if (cfg.soc0_jitter > 0.0) {
      std::uniform_real_distribution<double> u(-cfg.soc0_jitter, cfg.soc0_jitter);
      soc0 = std::clamp(soc0 + u(soc_rng), bat.soc_min, bat.soc_max);
    }
    env.reset(cycle, soc0);
    for (auto s : present) slots[static_cast<int>(s)].noise.reset();
    agents::EpisodeStats st;
    st.episode = e;
    double td_sum = 0.0;
    double loss_sum = 0.0;
    auto obs = agents::observe(env);
    for (;;) {
      auto& slot = slots[static_cast<int>(cycles::classify_speed(env.state().v))];
      auto& agent = *slot.agent;
      const double a = agents::act_with_noise(agent.actor(), obs, slot.noise, agent.noise_scale(), rng);
      const auto out = env.step({a * pmax});
      auto next = agents::observe(env);
      const auto& c = agent.config();
      agents::Transition t{obs, {a}, out.reward * c.reward_scale, next, out.info.infeasible};
      td_sum += std::abs(agent.td_error(t)) / c.reward_scale;
      slot.buffer->push(std::move(t));
      if (slot.buffer->size() >= std::max(c.batch, c.warmup)) {
        loss_sum += agent.update(*slot.buffer, rng).loss;
        ++st.updates;
      }
      st.ret += out.reward;
      st.fuel_g += out.info.fuel_g;
      st.final_soc = out.info.soc;
      ++st.steps;
      obs = std::move(next);
      if (out.done) {
        st.terminated = out.info.infeasible;
        break;
      }
    }
    for (auto s : present) slots[static_cast<int>(s)].agent->end_episode();
    st.mean_abs_td = td_sum / static_cast<double>(st.steps);
    st.mean_loss = st.updates ? loss_sum / static_cast<double>(st.updates) : 0.0;
    st.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    result.log.wall_s += st.wall_ms / 1000.0;
    result.log.episodes.push_back(st);
    returns.push_back(st.ret);
    if (cfg.criterion.converged(returns)) {
      result.log.converged = true;
      break;
    }
  }
  result.log.episodes_to_convergence = result.log.episodes.size();

  result.hidden_unchanged = true;
  std::map<SpeedInterval, nn::DenseNetwork> actors;
  for (auto s : present) {
    auto& slot = slots[static_cast<int>(s)];
    if (hidden_bytes(slot.agent->actor()) != slot.actor_hidden ||
        hidden_bytes(slot.agent->critic()) != slot.critic_hidden)
      result.hidden_unchanged = false;
    StoreEntry entry;
    entry.actor = slot.agent->actor();
    entry.critic = slot.agent->critic();
    entry.meta = slot.source.meta;
    entry.meta.seed = seed;
    entry.meta.episodes = result.log.episodes.size();
    entry.meta.converged = result.log.converged;
    entry.meta.final_return = result.log.episodes.back().ret;
    entry.meta.fallback = false;
    actors.emplace(s, entry.actor);
    result.entries.emplace(s, std::move(entry));
  }
  if (!result.hidden_unchanged) throw Error("transfer modified a frozen hidden layer");
  result.policy = assemble_policy(actors);

  env::EmsEnv eval_env(pt, env_cfg);
  const auto traj = env::run_policy(eval_env, cycle, env_cfg.soc0, result.policy.power_policy(eval_env.dynamics()));
  const auto totals = interval_totals(traj);
  for (auto s : present) {
    TransferReport r;
    r.interval = s;
    r.episodes = result.log.episodes.size();
    r.wall_s = result.log.wall_s;
    r.converged = result.log.converged;
    if (auto it = totals.find(s); it != totals.end()) {
      r.eval_return = it->second.first;
      r.eval_fuel = it->second.second;
    }
    for (const auto& rec : traj.steps)
      if (cycles::classify_speed(rec.v) == s) ++r.samples;
    result.reports.push_back(r);
  }
  return result;
}

}  // namespace ems::transfer
