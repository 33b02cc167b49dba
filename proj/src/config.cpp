#include "ems/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "ems/error.hpp"
#include "ems/hash.hpp"

namespace ems::config {
namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (b != e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || !std::isfinite(v)) throw Error("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error("expected a non-negative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t') {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  for (const auto& x : out)
    if (x.empty()) throw Error("empty entry in list '" + s + "'");
  return out;
}

struct Binding {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class F>
Binding num(std::string sec, std::string key, F field) {
  return {std::move(sec), std::move(key), [field](const ExperimentConfig& c) { return fmt(field(const_cast<ExperimentConfig&>(c))); },
          [field](ExperimentConfig& c, const std::string& v) { field(c) = to_double(v); }};
}

template <class F>
Binding uint(std::string sec, std::string key, F field) {
  return {std::move(sec), std::move(key),
          [field](const ExperimentConfig& c) { return std::to_string(field(const_cast<ExperimentConfig&>(c))); },
          [field](ExperimentConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(to_uint(v));
          }};
}

template <class F>
Binding flag(std::string sec, std::string key, F field) {
  return {std::move(sec), std::move(key),
          [field](const ExperimentConfig& c) { return std::string(field(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
          [field](ExperimentConfig& c, const std::string& v) { field(c) = to_bool(v); }};
}

template <class F>
Binding text(std::string sec, std::string key, F field) {
  return {std::move(sec), std::move(key), [field](const ExperimentConfig& c) { return std::string(field(const_cast<ExperimentConfig&>(c))); },
          [field](ExperimentConfig& c, const std::string& v) { field(c) = v; }};
}

std::string_view kind_name(nn::UpdateRule::Kind k) { return k == nn::UpdateRule::Kind::adam ? "adam" : "sgd"; }
nn::UpdateRule::Kind parse_kind(const std::string& s) {
  if (s == "adam") return nn::UpdateRule::Kind::adam;
  if (s == "sgd") return nn::UpdateRule::Kind::sgd;
  throw Error("optimizer must be adam or sgd, got '" + s + "'");
}

const std::vector<Binding>& bindings() {
  using C = ExperimentConfig;
  static const std::vector<Binding> table = [] {
    std::vector<Binding> t;
    // experiment
    t.push_back(text("experiment", "name", [](C& c) -> std::string& { return c.name; }));
    t.push_back(uint("experiment", "seed", [](C& c) -> std::uint64_t& { return c.seed; }));
    t.push_back(uint("experiment", "seeds", [](C& c) -> std::size_t& { return c.seeds; }));
    t.push_back({"experiment", "output_dir", [](const C& c) { return c.output_dir.string(); },
                 [](C& c, const std::string& v) { c.output_dir = v; }});
    // cycles
    t.push_back(text("cycle", "target", [](C& c) -> std::string& { return c.target.spec; }));
    t.push_back(uint("cycle", "synth_seed", [](C& c) -> std::uint64_t& { return c.target.synth_seed; }));
    t.push_back({"cycle", "unit", [](const C& c) { return std::string(c.target.unit == cycles::SpeedUnit::kmh ? "kmh" : "mps"); },
                 [](C& c, const std::string& v) { c.target.unit = cycles::parse_unit(v); }});
    t.push_back({"cycle", "training",
                 [](const C& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.training.size(); ++i) s += (i ? "," : "") + c.training[i];
                   return s;
                 },
                 [](C& c, const std::string& v) { c.training = split_list(v); }});
    t.push_back(uint("cycle", "min_segment", [](C& c) -> std::size_t& { return c.transfer.min_segment; }));
    // powertrain
    t.push_back(num("vehicle", "mass", [](C& c) -> double& { return c.powertrain.vehicle.mass; }));
    t.push_back(num("vehicle", "rolling_coeff", [](C& c) -> double& { return c.powertrain.vehicle.rolling_coeff; }));
    t.push_back(num("vehicle", "drag_coeff", [](C& c) -> double& { return c.powertrain.vehicle.drag_coeff; }));
    t.push_back(num("vehicle", "frontal_area", [](C& c) -> double& { return c.powertrain.vehicle.frontal_area; }));
    t.push_back(num("egs", "generator_efficiency", [](C& c) -> double& { return c.powertrain.egs.generator_efficiency; }));
    t.push_back(num("egs", "gear_ratio", [](C& c) -> double& { return c.powertrain.egs.gear_ratio; }));
    t.push_back(num("battery", "capacity_ah", [](C& c) -> double& { return c.powertrain.battery.capacity_ah; }));
    t.push_back(num("battery", "open_circuit_voltage", [](C& c) -> double& { return c.powertrain.battery.open_circuit_voltage; }));
    t.push_back(num("battery", "internal_resistance", [](C& c) -> double& { return c.powertrain.battery.internal_resistance; }));
    t.push_back(num("battery", "soc_min", [](C& c) -> double& { return c.powertrain.battery.soc_min; }));
    t.push_back(num("battery", "soc_max", [](C& c) -> double& { return c.powertrain.battery.soc_max; }));
    t.push_back(flag("motor", "use_map", [](C& c) -> bool& { return c.powertrain.motor.use_map; }));
    t.push_back(num("motor", "constant_efficiency", [](C& c) -> double& { return c.powertrain.motor.constant_efficiency; }));
    // env
    t.push_back(num("env", "soc0", [](C& c) -> double& { return c.env.soc0; }));
    t.push_back(num("env", "gamma", [](C& c) -> double& { return c.env.gamma; }));
    t.push_back(num("env", "alpha", [](C& c) -> double& { return c.env.reward.alpha; }));
    t.push_back(num("env", "beta", [](C& c) -> double& { return c.env.reward.beta; }));
    t.push_back(num("env", "soc_ref", [](C& c) -> double& { return c.env.reward.soc_ref; }));
    t.push_back(num("env", "infeasible_penalty", [](C& c) -> double& { return c.env.infeasible_penalty; }));
    t.push_back(num("env", "demand_min", [](C& c) -> double& { return c.env.demand_min; }));
    t.push_back(num("env", "demand_max", [](C& c) -> double& { return c.env.demand_max; }));
    t.push_back(num("env", "accel_scale", [](C& c) -> double& { return c.env.accel_scale; }));
    t.push_back({"env", "egs_mode", [](const C& c) { return std::string(c.env.egs_mode == env::EgsMode::dynamic ? "dynamic" : "quasi_static"); },
                 [](C& c, const std::string& v) {
                   if (v == "dynamic") c.env.egs_mode = env::EgsMode::dynamic;
                   else if (v == "quasi_static") c.env.egs_mode = env::EgsMode::quasi_static;
                   else throw Error("egs_mode must be quasi_static or dynamic, got '" + v + "'");
                 }});
    t.push_back(num("env", "soc0_jitter", [](C& c) -> double& { return c.transfer.soc0_jitter; }));
    t.push_back(num("env", "segment_soc0_jitter", [](C& c) -> double& { return c.transfer.segment_soc0_jitter; }));
    // ddpg
    t.push_back(uint("ddpg", "hidden", [](C& c) -> std::size_t& { return c.transfer.ddpg.hidden; }));
    t.push_back(uint("ddpg", "hidden_layers", [](C& c) -> std::size_t& { return c.transfer.ddpg.hidden_layers; }));
    t.push_back(num("ddpg", "actor_lr", [](C& c) -> double& { return c.transfer.ddpg.actor_lr; }));
    t.push_back(num("ddpg", "critic_lr", [](C& c) -> double& { return c.transfer.ddpg.critic_lr; }));
    t.push_back({"ddpg", "optimizer", [](const C& c) { return std::string(kind_name(c.transfer.ddpg.optimizer)); },
                 [](C& c, const std::string& v) { c.transfer.ddpg.optimizer = parse_kind(v); }});
    t.push_back(num("ddpg", "tau", [](C& c) -> double& { return c.transfer.ddpg.tau; }));
    t.push_back(uint("ddpg", "batch", [](C& c) -> std::size_t& { return c.transfer.ddpg.batch; }));
    t.push_back(uint("ddpg", "capacity", [](C& c) -> std::size_t& { return c.transfer.ddpg.capacity; }));
    t.push_back(uint("ddpg", "warmup", [](C& c) -> std::size_t& { return c.transfer.ddpg.warmup; }));
    t.push_back(flag("ddpg", "prioritized", [](C& c) -> bool& { return c.transfer.ddpg.prioritized; }));
    t.push_back(num("ddpg", "priority_alpha", [](C& c) -> double& { return c.transfer.ddpg.priority_alpha; }));
    t.push_back(num("ddpg", "beta_start", [](C& c) -> double& { return c.transfer.ddpg.beta_start; }));
    t.push_back(num("ddpg", "beta_end", [](C& c) -> double& { return c.transfer.ddpg.beta_end; }));
    t.push_back({"ddpg", "noise", [](const C& c) { return std::string(agents::to_string(c.transfer.ddpg.noise)); },
                 [](C& c, const std::string& v) { c.transfer.ddpg.noise = agents::parse_noise(v); }});
    t.push_back(num("ddpg", "ou_theta", [](C& c) -> double& { return c.transfer.ddpg.ou_theta; }));
    t.push_back(num("ddpg", "noise_start", [](C& c) -> double& { return c.transfer.ddpg.noise_start; }));
    t.push_back(num("ddpg", "noise_end", [](C& c) -> double& { return c.transfer.ddpg.noise_end; }));
    t.push_back(num("ddpg", "reward_scale", [](C& c) -> double& { return c.transfer.ddpg.reward_scale; }));
    t.push_back(num("ddpg", "output_init", [](C& c) -> double& { return c.transfer.ddpg.output_init; }));
    t.push_back(num("ddpg", "preact_penalty", [](C& c) -> double& { return c.transfer.ddpg.preact_penalty; }));
    // training and transfer
    t.push_back(uint("transfer", "train_budget", [](C& c) -> std::size_t& { return c.transfer.train_budget; }));
    t.push_back(uint("transfer", "transfer_budget", [](C& c) -> std::size_t& { return c.transfer.transfer_budget; }));
    t.push_back(uint("transfer", "scratch_budget", [](C& c) -> std::size_t& { return c.scratch_budget; }));
    t.push_back(num("transfer", "noise_start", [](C& c) -> double& { return c.transfer.transfer_noise_start; }));
    t.push_back(num("transfer", "noise_end", [](C& c) -> double& { return c.transfer.transfer_noise_end; }));
    t.push_back(num("transfer", "negative_threshold", [](C& c) -> double& { return c.transfer.negative_threshold; }));
    t.push_back(uint("convergence", "window", [](C& c) -> std::size_t& { return c.transfer.criterion.window; }));
    t.push_back(uint("convergence", "lookback", [](C& c) -> std::size_t& { return c.transfer.criterion.lookback; }));
    t.push_back(num("convergence", "tolerance", [](C& c) -> double& { return c.transfer.criterion.tolerance; }));
    // dqn
    t.push_back(uint("dqn", "hidden", [](C& c) -> std::size_t& { return c.dqn.hidden; }));
    t.push_back(uint("dqn", "actions", [](C& c) -> std::size_t& { return c.dqn.actions; }));
    t.push_back(num("dqn", "lr", [](C& c) -> double& { return c.dqn.lr; }));
    t.push_back(uint("dqn", "batch", [](C& c) -> std::size_t& { return c.dqn.batch; }));
    t.push_back(uint("dqn", "capacity", [](C& c) -> std::size_t& { return c.dqn.capacity; }));
    t.push_back(uint("dqn", "target_period", [](C& c) -> std::size_t& { return c.dqn.target_period; }));
    t.push_back(num("dqn", "epsilon_start", [](C& c) -> double& { return c.dqn.epsilon_start; }));
    t.push_back(num("dqn", "epsilon_end", [](C& c) -> double& { return c.dqn.epsilon_end; }));
    t.push_back(num("dqn", "reward_scale", [](C& c) -> double& { return c.dqn.reward_scale; }));
    // dp
    t.push_back(uint("dp", "soc_nodes", [](C& c) -> std::size_t& { return c.dp_soc_nodes; }));
    t.push_back(uint("dp", "action_nodes", [](C& c) -> std::size_t& { return c.dp_action_nodes; }));
    t.push_back({"dp", "interpolation",
                 [](const C& c) { return std::string(c.dp_interpolation == dp::ValueInterpolation::nearest ? "nearest" : "linear"); },
                 [](C& c, const std::string& v) {
                   if (v == "nearest") c.dp_interpolation = dp::ValueInterpolation::nearest;
                   else if (v == "linear") c.dp_interpolation = dp::ValueInterpolation::linear;
                   else throw Error("interpolation must be linear or nearest, got '" + v + "'");
                 }});
    // metrics
    t.push_back(num("metrics", "fuel_density", [](C& c) -> double& { return c.fuel_density; }));
    t.push_back(num("metrics", "soc_correction", [](C& c) -> double& { return c.soc_correction; }));
    return t;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds == 0) throw Error("seeds must be >= 1");
  if (training.empty()) throw Error("at least one training cycle is required");
  powertrain.validate();
  env.validate(powertrain.battery);
  transfer.validate();
  dqn.validate();
  if (scratch_budget == 0) throw Error("scratch budget must be positive");
  if (dp_soc_nodes < 2 || dp_action_nodes < 2) throw Error("DP grid needs at least 2 points per axis");
  if (!(fuel_density > 0.0)) throw Error("fuel density must be positive");
  if (soc_correction < 0.0) throw Error("SOC correction factor must be >= 0");
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(std::string(source) + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, const Binding*> index;
  for (const auto& b : bindings()) index[b.section + "." + b.key] = &b;

  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ParseError(std::string(source) + ": key '" + section + "' must be inside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = index.find(full);
      if (it == index.end()) throw ParseError(std::string(source) + ": unknown key '" + full + "'");
      try {
        it->second->set(c, value.get_value<std::string>());
      } catch (const Error& e) {
        throw ParseError(std::string(source) + ": " + full + ": " + e.what());
      }
    }
  }
  // One discount factor drives the environment return and both agents.
  c.transfer.ddpg.gamma = c.env.gamma;
  c.dqn.gamma = c.env.gamma;
  try {
    c.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string(source) + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string canonical(const ExperimentConfig& c) {
  std::string out;
  std::string section;
  for (const auto& b : bindings()) {
    if (b.section != section) {
      if (!section.empty()) out += '\n';
      section = b.section;
      out += "[" + section + "]\n";
    }
    out += b.key + " = " + b.get(c) + "\n";
  }
  return out;
}

std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(canonical(c))); }

bool apply_env_overrides(ExperimentConfig& c) {
  const char* s = std::getenv("EMS_SEED");
  if (s == nullptr || *s == '\0') return false;
  try {
    c.seed = to_uint(s);
  } catch (const Error&) {
    throw Error(std::string("EMS_SEED must be a non-negative integer, got '") + s + "'");
  }
  return true;
}

cycles::DrivingCycle resolve_cycle(std::string_view spec, std::uint64_t synth_seed, cycles::SpeedUnit unit) {
  if (spec.find('/') == std::string_view::npos && spec.find('.') == std::string_view::npos)
    return cycles::synth_cycle(cycles::preset(spec), synth_seed);
  return cycles::load_cycle(std::string(spec), unit);
}

cycles::DrivingCycle resolve_cycle(const CycleSource& src) { return resolve_cycle(src.spec, src.synth_seed, src.unit); }

}  // namespace ems::config
