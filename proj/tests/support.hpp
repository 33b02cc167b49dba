#pragma once

// Shared test helpers: a seeded generator for property tests and scratch
// directories.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ems/cycles.hpp"
#include "ems/network.hpp"

namespace ems::test {

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::size_t integer(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng); }
  std::vector<double> reals(std::size_t n, double lo, double hi) {
    std::vector<double> out(n);
    for (auto& x : out) x = real(lo, hi);
    return out;
  }

  // Smooth-ish random speed profile in m/s, bounded by vmax.
  cycles::DrivingCycle cycle(std::size_t n, double vmax, bool tracks = false) {
    cycles::DrivingCycle c;
    c.name = "gen";
    double v = real(0.0, vmax);
    for (std::size_t k = 0; k < n; ++k) {
      v = std::clamp(v + real(-2.0, 2.0), 0.0, vmax);
      c.v.push_back(v);
      if (tracks) {
        const double d = std::min(v, real(0.0, 1.0));
        c.v1.push_back(v + d);
        c.v2.push_back(v - d);
      }
    }
    return c;
  }

  nn::DenseNetwork network(const std::vector<std::size_t>& sizes, nn::Activation hidden = nn::Activation::tanh,
                           nn::Activation out = nn::Activation::linear, double out_scale = 1.0) {
    nn::DenseNetwork net(sizes, hidden, out);
    net.init_uniform(rng, out_scale);
    return net;
  }
};

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ems_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

}  // namespace ems::test
