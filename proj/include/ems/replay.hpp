#pragma once

// Replay memory with proportional prioritized sampling (sum-tree backed).

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ems::agents {

struct Transition {
  std::vector<double> s;
  std::vector<double> a;  // DDPG: normalized action; DQN: {action index}
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;  // true terminal; time-limit ends are stored as not done
};

struct SampledBatch {
  std::vector<std::size_t> indices;  // buffer slots, valid until the next push
  std::vector<double> weights;       // importance weights, max-normalized
  std::vector<const Transition*> items;
};

class ReplayBuffer {
 public:
  // alpha: priority exponent (0 = uniform); epsilon is added to |TD| priorities.
  explicit ReplayBuffer(std::size_t capacity, double alpha = 0.6, double epsilon = 1e-6);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }
  double alpha() const { return alpha_; }
  double epsilon() const { return epsilon_; }
  double max_priority() const { return max_priority_; }

  // priority must be > 0 and finite. The oldest entry is evicted at capacity.
  void push(Transition t, double priority);
  // Enters at the largest priority seen so far (1 for an empty history).
  void push(Transition t) { push(std::move(t), max_priority_); }

  // n independent draws with replacement.
  // P(i) = p_i^alpha / sum_j p_j^alpha; weights (N P(i))^-beta / max_j (N P(j))^-beta.
  SampledBatch sample_prioritized(std::size_t n, std::mt19937_64& rng, double beta) const;

  // New raw priorities for sampled slots.
  void update_priorities(const std::vector<std::size_t>& indices, const std::vector<double>& priorities);
  // |td| + epsilon
  void update_from_td(const std::vector<std::size_t>& indices, const std::vector<double>& td);

  const Transition& at(std::size_t slot) const { return items_.at(slot); }
  double priority(std::size_t slot) const;  // raw priority
  // Slot of the i-th oldest entry.
  std::size_t slot_of_age(std::size_t i) const;
  void clear();

 private:
  void set_leaf(std::size_t slot, double p_alpha);
  std::size_t find(double mass) const;

  std::size_t capacity_;
  std::size_t leaves_;  // power of two >= capacity
  double alpha_;
  double epsilon_;
  std::vector<Transition> items_;
  std::vector<double> raw_;
  std::vector<double> sum_;  // 2 * leaves_ nodes, root at 1
  std::vector<double> min_;
  std::size_t next_ = 0;
  std::size_t size_ = 0;
  double max_priority_ = 1.0;
};

}  // namespace ems::agents
