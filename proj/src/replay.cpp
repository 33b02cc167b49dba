#include "ems/replay.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ems/error.hpp"

namespace ems::agents {

ReplayBuffer::ReplayBuffer(std::size_t capacity, double alpha, double epsilon)
    : capacity_(capacity), alpha_(alpha), epsilon_(epsilon) {
  if (capacity == 0) throw Error("replay capacity must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("priority exponent must be >= 0");
  if (!(epsilon > 0.0)) throw Error("priority epsilon must be positive");
  leaves_ = 1;
  while (leaves_ < capacity_) leaves_ <<= 1;
  items_.resize(capacity_);
  raw_.assign(capacity_, 0.0);
  sum_.assign(2 * leaves_, 0.0);
  min_.assign(2 * leaves_, std::numeric_limits<double>::infinity());
}

void ReplayBuffer::set_leaf(std::size_t slot, double p_alpha) {
  std::size_t node = leaves_ + slot;
  sum_[node] = p_alpha;
  min_[node] = p_alpha;
  for (node >>= 1; node >= 1; node >>= 1) {
    sum_[node] = sum_[2 * node] + sum_[2 * node + 1];
    min_[node] = std::min(min_[2 * node], min_[2 * node + 1]);
  }
}

void ReplayBuffer::push(Transition t, double priority) {
  if (!(priority > 0.0) || !std::isfinite(priority))
    throw Error("replay priority must be positive and finite");
  const std::size_t slot = next_;
  items_[slot] = std::move(t);
  raw_[slot] = priority;
  set_leaf(slot, std::pow(priority, alpha_));
  max_priority_ = std::max(max_priority_, priority);
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::size_t ReplayBuffer::find(double mass) const {
  std::size_t node = 1;
  while (node < leaves_) {
    const std::size_t left = 2 * node;
    if (mass < sum_[left] || sum_[left + 1] <= 0.0) {
      node = left;
    } else {
      mass -= sum_[left];
      node = left + 1;
    }
  }
  std::size_t slot = node - leaves_;
  // Rounding can land on an empty trailing leaf; step back to a live one.
  while (slot > 0 && sum_[leaves_ + slot] <= 0.0) --slot;
  return slot;
}

SampledBatch ReplayBuffer::sample_prioritized(std::size_t n, std::mt19937_64& rng, double beta) const {
  if (n == 0) throw Error("minibatch size must be positive");
  // draws are independent, so n may exceed the number of stored transitions
  if (size_ == 0) throw Error("cannot sample from an empty replay buffer");
  const double total = sum_[1];
  const double n_items = static_cast<double>(size_);
  const double p_min = min_[1] / total;
  const double w_max = std::pow(n_items * p_min, -beta);
  std::uniform_real_distribution<double> u(0.0, total);
  SampledBatch b;
  b.indices.reserve(n);
  b.weights.reserve(n);
  b.items.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t slot = find(u(rng));
    const double p = sum_[leaves_ + slot] / total;
    b.indices.push_back(slot);
    b.weights.push_back(std::pow(n_items * p, -beta) / w_max);
    b.items.push_back(&items_[slot]);
  }
  return b;
}

void ReplayBuffer::update_priorities(const std::vector<std::size_t>& indices,
                                     const std::vector<double>& priorities) {
  if (indices.size() != priorities.size()) throw Error("priority update lengths differ");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const double p = priorities[k];
    if (indices[k] >= size_) throw Error("priority update for an empty slot");
    if (!(p > 0.0) || !std::isfinite(p)) throw Error("replay priority must be positive and finite");
    raw_[indices[k]] = p;
    set_leaf(indices[k], std::pow(p, alpha_));
    max_priority_ = std::max(max_priority_, p);
  }
}

void ReplayBuffer::update_from_td(const std::vector<std::size_t>& indices, const std::vector<double>& td) {
  std::vector<double> p(td.size());
  for (std::size_t k = 0; k < td.size(); ++k) p[k] = std::abs(td[k]) + epsilon_;
  update_priorities(indices, p);
}

double ReplayBuffer::priority(std::size_t slot) const {
  if (slot >= size_) throw Error("replay slot out of range");
  return raw_[slot];
}

std::size_t ReplayBuffer::slot_of_age(std::size_t i) const {
  if (i >= size_) throw Error("replay age out of range");
  const std::size_t oldest = size_ < capacity_ ? 0 : next_;
  return (oldest + i) % capacity_;
}

void ReplayBuffer::clear() {
  std::fill(items_.begin(), items_.end(), Transition{});
  std::fill(raw_.begin(), raw_.end(), 0.0);
  std::fill(sum_.begin(), sum_.end(), 0.0);
  std::fill(min_.begin(), min_.end(), std::numeric_limits<double>::infinity());
  next_ = 0;
  size_ = 0;
  max_priority_ = 1.0;
}

}  // namespace ems::agents
