#pragma once

// Proportional prioritized replay over a sum-tree, plus the n-step
// accumulator that turns raw simulator transitions into replay records.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recomind/errors.hpp"
#include "recomind/rng.hpp"
#include "recomind/simulator.hpp"
#include "recomind/state.hpp"

namespace recomind {

class SumTree {
 public:
  explicit SumTree(std::size_t capacity) {
    if (capacity < 1) throw ConfigError("SumTree: capacity must be >= 1");
    leaves_ = 1;
    while (leaves_ < capacity) leaves_ <<= 1;
    nodes_.assign(2 * leaves_, 0.0);
  }

  std::size_t capacity() const { return leaves_; }
  double total() const { return nodes_[1]; }
  double get(std::size_t leaf) const { return nodes_[leaves_ + leaf]; }
  double node(std::size_t i) const { return nodes_[i]; }

  void set(std::size_t leaf, double priority) {
    if (leaf >= leaves_) throw UsageError("SumTree::set: leaf out of range");
    if (!(priority >= 0.0) || !std::isfinite(priority)) throw UsageError("SumTree::set: bad priority");
    std::size_t i = leaves_ + leaf;
    nodes_[i] = priority;
    for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
  }

  // Leaf whose cumulative range contains `mass` (0 <= mass < total()).
  std::size_t find(double mass) const {
    std::size_t i = 1;
    while (i < leaves_) {
      const std::size_t left = 2 * i;
      if (mass < nodes_[left] || nodes_[left + 1] == 0.0) {
        i = left;
      } else {
        mass -= nodes_[left];
        i = left + 1;
      }
    }
    std::size_t leaf = i - leaves_;
    // Rounding can land on an empty leaf; step back to the nearest filled one.
    while (leaf > 0 && get(leaf) == 0.0) --leaf;
    return leaf;
  }

 private:
  std::size_t leaves_ = 1;
  std::vector<double> nodes_;  // 1-based heap layout, leaves at [leaves_, 2*leaves_)
};

struct ReplayConfig {
  std::size_t capacity = 100000;
  double alpha = 0.9;
  double beta = 0.1;
  double priority_eps = 1e-3;

  void validate() const {
    if (capacity < 1) throw ConfigError("replay.capacity must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("replay.alpha must be in [0,1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("replay.beta must be in [0,1]");
    if (!(priority_eps > 0.0)) throw ConfigError("replay.priority_eps must be > 0");
  }
  bool operator==(const ReplayConfig&) const = default;
};

// Slot plus the write stamp it had when sampled; a later overwrite makes it stale.
struct SampleIndex {
  std::size_t slot = 0;
  std::uint64_t stamp = 0;
};

template <class Record>
struct SampledRecord {
  Record record;
  SampleIndex index;
  double probability = 0.0;
  double weight = 1.0;
};

// Ring buffer with proportional prioritisation. Every public operation holds
// one lock, so push/sample/update are each atomic.
template <class Record>
class PrioritizedBuffer {
 public:
  explicit PrioritizedBuffer(ReplayConfig cfg) : cfg_(cfg), tree_(cfg.capacity) {
    cfg_.validate();
    slots_.reserve(std::min<std::size_t>(cfg_.capacity, 1 << 16));
  }

  const ReplayConfig& config() const { return cfg_; }

  void push(Record r) {
    std::lock_guard lock(mu_);
    const std::size_t slot = next_;
    if (slots_.size() < cfg_.capacity) {
      slots_.push_back(std::move(r));
      stamps_.push_back(++writes_);
    } else {
      slots_[slot] = std::move(r);
      stamps_[slot] = ++writes_;
    }
    tree_.set(slot, std::pow(max_priority_, cfg_.alpha));
    next_ = (next_ + 1) % cfg_.capacity;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return slots_.size();
  }

  double total_priority() const {
    std::lock_guard lock(mu_);
    return tree_.total();
  }

  double leaf_priority(std::size_t slot) const {
    std::lock_guard lock(mu_);
    return tree_.get(slot);
  }

  double max_priority() const {
    std::lock_guard lock(mu_);
    return max_priority_;
  }

  std::uint64_t stale_updates() const {
    std::lock_guard lock(mu_);
    return stale_updates_;
  }

  // Stratified proportional sampling: one uniform draw per equal-mass segment.
  std::vector<SampledRecord<Record>> sample(std::size_t batch_size, Rng& rng) const {
    std::lock_guard lock(mu_);
    if (batch_size < 1 || slots_.size() < batch_size)
      throw UsageError("replay: cannot sample " + std::to_string(batch_size) + " from " +
                       std::to_string(slots_.size()) + " records");
    const double total = tree_.total();
    const double segment = total / static_cast<double>(batch_size);
    const double n = static_cast<double>(slots_.size());
    std::vector<SampledRecord<Record>> out;
    out.reserve(batch_size);
    double max_w = 0.0;
    for (std::size_t i = 0; i < batch_size; ++i) {
      double mass = segment * (static_cast<double>(i) + uniform01(rng));
      mass = std::min(mass, std::nextafter(total, 0.0));
      std::size_t slot = tree_.find(mass);
      if (slot >= slots_.size()) slot = slots_.size() - 1;
      const double p = tree_.get(slot) / total;
      const double w = std::pow(n * p, -cfg_.beta);
      max_w = std::max(max_w, w);
      out.push_back({slots_[slot], {slot, stamps_[slot]}, p, w});
    }
    for (auto& s : out) s.weight /= max_w;
    return out;
  }

  void update_priorities(std::span<const SampleIndex> indices, std::span<const double> td_errors) {
    if (indices.size() != td_errors.size()) throw UsageError("replay: indices/errors length mismatch");
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto& ix = indices[i];
      if (ix.slot >= slots_.size() || stamps_[ix.slot] != ix.stamp) {
        ++stale_updates_;
        continue;
      }
      const double raw = std::abs(td_errors[i]) + cfg_.priority_eps;
      max_priority_ = std::max(max_priority_, raw);
      tree_.set(ix.slot, std::pow(raw, cfg_.alpha));
    }
  }

  // Test/diagnostic view of the leaves in slot order.
  std::vector<double> leaf_priorities() const {
    std::lock_guard lock(mu_);
    std::vector<double> out(slots_.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tree_.get(i);
    return out;
  }

  template <class F>
  void for_each(F&& f) const {
    std::lock_guard lock(mu_);
    for (const auto& r : slots_) f(r);
  }

 private:
  ReplayConfig cfg_;
  mutable std::mutex mu_;
  SumTree tree_;
  std::vector<Record> slots_;
  std::vector<std::uint64_t> stamps_;
  std::size_t next_ = 0;
  std::uint64_t writes_ = 0;
  double max_priority_ = 1.0;
  std::uint64_t stale_updates_ = 0;
};

// n-step replay record: (s_t, a_t, sum_k gamma^k r_{t+k}, s_{t+m}, done, gamma^m).
struct NStepRecord {
  SessionState state;
  int action = -1;
  double reward = 0.0;
  SessionState next_state;
  bool done = false;
  double gamma_eff = 1.0;
  CandidateSet candidates;
  std::uint64_t snapshot_version = 0;
};

class NStepAccumulator {
 public:
  NStepAccumulator(std::size_t n, double gamma) : n_(n), gamma_(gamma) {
    if (n_ < 1) throw ConfigError("n-step: n must be >= 1");
    if (!(gamma_ >= 0.0 && gamma_ <= 1.0)) throw ConfigError("n-step: gamma must be in [0,1]");
  }

  void begin_episode(CandidateSet candidates, std::uint64_t snapshot_version) {
    if (!pending_.empty()) throw UsageError("n-step: previous episode was not finished");
    candidates_ = std::move(candidates);
    version_ = snapshot_version;
    last_t_.reset();
  }

  std::vector<NStepRecord> add(const Transition& tr) {
    const int expected = last_t_ ? *last_t_ + 1 : 0;
    if (tr.state.t != expected)
      throw UsageError("n-step: transition at t=" + std::to_string(tr.state.t) + ", expected t=" +
                       std::to_string(expected));
    pending_.push_back(tr);
    last_t_ = tr.state.t;
    std::vector<NStepRecord> out;
    if (tr.done) {
      while (!pending_.empty()) emit(out);
      last_t_.reset();
    } else if (pending_.size() == n_) {
      emit(out);
    }
    return out;
  }

  std::size_t pending() const { return pending_.size(); }

 private:
  void emit(std::vector<NStepRecord>& out) {
    const std::size_t m = std::min(n_, pending_.size());
    NStepRecord r;
    r.state = pending_.front().state;
    r.action = pending_.front().action;
    double discount = 1.0;
    for (std::size_t k = 0; k < m; ++k) {
      r.reward += discount * pending_[k].reward;
      discount *= gamma_;
    }
    r.next_state = pending_[m - 1].next_state;
    r.done = pending_[m - 1].done;
    r.gamma_eff = discount;
    r.candidates = candidates_;
    r.snapshot_version = version_;
    out.push_back(std::move(r));
    pending_.pop_front();
  }

  std::size_t n_;
  double gamma_;
  std::deque<Transition> pending_;
  CandidateSet candidates_;
  std::uint64_t version_ = 0;
  std::optional<int> last_t_;
};

}  // namespace recomind
