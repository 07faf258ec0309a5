#pragma once

// Simulated environment driven by a frozen greedy model. Feedback is the
// thresholded head output (deterministic), the reward is a weighted sum of
// head probabilities, and the episode ends on a predicted exit or at the
// horizon cap.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "recomind/errors.hpp"
#include "recomind/feedback.hpp"
#include "recomind/greedy_model.hpp"
#include "recomind/rng.hpp"
#include "recomind/state.hpp"
#include "recomind/world.hpp"

namespace recomind {

struct FeedbackSet {
  FeedbackProbs probs{};
  FeedbackBits bits{};
  bool operator==(const FeedbackSet&) const = default;
};

struct RewardWeights {
  std::array<double, kNumFeedback> c{};

  static RewardWeights save_indicator() {
    RewardWeights w;
    w.c[index_of(Feedback::save)] = 1.0;
    return w;
  }
  bool operator==(const RewardWeights&) const = default;
};

enum class RewardKind { probability, binary };

inline double reward_of(std::span<const double> probs, const RewardWeights& w) {
  double r = 0.0;
  for (std::size_t f = 0; f < kNumFeedback; ++f) r += w.c[f] * probs[f];
  return r;
}

inline double binary_reward_of(std::span<const std::uint8_t> bits, const RewardWeights& w) {
  std::array<double, kNumFeedback> as_real{};
  for (std::size_t f = 0; f < kNumFeedback; ++f) as_real[f] = bits[f];
  return reward_of(as_real, w);
}

inline FeedbackSet binarize(const FeedbackProbs& probs, double threshold) {
  FeedbackSet fs{probs, {}};
  for (std::size_t f = 0; f < kNumFeedback; ++f) fs.bits[f] = probs[f] > threshold ? 1 : 0;
  if (!fs.bits[index_of(Feedback::watch)]) fs.bits[index_of(Feedback::long_watch)] = 0;
  return fs;
}

struct EnvConfig {
  double threshold = 0.5;
  std::size_t lookback = 8;
  std::size_t max_horizon = 50;
  std::size_t candidates = 500;
  RewardWeights weights = RewardWeights::save_indicator();
  RewardKind reward_kind = RewardKind::probability;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("env.threshold must be in (0,1)");
    if (max_horizon < 1) throw ConfigError("env.max_horizon must be >= 1");
    if (candidates < 2) throw ConfigError("env.candidates must be >= 2");
    if (lookback < 1) throw ConfigError("env.lookback must be >= 1");
    for (double c : weights.c)
      if (!std::isfinite(c)) throw ConfigError("env.reward_weights must be finite");
  }
  bool operator==(const EnvConfig&) const = default;
};

// Sorted item ids offered for a whole episode.
using CandidateSet = std::shared_ptr<const std::vector<int>>;

struct Transition {
  SessionState state;
  int action = -1;
  double reward = 0.0;
  SessionState next_state;
  bool done = false;
  FeedbackSet feedback;
  bool operator==(const Transition&) const = default;
};

struct Episode {
  SessionState state;
  CandidateSet candidates;
  bool done = false;
};

class Simulator {
 public:
  Simulator(const Catalog& catalog, const UserPool& users, const GreedyNet& model, EnvConfig config)
      : catalog_(&catalog), users_(&users), model_(&model), config_(std::move(config)) {
    config_.validate();
    if (model.net.config.window != config_.lookback)
      throw ConfigError("simulator: model window " + std::to_string(model.net.config.window) +
                        " != env lookback " + std::to_string(config_.lookback));
  }

  const Catalog& catalog() const { return *catalog_; }
  const UserPool& users() const { return *users_; }
  const GreedyNet& model() const { return *model_; }
  const EnvConfig& config() const { return config_; }

  Episode start(const InitialState& init, CandidateSet candidates) const {
    if (!candidates || candidates->empty()) throw UsageError("simulator: empty candidate set");
    Episode ep;
    ep.state.user_id = init.user_id;
    const auto u = users_->user(init.user_id);
    ep.state.user.assign(u.begin(), u.end());
    ep.state.window = init.window;
    if (ep.state.window.size() > config_.lookback)
      ep.state.window.erase(ep.state.window.begin(),
                            ep.state.window.end() - static_cast<std::ptrdiff_t>(config_.lookback));
    ep.candidates = std::move(candidates);
    return ep;
  }

  Episode reset(std::span<const InitialState> pool, std::uint64_t seed) const {
    if (pool.empty()) throw UsageError("simulator: empty initial-state pool");
    if (config_.candidates > catalog_->size())
      throw ConfigError("simulator: candidate set size " + std::to_string(config_.candidates) +
                        " exceeds catalog size " + std::to_string(catalog_->size()));
    Rng rng(seed);
    const auto& init = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    return start(init, sample_candidates(rng));
  }

  // Next state, feedback and reward for showing `action`.
  Transition step(Episode& ep, int action) const {
    if (ep.done || ep.state.terminal) throw UsageError("simulator: step on a finished episode");
    if (!std::binary_search(ep.candidates->begin(), ep.candidates->end(), action))
      throw UsageError("simulator: action " + std::to_string(action) + " is not in the episode candidate set");
    Transition tr;
    tr.state = ep.state;
    tr.action = action;
    tr.feedback = binarize(predict_heads(*model_, *catalog_, ep.state, action), config_.threshold);
    tr.reward = config_.reward_kind == RewardKind::probability
                    ? reward_of(tr.feedback.probs, config_.weights)
                    : binary_reward_of(tr.feedback.bits, config_.weights);
    SessionState next = ep.state;
    append_history(next.window, {action, tr.feedback.bits}, config_.lookback);
    next.t = ep.state.t + 1;
    tr.done = tr.feedback.bits[index_of(Feedback::exit)] == 1 ||
              static_cast<std::size_t>(next.t) >= config_.max_horizon;
    next.terminal = tr.done;
    tr.next_state = next;
    ep.state = std::move(next);
    ep.done = tr.done;
    return tr;
  }

 private:
  CandidateSet sample_candidates(Rng& rng) const {
    const std::size_t n = catalog_->size(), k = config_.candidates;
    std::vector<int> ids;
    if (k * 4 >= n) {
      // partial Fisher-Yates
      std::vector<int> all(n);
      std::iota(all.begin(), all.end(), 0);
      for (std::size_t i = 0; i < k; ++i)
        std::swap(all[i], all[std::uniform_int_distribution<std::size_t>(i, n - 1)(rng)]);
      ids.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    } else {
      // Floyd's algorithm
      std::vector<int> chosen;
      chosen.reserve(k);
      std::vector<bool> used(n, false);
      for (std::size_t j = n - k; j < n; ++j) {
        const auto t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        const std::size_t pick = used[t] ? j : t;
        used[pick] = true;
        chosen.push_back(static_cast<int>(pick));
      }
      ids = std::move(chosen);
    }
    std::sort(ids.begin(), ids.end());
    return std::make_shared<const std::vector<int>>(std::move(ids));
  }

  const Catalog* catalog_;
  const UserPool* users_;
  const GreedyNet* model_;
  EnvConfig config_;
};

}  // namespace recomind
