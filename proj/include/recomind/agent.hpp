#pragma once

// Q-network (greedy architecture plus a heads-to-1 layer), warm start from
// the greedy model, the truncated-softmax exploration policy, and the
// Double-DQN n-step training step over prioritized replay.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recomind/errors.hpp"
#include "recomind/feedback.hpp"
#include "recomind/greedy_model.hpp"
#include "recomind/nn_core.hpp"
#include "recomind/replay.hpp"
#include "recomind/rng.hpp"
#include "recomind/simulator.hpp"

namespace recomind {

struct QNet {
  EncodedNet net;
};

inline const std::string kQHead = "q";

// Copies every greedy layer and appends a |F|-to-1 identity layer that picks
// the save head, so Q(s,a) == P_save(s,a) until the first update.
inline QNet warm_start(const GreedyNet& donor) {
  if (donor.net.trunk.head_names != feedback_head_names())
    throw ConfigError("warm_start: donor heads do not match {watch, long_watch, save, hide, exit}");
  QNet q{donor.net};
  nn::DenseLayer head{nn::Matrix(kNumFeedback, 1), {0.0}, nn::Activation::identity};
  head.weights(index_of(Feedback::save), 0) = 1.0;
  q.net.trunk.layers.push_back(std::move(head));
  q.net.trunk.head_names = {kQHead};
  q.net.trunk.revision = 0;
  q.net.trunk.validate();
  return q;
}

// Same structure, every layer freshly initialised.
inline QNet random_q_net(const EncoderConfig& cfg, std::uint64_t seed) {
  QNet q{make_greedy_net(cfg, seed).net};
  Rng rng(derive_seed(seed, 0x4ead));
  q.net.trunk.layers.push_back(nn::make_dense(kNumFeedback, 1, nn::Activation::identity, rng));
  q.net.trunk.head_names = {kQHead};
  q.net.trunk.validate();
  return q;
}

inline double q_value(const QNet& q, const Catalog& catalog, const SessionState& s, int action) {
  return score_action(q.net, catalog, s, action).front();
}

inline std::vector<double> q_values(const QNet& q, const Catalog& catalog, const SessionState& s,
                                    std::span<const int> actions) {
  const auto m = score_actions(q.net, catalog, s, actions);
  return {m.values().begin(), m.values().end()};
}

enum class ExploreMode { recomind_trunc, recomind_all, eps_greedy, softmax_q };

inline std::string_view to_string(ExploreMode m) {
  switch (m) {
    case ExploreMode::recomind_trunc: return "recomind_trunc";
    case ExploreMode::recomind_all: return "recomind_all";
    case ExploreMode::eps_greedy: return "eps_greedy";
    case ExploreMode::softmax_q: return "softmax_q";
  }
  return "recomind_trunc";
}

inline ExploreMode explore_mode_from_string(std::string_view s) {
  for (auto m : {ExploreMode::recomind_trunc, ExploreMode::recomind_all, ExploreMode::eps_greedy,
                 ExploreMode::softmax_q})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown exploration mode '" + std::string(s) + "'");
}

struct ExplorationConfig {
  double epsilon = 0.2;
  double temperature = 0.1;
  double truncation = 0.25;
  ExploreMode mode = ExploreMode::recomind_trunc;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("exploration.epsilon must be in [0,1]");
    if (!(temperature > 0.0)) throw ConfigError("exploration.temperature must be > 0");
    if (!(truncation > 0.0 && truncation <= 1.0)) throw ConfigError("exploration.truncation must be in (0,1]");
  }
  bool operator==(const ExplorationConfig&) const = default;
};

// Position of the highest value; ties go to the smaller item id.
inline std::size_t argmax_position(std::span<const double> values, std::span<const int> ids) {
  if (values.empty() || values.size() != ids.size()) throw UsageError("argmax: empty or mismatched input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best] || (values[i] == values[best] && ids[i] < ids[best])) best = i;
  return best;
}

// Positions (ascending) of the K = max(1, ceil(rho*|C|)) highest-valued candidates.
inline std::vector<std::size_t> truncate_candidates(std::span<const double> values, std::span<const int> ids,
                                                    double rho) {
  if (ids.empty()) throw UsageError("truncate_candidates: empty candidate set");
  if (values.size() != ids.size()) throw UsageError("truncate_candidates: size mismatch");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("truncate_candidates: rho must be in (0,1]");
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(rho * static_cast<double>(ids.size()) - 1e-12)));
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, order.size())),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && ids[a] < ids[b]);
                    });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

inline std::vector<std::size_t> truncate_candidates(const QNet& q, const Catalog& catalog, const SessionState& s,
                                                    std::span<const int> ids, double rho) {
  if (ids.empty()) throw UsageError("truncate_candidates: empty candidate set");
  return truncate_candidates(q_values(q, catalog, s, ids), ids, rho);
}

namespace detail {

// Sample a position from softmax(values/temperature) over `positions`.
inline std::size_t softmax_sample(std::span<const double> values, std::span<const std::size_t> positions,
                                  double temperature, Rng& rng) {
  double mx = -std::numeric_limits<double>::infinity();
  for (auto p : positions) mx = std::max(mx, values[p]);
  std::vector<double> w(positions.size());
  double total = 0.0;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    w[i] = std::exp((values[positions[i]] - mx) / temperature);
    total += w[i];
  }
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (u < w[i]) return positions[i];
    u -= w[i];
  }
  return positions.back();
}

inline std::vector<std::size_t> all_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace detail

// Returns a position into `ids`. `truncated` is the episode's frozen top-K set.
inline std::size_t select_action(std::span<const double> values, std::span<const int> ids,
                                 std::span<const std::size_t> truncated, const ExplorationConfig& cfg, Rng& rng) {
  if (truncated.empty()) throw UsageError("select_action: empty truncated set");
  const double u = uniform01(rng);
  const bool explore = u < cfg.epsilon;
  switch (cfg.mode) {
    case ExploreMode::recomind_trunc:
      if (explore) return detail::softmax_sample(values, truncated, cfg.temperature, rng);
      break;
    case ExploreMode::recomind_all:
      if (explore) return detail::softmax_sample(values, detail::all_positions(ids.size()), cfg.temperature, rng);
      break;
    case ExploreMode::eps_greedy:
      if (explore) return std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng);
      break;
    case ExploreMode::softmax_q:
      return detail::softmax_sample(values, detail::all_positions(ids.size()), cfg.temperature, rng);
  }
  return argmax_position(values, ids);
}

struct TrainConfig {
  double gamma = 0.75;
  std::size_t n_step = 3;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  std::size_t target_sync_every = 500;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("training.gamma must be in [0,1]");
    if (n_step < 1) throw ConfigError("training.n_step must be >= 1");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be > 0");
    if (target_sync_every < 1) throw ConfigError("training.target_sync_every must be >= 1");
  }
  bool operator==(const TrainConfig&) const = default;
};

struct TargetPair {
  QNet online;
  QNet target;
  std::size_t updates_since_sync = 0;
  std::size_t total_updates = 0;

  explicit TargetPair(QNet initial) : online(initial), target(std::move(initial)) {}

  void sync() {
    target = online;
    updates_since_sync = 0;
  }
};

// Double-Q n-step targets: online net picks a' over the stored candidate set,
// target net evaluates it.
inline std::vector<double> td_targets(std::span<const NStepRecord* const> batch, const QNet& online,
                                      const QNet& target, const Catalog& catalog) {
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = *batch[i];
    if (r.done || r.gamma_eff == 0.0) {
      out[i] = r.reward;
      continue;
    }
    const auto& ids = *r.candidates;
    const auto q_next = q_values(online, catalog, r.next_state, ids);
    const int best = ids[argmax_position(q_next, ids)];
    out[i] = r.reward + r.gamma_eff * q_value(target, catalog, r.next_state, best);
  }
  return out;
}

struct TdLoss {
  double loss = 0.0;
  std::vector<double> td_errors;  // target - Q
  EncodedGradients grads;
};

// Importance-weighted mean squared TD error and its gradient w.r.t. the online net.
inline TdLoss td_loss(const QNet& online, const Catalog& catalog, std::span<const NStepRecord* const> batch,
                      std::span<const double> targets, std::span<const double> weights) {
  if (targets.size() != batch.size() || weights.size() != batch.size())
    throw UsageError("td_loss: batch/target/weight size mismatch");
  std::vector<StateAction> sa;
  sa.reserve(batch.size());
  for (const auto* r : batch) sa.push_back({&r->state, r->action});
  auto fr = forward_batch(online.net, catalog, sa);
  TdLoss res;
  res.td_errors.resize(batch.size());
  nn::Matrix dq(batch.size(), 1);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double delta = targets[i] - fr.output(i, 0);
    res.td_errors[i] = delta;
    res.loss += weights[i] * delta * delta * inv_n;
    dq(i, 0) = -2.0 * weights[i] * delta * inv_n;
  }
  res.grads = backward_batch(online.net, fr.tape, dq);
  return res;
}

struct TrainStepResult {
  double loss = 0.0;
  double mean_abs_td = 0.0;
  bool synced = false;
};

inline TrainStepResult train_step(TargetPair& pair, PrioritizedBuffer<NStepRecord>& buffer, nn::AdamState& adam,
                                  const TrainConfig& cfg, const Catalog& catalog, Rng& rng) {
  const auto sampled = buffer.sample(cfg.batch_size, rng);
  std::vector<const NStepRecord*> batch;
  std::vector<double> weights;
  std::vector<SampleIndex> indices;
  for (const auto& s : sampled) {
    batch.push_back(&s.record);
    weights.push_back(s.weight);
    indices.push_back(s.index);
  }
  const auto targets = td_targets(batch, pair.online, pair.target, catalog);
  auto loss = td_loss(pair.online, catalog, batch, targets, weights);
  if (!std::isfinite(loss.loss))
    throw TrainingError("train_step: non-finite TD loss at update " + std::to_string(pair.total_updates + 1));
  adam.learning_rate = cfg.learning_rate;
  apply_adam(pair.online.net, loss.grads, adam);
  buffer.update_priorities(indices, loss.td_errors);
  TrainStepResult res;
  res.loss = loss.loss;
  for (double d : loss.td_errors) res.mean_abs_td += std::abs(d) / static_cast<double>(loss.td_errors.size());
  ++pair.total_updates;
  if (++pair.updates_since_sync >= cfg.target_sync_every) {
    pair.sync();
    res.synced = true;
  }
  return res;
}

}  // namespace recomind
