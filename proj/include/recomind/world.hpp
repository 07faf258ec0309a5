#pragma once

// Synthetic ground truth: a clustered item catalog, users with a home cluster,
// and a latent feedback process with a fatigue penalty for showing similar
// items in a row. Logged sessions drawn from it are the training data for the
// greedy model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "recomind/errors.hpp"
#include "recomind/feedback.hpp"
#include "recomind/nn_core.hpp"
#include "recomind/rng.hpp"
#include "recomind/state.hpp"

namespace recomind {

struct Catalog {
  std::uint64_t seed = 0;
  std::size_t n_clusters = 0;
  double noise = 0.0;
  nn::Matrix embeddings;  // one unit-norm row per item id
  nn::Matrix centers;     // one unit-norm row per cluster
  std::vector<int> cluster;
  std::vector<std::vector<int>> members;  // item ids per cluster

  std::size_t size() const { return embeddings.rows(); }
  std::size_t dim() const { return embeddings.cols(); }
  std::span<const double> item(int id) const { return embeddings.row(static_cast<std::size_t>(id)); }
};

struct UserPool {
  std::uint64_t seed = 0;
  double noise = 0.0;
  nn::Matrix embeddings;
  std::vector<int> home_cluster;

  std::size_t size() const { return embeddings.rows(); }
  std::span<const double> user(int id) const { return embeddings.row(static_cast<std::size_t>(id)); }
};

// Coefficients of the latent feedback process. Not fitted to anything real.
struct GroundTruthParams {
  double watch_gain = 3.0, watch_fatigue = 2.0, watch_bias = -0.5;
  double long_watch_gain = 3.0, long_watch_bias = -1.0;
  double save_gain = 4.0, save_fatigue = 3.0, save_bias = -2.2;
  double hide_gain = 3.0, hide_bias = -2.5;
  double exit_bias = -3.5, exit_step = 0.02, exit_affinity = 1.0, exit_fatigue = 8.0;
  std::size_t lookback = 8;

  bool operator==(const GroundTruthParams&) const = default;
};

// How logged sessions are produced (stand-in for a production recommender).
struct LoggingPolicy {
  std::size_t subset_size = 8;
  double repeat_prob = 0.3;    // re-show an item from the window
  double max_focus = 0.6;      // per-session prob. of drawing from the last item's cluster
  double home_prob = 0.3;      // draw from the user's home cluster
  bool operator==(const LoggingPolicy&) const = default;
};

struct WorldConfig {
  std::size_t n_items = 10000;
  std::size_t dim = 16;
  std::size_t n_clusters = 8;
  double item_noise = 0.15;
  std::size_t n_users = 500;
  double user_noise = 0.1;
  std::size_t sessions_per_user = 16;
  std::size_t max_session_len = 50;
  GroundTruthParams truth;
  LoggingPolicy logging;

  bool operator==(const WorldConfig&) const = default;
};

namespace detail {

inline void normalize(std::span<double> v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (n == 0.0) {
    v[0] = 1.0;
    return;
  }
  for (double& x : v) x /= n;
}

inline void random_unit(std::span<double> v, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (double& x : v) x = g(rng);
  normalize(v);
}

}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Catalog gen_catalog(std::size_t n_items, std::size_t dim, std::size_t n_clusters,
                           std::uint64_t seed, double noise = 0.15) {
  if (n_items < 1) throw ConfigError("gen_catalog: n_items must be >= 1");
  if (dim < 2) throw ConfigError("gen_catalog: dim must be >= 2");
  if (n_clusters < 1) throw ConfigError("gen_catalog: n_clusters must be >= 1");
  Rng rng(derive_seed(seed, 0xca7a));
  Catalog c;
  c.seed = seed;
  c.n_clusters = n_clusters;
  c.noise = noise;
  c.centers = nn::Matrix(n_clusters, dim);
  for (std::size_t k = 0; k < n_clusters; ++k) detail::random_unit(c.centers.row(k), rng);
  c.embeddings = nn::Matrix(n_items, dim);
  c.cluster.resize(n_items);
  c.members.assign(n_clusters, {});
  std::uniform_int_distribution<std::size_t> pick(0, n_clusters - 1);
  std::normal_distribution<double> g(0.0, noise);
  for (std::size_t i = 0; i < n_items; ++i) {
    const std::size_t k = pick(rng);
    auto row = c.embeddings.row(i);
    const auto center = c.centers.row(k);
    for (std::size_t d = 0; d < dim; ++d) row[d] = center[d] + g(rng);
    detail::normalize(row);
    c.cluster[i] = static_cast<int>(k);
    c.members[k].push_back(static_cast<int>(i));
  }
  return c;
}

inline UserPool gen_users(std::size_t n_users, const Catalog& catalog, std::uint64_t seed,
                          double noise = 0.1) {
  if (n_users < 1) throw ConfigError("gen_users: n_users must be >= 1");
  Rng rng(derive_seed(seed, 0x05e5));
  UserPool p;
  p.seed = seed;
  p.noise = noise;
  p.embeddings = nn::Matrix(n_users, catalog.dim());
  p.home_cluster.resize(n_users);
  std::uniform_int_distribution<std::size_t> pick(0, catalog.n_clusters - 1);
  std::normal_distribution<double> g(0.0, noise);
  for (std::size_t u = 0; u < n_users; ++u) {
    const std::size_t k = pick(rng);
    auto row = p.embeddings.row(u);
    const auto center = catalog.centers.row(k);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] = center[d] + g(rng);
    detail::normalize(row);
    p.home_cluster[u] = static_cast<int>(k);
  }
  return p;
}

// Mean cosine of the action to the shown items in the window (0 when empty).
inline double fatigue_of(const Catalog& catalog, std::span<const HistorySlot> history, int action) {
  if (history.empty()) return 0.0;
  const auto a = catalog.item(action);
  double s = 0.0;
  for (const auto& h : history) s += dot(a, catalog.item(h.item_id));
  return s / static_cast<double>(history.size());
}

inline FeedbackProbs ground_truth_probs(const GroundTruthParams& p, std::span<const double> user,
                                        const Catalog& catalog, std::span<const HistorySlot> history,
                                        int action, int t) {
  if (history.size() > p.lookback)
    throw UsageError("ground_truth_probs: history longer than the lookback window");
  using nn::sigmoid;
  const double affinity = dot(user, catalog.item(action));
  const double fatigue = fatigue_of(catalog, history, action);
  FeedbackProbs out{};
  const double watch = sigmoid(p.watch_gain * affinity - p.watch_fatigue * fatigue + p.watch_bias);
  out[index_of(Feedback::watch)] = watch;
  out[index_of(Feedback::long_watch)] = watch * sigmoid(p.long_watch_gain * affinity + p.long_watch_bias);
  out[index_of(Feedback::save)] = sigmoid(p.save_gain * affinity - p.save_fatigue * fatigue + p.save_bias);
  out[index_of(Feedback::hide)] = sigmoid(-p.hide_gain * affinity + p.hide_bias);
  out[index_of(Feedback::exit)] = sigmoid(p.exit_bias + p.exit_step * static_cast<double>(t) -
                                          p.exit_affinity * affinity + p.exit_fatigue * fatigue);
  return out;
}

struct LoggedStep {
  int item_id = -1;
  FeedbackBits bits{};
  bool operator==(const LoggedStep&) const = default;
};

struct LoggedSession {
  int user_id = -1;
  std::vector<LoggedStep> steps;
  bool operator==(const LoggedSession&) const = default;
};

namespace detail {

inline int draw_logged_item(const Catalog& catalog, int home_cluster,
                            std::span<const HistorySlot> history, const LoggingPolicy& lp,
                            double focus, Rng& rng) {
  const double u = uniform01(rng);
  auto from = [&](const std::vector<int>& ids) {
    return ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)];
  };
  if (!history.empty()) {
    if (u < lp.repeat_prob)
      return history[std::uniform_int_distribution<std::size_t>(0, history.size() - 1)(rng)].item_id;
    if (u < lp.repeat_prob + focus) {
      const auto& m = catalog.members[static_cast<std::size_t>(catalog.cluster[static_cast<std::size_t>(history.back().item_id)])];
      return from(m);
    }
  }
  if (uniform01(rng) < lp.home_prob && !catalog.members[static_cast<std::size_t>(home_cluster)].empty())
    return from(catalog.members[static_cast<std::size_t>(home_cluster)]);
  return static_cast<int>(std::uniform_int_distribution<std::size_t>(0, catalog.size() - 1)(rng));
}

}  // namespace detail

// One logged session. Each step shows an item drawn uniformly from a per-step
// candidate subset; feedback bits are Bernoulli draws from the ground truth.
// `history` is the user's window carried in from earlier sessions.
inline LoggedSession sample_session(int user_id, const UserPool& users, const Catalog& catalog,
                                    const GroundTruthParams& params, const LoggingPolicy& logging,
                                    std::vector<HistorySlot> history, std::size_t max_len,
                                    std::uint64_t seed) {
  if (max_len < 1) throw ConfigError("sample_session: max_len must be >= 1");
  Rng rng(seed);
  LoggedSession s;
  s.user_id = user_id;
  const auto user = users.user(user_id);
  const int home = users.home_cluster[static_cast<std::size_t>(user_id)];
  const double focus = uniform01(rng) * logging.max_focus;
  std::vector<int> subset(std::max<std::size_t>(1, logging.subset_size));
  for (std::size_t t = 0; t < max_len; ++t) {
    for (int& c : subset) c = detail::draw_logged_item(catalog, home, history, logging, focus, rng);
    const int item = subset[std::uniform_int_distribution<std::size_t>(0, subset.size() - 1)(rng)];
    const auto probs = ground_truth_probs(params, user, catalog, history, item, static_cast<int>(t));
    FeedbackBits bits{};
    for (std::size_t f = 0; f < kNumFeedback; ++f) bits[f] = uniform01(rng) < probs[f] ? 1 : 0;
    // long_watch only given watch: P(lw) above is already the joint probability.
    if (!bits[index_of(Feedback::watch)]) bits[index_of(Feedback::long_watch)] = 0;
    else {
      const double cond = probs[index_of(Feedback::long_watch)] / probs[index_of(Feedback::watch)];
      bits[index_of(Feedback::long_watch)] = uniform01(rng) < cond ? 1 : 0;
    }
    if (t + 1 == max_len) bits[index_of(Feedback::exit)] = 1;
    s.steps.push_back({item, bits});
    append_history(history, {item, bits}, params.lookback);
    if (bits[index_of(Feedback::exit)]) break;
  }
  return s;
}

struct DatasetRow {
  int user_id = -1;
  int session_id = -1;
  int step = 0;
  std::vector<HistorySlot> window;
  int action = -1;
  FeedbackBits label{};
  bool operator==(const DatasetRow&) const = default;
};

struct InitialState {
  int user_id = -1;
  std::vector<HistorySlot> window;
  bool operator==(const InitialState&) const = default;
};

struct Dataset {
  std::vector<DatasetRow> rows;
  std::vector<InitialState> initial_states;
};

// Unrolls each user's consecutive sessions into supervised rows. The window
// carries across a user's sessions, so a session's initial state holds the
// last L interactions before it started (empty for the first session).
inline Dataset build_dataset(const UserPool& users, const Catalog& catalog, const WorldConfig& cfg,
                             std::uint64_t seed) {
  if (cfg.sessions_per_user < 1 || users.size() < 1) throw ConfigError("build_dataset: counts must be >= 1");
  Dataset ds;
  int session_id = 0;
  for (std::size_t u = 0; u < users.size(); ++u) {
    std::vector<HistorySlot> window;
    for (std::size_t k = 0; k < cfg.sessions_per_user; ++k, ++session_id) {
      ds.initial_states.push_back({static_cast<int>(u), window});
      const auto s = sample_session(static_cast<int>(u), users, catalog, cfg.truth, cfg.logging, window,
                                    cfg.max_session_len, derive_seed(seed, u, k));
      for (std::size_t t = 0; t < s.steps.size(); ++t) {
        ds.rows.push_back({static_cast<int>(u), session_id, static_cast<int>(t), window,
                           s.steps[t].item_id, s.steps[t].bits});
        append_history(window, {s.steps[t].item_id, s.steps[t].bits}, cfg.truth.lookback);
      }
    }
  }
  return ds;
}

struct World {
  Catalog catalog;
  UserPool users;
  Dataset dataset;
};

inline World build_world(const WorldConfig& cfg, std::uint64_t seed) {
  World w;
  w.catalog = gen_catalog(cfg.n_items, cfg.dim, cfg.n_clusters, derive_seed(seed, 1), cfg.item_noise);
  w.users = gen_users(cfg.n_users, w.catalog, derive_seed(seed, 2), cfg.user_noise);
  w.dataset = build_dataset(w.users, w.catalog, cfg, derive_seed(seed, 3));
  return w;
}

}  // namespace recomind
