#pragma once

// Simulation-and-training loop. run_sync alternates collection and training
// rounds on one thread; run_async runs generator threads against a trainer,
// joined only through the replay buffer and published policy snapshots.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "recomind/agent.hpp"
#include "recomind/errors.hpp"
#include "recomind/replay.hpp"
#include "recomind/rng.hpp"
#include "recomind/simulator.hpp"

namespace recomind {

struct PolicySnapshot {
  std::shared_ptr<const QNet> net;
  ExplorationConfig exploration;
  std::uint64_t version = 0;
};

// Latest published snapshot; readers get an immutable shared copy.
class SnapshotStore {
 public:
  explicit SnapshotStore(PolicySnapshot initial) : latest_(std::make_shared<const PolicySnapshot>(std::move(initial))) {}

  std::shared_ptr<const PolicySnapshot> latest() const {
    std::lock_guard lock(mu_);
    return latest_;
  }

  std::uint64_t version() const {
    std::lock_guard lock(mu_);
    return latest_->version;
  }

  std::uint64_t publish(const QNet& net) {
    std::lock_guard lock(mu_);
    auto next = std::make_shared<PolicySnapshot>();
    next->net = std::make_shared<const QNet>(net);
    next->exploration = latest_->exploration;
    next->version = latest_->version + 1;
    latest_ = std::move(next);
    return latest_->version;
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const PolicySnapshot> latest_;
};

struct RunConfig {
  std::size_t collection_episodes = 64;
  std::size_t training_steps = 256;
  std::size_t snapshot_every = 200;
  std::size_t generators = 4;
  std::size_t total_train_steps = 3000;
  std::size_t stabilization_window = 5000;
  double stabilization_tolerance = 0.05;
  std::size_t metrics_every = 100;  // train steps between async metric rows
  bool lockstep = false;            // async test mode: generator/trainer rounds behind barriers

  void validate() const {
    if (collection_episodes < 1 || training_steps < 1 || snapshot_every < 1 || generators < 1 ||
        stabilization_window < 1 || metrics_every < 1)
      throw ConfigError("run: counts must be positive");
    if (!(stabilization_tolerance >= 0.0)) throw ConfigError("run.stabilization_tolerance must be >= 0");
  }
  bool operator==(const RunConfig&) const = default;
};

// True once the means of the last two consecutive windows differ by at most
// tolerance * (std of the whole history). Needs at least two full windows.
inline bool stabilization_check(std::span<const double> history, std::size_t window, double tolerance) {
  if (window < 1 || history.size() < 2 * window) return false;
  const std::size_t n = history.size();
  double last = 0.0, prev = 0.0;
  for (std::size_t i = n - window; i < n; ++i) last += history[i];
  for (std::size_t i = n - 2 * window; i < n - window; ++i) prev += history[i];
  last /= static_cast<double>(window);
  prev /= static_cast<double>(window);
  double mean = 0.0;
  for (double x : history) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : history) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  return std::abs(last - prev) <= tolerance * sd;
}

struct EpisodeOutcome {
  std::vector<Transition> transitions;
  double discounted_return = 0.0;
};

// One full episode under `policy` with the exploration rule; the truncated
// set is computed at reset and frozen for the episode.
inline EpisodeOutcome run_episode(const Simulator& sim, const QNet& policy, const ExplorationConfig& explore,
                                  Episode ep, Rng& rng, double gamma) {
  EpisodeOutcome out;
  const auto& ids = *ep.candidates;
  std::vector<std::size_t> truncated;
  double discount = 1.0;
  while (!ep.done) {
    const auto q = q_values(policy, sim.catalog(), ep.state, ids);
    if (truncated.empty()) {
      truncated = explore.mode == ExploreMode::recomind_trunc
                      ? truncate_candidates(q, ids, explore.truncation)
                      : detail::all_positions(ids.size());
    }
    const std::size_t pos = select_action(q, ids, truncated, explore, rng);
    auto tr = sim.step(ep, ids[pos]);
    out.discounted_return += discount * tr.reward;
    discount *= gamma;
    out.transitions.push_back(std::move(tr));
  }
  return out;
}

struct MetricsRow {
  double wall_time = 0.0;
  std::uint64_t episodes = 0;
  std::uint64_t train_steps = 0;
  double mean_return_1k = 0.0;
  double td_loss = 0.0;
  std::uint64_t buffer_size = 0;
  std::uint64_t snapshot_version = 0;
};

inline constexpr const char* kMetricsHeader =
    "wall_time,episodes,train_steps,mean_return_1k,td_loss,buffer_size,snapshot_version";

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsRow> rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    std::ostringstream line;
    line << std::setprecision(17) << r.wall_time << ',' << r.episodes << ',' << r.train_steps << ','
         << r.mean_return_1k << ',' << r.td_loss << ',' << r.buffer_size << ',' << r.snapshot_version;
    os << line.str() << '\n';
  }
}

struct RunResult {
  QNet online;
  std::vector<MetricsRow> metrics;
  std::vector<double> episode_returns;  // training episodes, discounted, in completion order
  std::uint64_t train_steps = 0;
  std::uint64_t episodes = 0;
  std::uint64_t final_version = 0;
  bool stabilized = false;
  std::map<std::uint64_t, std::uint64_t> staleness;  // version lag -> pushed records
  double wall_seconds = 0.0;
};

struct RunInputs {
  const Simulator* sim = nullptr;
  std::span<const InitialState> pool;
  TrainConfig train;
  ExplorationConfig explore;
  ReplayConfig replay;
  RunConfig run;
  std::uint64_t seed = 0;
  // Called at train step 0 and every `checkpoint_every` steps (0 disables).
  std::size_t checkpoint_every = 0;
  std::function<void(std::uint64_t, const QNet&)> on_checkpoint;
  std::ostream* progress = nullptr;
};

namespace detail {

inline double trailing_mean(const std::vector<double>& v, std::size_t window) {
  if (v.empty()) return 0.0;
  const std::size_t n = std::min(window, v.size());
  double s = 0.0;
  for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(n);
}

inline std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t idx) { return derive_seed(seed, 0xe9150de, idx); }
inline std::uint64_t action_seed(std::uint64_t seed, std::uint64_t idx) { return derive_seed(seed, 0xac7, idx); }
inline std::uint64_t trainer_seed(std::uint64_t seed) { return derive_seed(seed, 0x7a1e); }

inline void validate_inputs(const RunInputs& in) {
  if (!in.sim) throw ConfigError("run: no simulator");
  if (in.pool.empty()) throw ConfigError("run: empty initial-state pool");
  in.train.validate();
  in.explore.validate();
  in.replay.validate();
  in.run.validate();
}

inline void print_progress(std::ostream* os, const char* mode, const MetricsRow& r) {
  if (!os) return;
  std::ostringstream line;
  line << std::fixed << std::setprecision(4) << '[' << mode << "] t=" << std::setprecision(1) << r.wall_time
       << "s episodes=" << r.episodes << " steps=" << r.train_steps << std::setprecision(4)
       << " return_1k=" << r.mean_return_1k << " td_loss=" << r.td_loss << " buffer=" << r.buffer_size
       << " snapshot=" << r.snapshot_version;
  *os << line.str() << std::endl;
}

}  // namespace detail

// Generates episode `idx` under `net` and pushes its n-step records.
inline double generate_episode(const RunInputs& in, const QNet& net, std::uint64_t version, std::uint64_t idx,
                               PrioritizedBuffer<NStepRecord>& buffer, const SnapshotStore* store,
                               std::map<std::uint64_t, std::uint64_t>* staleness) {
  auto ep = in.sim->reset(in.pool, detail::episode_seed(in.seed, idx));
  Rng rng(detail::action_seed(in.seed, idx));
  NStepAccumulator acc(in.train.n_step, in.train.gamma);
  acc.begin_episode(ep.candidates, version);
  auto out = run_episode(*in.sim, net, in.explore, std::move(ep), rng, in.train.gamma);
  for (const auto& tr : out.transitions)
    for (auto& rec : acc.add(tr)) {
      if (staleness && store) ++(*staleness)[store->version() - version];
      buffer.push(std::move(rec));
    }
  return out.discounted_return;
}

// Alternating collection / training rounds on the calling thread.
inline RunResult run_sync(const RunInputs& in, QNet initial) {
  detail::validate_inputs(in);
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  RunResult res{initial, {}, {}, 0, 0, 0, false, {}, 0.0};
  TargetPair pair(std::move(initial));
  PrioritizedBuffer<NStepRecord> buffer(in.replay);
  nn::AdamState adam;
  Rng train_rng(detail::trainer_seed(in.seed));
  std::uint64_t version = 0;
  double last_loss = 0.0;
  auto checkpoint = [&] {
    if (in.on_checkpoint && in.checkpoint_every > 0 && res.train_steps % in.checkpoint_every == 0)
      in.on_checkpoint(res.train_steps, pair.online);
  };
  checkpoint();
  while (res.train_steps < in.run.total_train_steps && !res.stabilized) {
    for (std::size_t i = 0; i < in.run.collection_episodes; ++i) {
      res.episode_returns.push_back(generate_episode(in, pair.online, version, res.episodes, buffer, nullptr, nullptr));
      ++res.episodes;
    }
    if (buffer.size() >= in.train.batch_size) {
      for (std::size_t j = 0; j < in.run.training_steps && res.train_steps < in.run.total_train_steps; ++j) {
        last_loss = train_step(pair, buffer, adam, in.train, in.sim->catalog(), train_rng).loss;
        ++res.train_steps;
        checkpoint();
      }
      ++version;
    }
    res.metrics.push_back({elapsed(), res.episodes, res.train_steps, detail::trailing_mean(res.episode_returns, 1000),
                           last_loss, buffer.size(), version});
    detail::print_progress(in.progress, "sync", res.metrics.back());
    res.stabilized = stabilization_check(res.episode_returns, in.run.stabilization_window, in.run.stabilization_tolerance);
  }
  res.online = std::move(pair.online);
  res.final_version = version;
  res.wall_seconds = elapsed();
  return res;
}

// Generator threads plus a trainer on the calling thread. In lockstep mode the
// generator and trainer take turns in rounds of collection_episodes /
// training_steps, which reproduces run_sync's schedule.
inline RunResult run_async(const RunInputs& in, QNet initial) {
  detail::validate_inputs(in);
  if (in.run.lockstep && in.run.generators != 1) throw ConfigError("run: lockstep mode needs exactly one generator");
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  RunResult res{initial, {}, {}, 0, 0, 0, false, {}, 0.0};
  TargetPair pair(std::move(initial));
  PrioritizedBuffer<NStepRecord> buffer(in.replay);
  SnapshotStore store({std::make_shared<const QNet>(pair.online), in.explore, 0});
  nn::AdamState adam;
  Rng train_rng(detail::trainer_seed(in.seed));

  std::atomic<bool> stop{false};
  std::atomic<std::uint64_t> next_episode{0};
  std::mutex results_mu;
  std::exception_ptr failure;

  // lockstep state
  std::mutex phase_mu;
  std::condition_variable phase_cv;
  std::uint64_t rounds_collected = 0, rounds_trained = 0;

  auto worker = [&] {
    try {
      std::map<std::uint64_t, std::uint64_t> local_stale;
      std::uint64_t produced_in_round = 0;
      while (!stop.load()) {
        if (in.run.lockstep) {
          std::unique_lock lock(phase_mu);
          phase_cv.wait(lock, [&] { return stop.load() || rounds_collected == rounds_trained; });
          if (stop.load()) break;
        }
        const auto snap = store.latest();
        const std::uint64_t idx = next_episode.fetch_add(1);
        const double ret = generate_episode(in, *snap->net, snap->version, idx, buffer, &store, &local_stale);
        {
          std::lock_guard lock(results_mu);
          res.episode_returns.push_back(ret);
          ++res.episodes;
        }
        if (in.run.lockstep && ++produced_in_round == in.run.collection_episodes) {
          produced_in_round = 0;
          std::lock_guard lock(phase_mu);
          ++rounds_collected;
          phase_cv.notify_all();
        }
      }
      std::lock_guard lock(results_mu);
      for (auto [lag, n] : local_stale) res.staleness[lag] += n;
    } catch (...) {
      std::lock_guard lock(results_mu);
      if (!failure) failure = std::current_exception();
      stop = true;
      phase_cv.notify_all();
    }
  };

  std::vector<std::thread> workers;
  for (std::size_t g = 0; g < in.run.generators; ++g) workers.emplace_back(worker);

  double last_loss = 0.0;
  auto emit_row = [&] {
    MetricsRow row;
    {
      std::lock_guard lock(results_mu);
      row = {elapsed(), res.episodes, res.train_steps, detail::trailing_mean(res.episode_returns, 1000), last_loss,
             buffer.size(), store.version()};
    }
    res.metrics.push_back(row);
    detail::print_progress(in.progress, "async", row);
  };
  auto checkpoint = [&] {
    if (in.on_checkpoint && in.checkpoint_every > 0 && res.train_steps % in.checkpoint_every == 0)
      in.on_checkpoint(res.train_steps, pair.online);
  };

  try {
    checkpoint();
    while (res.train_steps < in.run.total_train_steps && !stop.load()) {
      if (in.run.lockstep) {
        std::unique_lock lock(phase_mu);
        phase_cv.wait(lock, [&] { return stop.load() || rounds_collected > rounds_trained; });
        if (stop.load()) break;
      }
      const bool ready = buffer.size() >= in.train.batch_size;
      if (!ready && !in.run.lockstep) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
        continue;
      }
      const std::size_t steps = in.run.lockstep ? in.run.training_steps : 1;
      for (std::size_t j = 0; ready && j < steps && res.train_steps < in.run.total_train_steps; ++j) {
        last_loss = train_step(pair, buffer, adam, in.train, in.sim->catalog(), train_rng).loss;
        {
          std::lock_guard lock(results_mu);
          ++res.train_steps;
        }
        if (res.train_steps % in.run.snapshot_every == 0) store.publish(pair.online);
        checkpoint();
        if (!in.run.lockstep && res.train_steps % in.run.metrics_every == 0) emit_row();
      }
      if (in.run.lockstep) {
        emit_row();
        {
          std::lock_guard lock(results_mu);
          res.stabilized =
              stabilization_check(res.episode_returns, in.run.stabilization_window, in.run.stabilization_tolerance);
        }
        std::lock_guard lock(phase_mu);
        ++rounds_trained;
        if (res.stabilized || res.train_steps >= in.run.total_train_steps) stop = true;
        phase_cv.notify_all();
      } else {
        std::lock_guard lock(results_mu);
        res.stabilized =
            stabilization_check(res.episode_returns, in.run.stabilization_window, in.run.stabilization_tolerance);
        if (res.stabilized) stop = true;
      }
    }
  } catch (...) {
    stop = true;
    phase_cv.notify_all();
    for (auto& w : workers) w.join();
    throw;
  }
  {
    std::lock_guard lock(phase_mu);
    stop = true;
  }
  phase_cv.notify_all();
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
  emit_row();
  res.online = std::move(pair.online);
  res.final_version = store.version();
  res.wall_seconds = elapsed();
  return res;
}

// Episodes per second from `generators` threads rolling out a fixed policy
// into a scratch buffer for `seconds` of wall time.
inline double measure_generation_throughput(const RunInputs& in, const QNet& policy, std::size_t generators,
                                            double seconds) {
  detail::validate_inputs(in);
  PrioritizedBuffer<NStepRecord> buffer(in.replay);
  std::atomic<bool> stop{false};
  std::atomic<std::uint64_t> next{0}, done{0};
  std::vector<std::thread> threads;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t g = 0; g < generators; ++g)
    threads.emplace_back([&] {
      while (!stop.load()) {
        generate_episode(in, policy, 0, next.fetch_add(1), buffer, nullptr, nullptr);
        done.fetch_add(1);
      }
    });
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
  stop = true;
  for (auto& t : threads) t.join();
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return static_cast<double>(done.load()) / dt;
}

}  // namespace recomind
