#pragma once

// Paired policy evaluation (greedy vs Q), percentage-delta tables, and the
// warm-start / reward / exploration ablations with CSV learning curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "recomind/agent.hpp"
#include "recomind/errors.hpp"
#include "recomind/greedy_model.hpp"
#include "recomind/pipeline.hpp"
#include "recomind/simulator.hpp"

namespace recomind {

// Greedy policy ranks by the save head; RL policy ranks by Q.
class Policy {
 public:
  static Policy greedy(const GreedyNet& g) { return Policy(&g, nullptr); }
  static Policy rl(const QNet& q) { return Policy(nullptr, &q); }

  bool is_greedy() const { return greedy_ != nullptr; }

  std::vector<double> scores(const Catalog& catalog, const SessionState& s, std::span<const int> ids) const {
    if (q_) return q_values(*q_, catalog, s, ids);
    const auto m = score_actions(greedy_->net, catalog, s, ids);
    std::vector<double> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out[i] = m(i, index_of(Feedback::save));
    return out;
  }

  int choose(const Catalog& catalog, const SessionState& s, std::span<const int> ids) const {
    return ids[argmax_position(scores(catalog, s, ids), ids)];
  }

  bool operator==(const Policy&) const = default;

 private:
  Policy(const GreedyNet* g, const QNet* q) : greedy_(g), q_(q) {}
  const GreedyNet* greedy_;
  const QNet* q_;
};

struct MetricCounts {
  std::uint64_t episodes = 0;
  std::uint64_t watch = 0;
  std::uint64_t long_watch = 0;
  std::uint64_t save = 0;
  std::uint64_t hide = 0;
  std::map<std::size_t, std::uint64_t> depth;  // session length -> episodes
  double mean_discounted_return = 0.0;

  std::uint64_t depth_at_least(std::size_t k) const {
    std::uint64_t n = 0;
    for (auto [d, c] : depth)
      if (d >= k) n += c;
    return n;
  }
  bool operator==(const MetricCounts&) const = default;
};

inline std::uint64_t eval_episode_seed(std::uint64_t seed, std::uint64_t i) { return derive_seed(seed, 0xe7a1, i); }

// Exploit-only rollouts. Episode i starts from the same (initial state,
// candidate set) for every policy evaluated with the same seed.
// `on_transition(episode, transition)` sees every step when set.
inline MetricCounts evaluate_policy(const Policy& policy, const Simulator& sim, std::span<const InitialState> pool,
                                    std::size_t n_episodes, std::uint64_t seed, double gamma,
                                    const std::function<void(std::size_t, const Episode&, const Transition&)>&
                                        on_transition = {}) {
  if (n_episodes < 1) throw ConfigError("evaluate_policy: n_episodes must be >= 1");
  MetricCounts m;
  double total_return = 0.0;
  for (std::size_t i = 0; i < n_episodes; ++i) {
    auto ep = sim.reset(pool, eval_episode_seed(seed, i));
    const Episode start = ep;
    const auto& ids = *ep.candidates;
    double discount = 1.0, ret = 0.0;
    std::size_t len = 0;
    while (!ep.done) {
      const auto tr = sim.step(ep, policy.choose(sim.catalog(), ep.state, ids));
      const auto& b = tr.feedback.bits;
      m.watch += b[index_of(Feedback::watch)];
      m.long_watch += b[index_of(Feedback::long_watch)];
      m.save += b[index_of(Feedback::save)];
      m.hide += b[index_of(Feedback::hide)];
      ret += discount * tr.reward;
      discount *= gamma;
      ++len;
      if (on_transition) on_transition(i, start, tr);
    }
    ++m.depth[len];
    ++m.episodes;
    total_return += ret;
  }
  m.mean_discounted_return = total_return / static_cast<double>(n_episodes);
  return m;
}

struct ComparisonRow {
  std::string metric;
  double rl = 0.0;
  double greedy = 0.0;
  std::optional<double> delta;  // (rl - greedy) / greedy; empty when greedy == 0
};

struct ComparisonTable {
  MetricCounts rl;
  MetricCounts greedy;
  std::vector<ComparisonRow> rows;

  const ComparisonRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.metric == name) return r;
    throw UsageError("comparison: no metric '" + name + "'");
  }
};

inline std::optional<double> relative_delta(double rl, double base) {
  if (base == 0.0) return std::nullopt;
  return (rl - base) / base;
}

inline ComparisonTable tabulate(const MetricCounts& rl, const MetricCounts& greedy) {
  ComparisonTable t{rl, greedy, {}};
  auto add = [&](std::string name, double a, double b) { t.rows.push_back({std::move(name), a, b, relative_delta(a, b)}); };
  add("watch", double(rl.watch), double(greedy.watch));
  add("long_watch", double(rl.long_watch), double(greedy.long_watch));
  add("save", double(rl.save), double(greedy.save));
  add("hide", double(rl.hide), double(greedy.hide));
  for (std::size_t k : {1, 2, 3, 10})
    add("session_depth>=" + std::to_string(k), double(rl.depth_at_least(k)), double(greedy.depth_at_least(k)));
  add("discounted_return", rl.mean_discounted_return, greedy.mean_discounted_return);
  return t;
}

inline ComparisonTable compare_policies(const Policy& rl, const Policy& greedy, const Simulator& sim,
                                        std::span<const InitialState> pool, std::size_t n_episodes,
                                        std::uint64_t seed, double gamma) {
  const auto a = evaluate_policy(rl, sim, pool, n_episodes, seed, gamma);
  const auto b = rl == greedy ? a : evaluate_policy(greedy, sim, pool, n_episodes, seed, gamma);
  return tabulate(a, b);
}

inline void print_table(std::ostream& os, const ComparisonTable& t) {
  std::ostringstream s;
  s << std::left << std::setw(22) << "metric" << std::right << std::setw(14) << "rl" << std::setw(14) << "greedy"
    << std::setw(11) << "delta" << '\n';
  for (const auto& r : t.rows) {
    s << std::left << std::setw(22) << r.metric << std::right << std::setw(14) << std::setprecision(6) << r.rl
      << std::setw(14) << r.greedy << std::setw(11);
    if (r.delta) {
      std::ostringstream d;
      d << std::showpos << std::fixed << std::setprecision(2) << 100.0 * *r.delta << '%';
      s << d.str();
    } else {
      s << "undefined";
    }
    s << '\n';
  }
  os << s.str();
}

// ---- ablations ----

enum class AblationAxis { warmstart, reward, explore };

inline std::string_view to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::warmstart: return "warmstart";
    case AblationAxis::reward: return "reward";
    case AblationAxis::explore: return "explore";
  }
  return "warmstart";
}

inline AblationAxis ablation_axis_from_string(std::string_view s) {
  for (auto a : {AblationAxis::warmstart, AblationAxis::reward, AblationAxis::explore})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown ablation axis '" + std::string(s) + "'");
}

struct AblationVariant {
  std::string name;
  bool warm_start = true;
  RewardKind reward = RewardKind::probability;
  ExploreMode explore = ExploreMode::recomind_trunc;
  bool operator==(const AblationVariant&) const = default;
};

inline std::vector<AblationVariant> variants_for(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::warmstart:
      return {{"warmstart_on", true, RewardKind::probability, ExploreMode::recomind_trunc},
              {"warmstart_off", false, RewardKind::probability, ExploreMode::recomind_trunc}};
    case AblationAxis::reward:
      return {{"reward_prob", true, RewardKind::probability, ExploreMode::recomind_trunc},
              {"reward_binary", true, RewardKind::binary, ExploreMode::recomind_trunc}};
    case AblationAxis::explore: {
      std::vector<AblationVariant> v;
      for (auto m : {ExploreMode::recomind_trunc, ExploreMode::recomind_all, ExploreMode::eps_greedy,
                     ExploreMode::softmax_q})
        v.push_back({std::string(to_string(m)), true, RewardKind::probability, m});
      return v;
    }
  }
  return {};
}

struct AblationSpec {
  AblationAxis axis = AblationAxis::warmstart;
  std::vector<AblationVariant> variants;  // empty: the standard pair/quad for the axis
  std::size_t total_train_steps = 3000;
  std::size_t checkpoint_every = 500;
  std::size_t eval_episodes = 500;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  std::vector<AblationVariant> resolved_variants() const {
    auto v = variants.empty() ? variants_for(axis) : variants;
    const AblationVariant base{};
    for (const auto& x : v) {
      const bool off_axis = (axis != AblationAxis::warmstart && x.warm_start != base.warm_start) ||
                            (axis != AblationAxis::reward && x.reward != base.reward) ||
                            (axis != AblationAxis::explore && x.explore != base.explore);
      if (off_axis) throw ConfigError("ablation: variant '" + x.name + "' varies more than the " +
                                      std::string(to_string(axis)) + " axis");
    }
    return v;
  }
};

struct CurveSeries {
  std::string variant;
  std::vector<std::uint64_t> steps;
  std::vector<std::vector<double>> values;  // [seed][checkpoint]

  double mean_at(std::size_t k) const {
    double s = 0.0;
    for (const auto& v : values) s += v[k];
    return s / static_cast<double>(values.size());
  }
  double std_at(std::size_t k) const {
    if (values.size() < 2) return 0.0;
    const double m = mean_at(k);
    double s = 0.0;
    for (const auto& v : values) s += (v[k] - m) * (v[k] - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

struct AblationContext {
  const Catalog* catalog = nullptr;
  const UserPool* users = nullptr;
  const GreedyNet* greedy = nullptr;
  EnvConfig env;
  std::span<const InitialState> pool;
  TrainConfig train;
  ExplorationConfig explore;
  ReplayConfig replay;
  RunConfig run;
  std::ostream* progress = nullptr;
};

// Train one variant for one seed; returns the exploit-only evaluation return
// at each checkpoint. Evaluation always uses probability rewards.
inline std::vector<double> run_variant(const AblationContext& ctx, const AblationSpec& spec,
                                       const AblationVariant& variant, std::uint64_t seed,
                                       std::vector<std::uint64_t>* steps_out = nullptr) {
  EnvConfig train_env = ctx.env;
  train_env.reward_kind = variant.reward;
  EnvConfig eval_env = ctx.env;
  eval_env.reward_kind = RewardKind::probability;
  const Simulator train_sim(*ctx.catalog, *ctx.users, *ctx.greedy, train_env);
  const Simulator eval_sim(*ctx.catalog, *ctx.users, *ctx.greedy, eval_env);

  RunInputs in;
  in.sim = &train_sim;
  in.pool = ctx.pool;
  in.train = ctx.train;
  in.explore = ctx.explore;
  in.explore.mode = variant.explore;
  in.replay = ctx.replay;
  in.run = ctx.run;
  in.run.total_train_steps = spec.total_train_steps;
  in.run.stabilization_window = std::max<std::size_t>(in.run.stabilization_window, 1u << 30);  // fixed budget
  in.seed = derive_seed(seed, 0xab1a);
  in.checkpoint_every = spec.checkpoint_every;
  std::vector<double> values;
  in.on_checkpoint = [&](std::uint64_t step, const QNet& net) {
    const auto m = evaluate_policy(Policy::rl(net), eval_sim, ctx.pool, spec.eval_episodes,
                                   derive_seed(seed, 0xe0a1), ctx.train.gamma);
    values.push_back(m.mean_discounted_return);
    if (steps_out) steps_out->push_back(step);
    if (ctx.progress)
      *ctx.progress << "[ablate] " << variant.name << " seed=" << seed << " step=" << step
                    << " eval_return=" << m.mean_discounted_return << std::endl;
  };
  QNet init = variant.warm_start ? warm_start(*ctx.greedy)
                                 : random_q_net(ctx.greedy->net.config, derive_seed(seed, 0x5c7a));
  run_sync(in, std::move(init));
  return values;
}

inline std::vector<CurveSeries> run_ablation(const AblationSpec& spec, const AblationContext& ctx) {
  if (spec.seeds.empty()) throw ConfigError("ablation: no seeds");
  if (spec.checkpoint_every < 1) throw ConfigError("ablation: checkpoint_every must be >= 1");
  std::vector<CurveSeries> out;
  for (const auto& v : spec.resolved_variants()) {
    CurveSeries s{v.name, {}, {}};
    for (auto seed : spec.seeds) {
      std::vector<std::uint64_t> steps;
      s.values.push_back(run_variant(ctx, spec, v, seed, &steps));
      s.steps = std::move(steps);
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct CurveRow {
  std::uint64_t step = 0;
  std::string variant;
  double mean = 0.0;
  double std = 0.0;
  bool operator==(const CurveRow&) const = default;
};

inline std::vector<CurveRow> curve_rows(const std::vector<CurveSeries>& series) {
  std::vector<CurveRow> rows;
  for (const auto& s : series)
    for (std::size_t k = 0; k < s.steps.size(); ++k) rows.push_back({s.steps[k], s.variant, s.mean_at(k), s.std_at(k)});
  return rows;
}

inline void emit_curves(const std::vector<CurveSeries>& series, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("emit_curves: cannot open " + path);
  os << "step,variant,mean,std\n";
  for (const auto& r : curve_rows(series)) {
    std::ostringstream line;
    line << std::setprecision(17) << r.step << ',' << r.variant << ',' << r.mean << ',' << r.std;
    os << line.str() << '\n';
  }
  if (!os) throw std::runtime_error("emit_curves: write failed for " + path);
}

inline std::vector<CurveRow> read_curves(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_curves: cannot open " + path);
  std::string line;
  std::getline(is, line);
  if (line != "step,variant,mean,std") throw ConfigError("read_curves: unexpected header in " + path);
  std::vector<CurveRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, variant, mean, sd;
    std::getline(ss, step, ',');
    std::getline(ss, variant, ',');
    std::getline(ss, mean, ',');
    std::getline(ss, sd, ',');
    rows.push_back({std::stoull(step), variant, std::stod(mean), std::stod(sd)});
  }
  return rows;
}

}  // namespace recomind
