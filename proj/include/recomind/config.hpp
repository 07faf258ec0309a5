#pragma once

// Layered run configuration: built-in defaults, then a JSON file (comments
// allowed), then dotted `key=value` overrides. Every key must already exist in
// the defaults, so typos fail loudly with the offending path.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "recomind/agent.hpp"
#include "recomind/errors.hpp"
#include "recomind/evalbench.hpp"
#include "recomind/greedy_model.hpp"
#include "recomind/pipeline.hpp"
#include "recomind/replay.hpp"
#include "recomind/simulator.hpp"
#include "recomind/world.hpp"

namespace recomind {

using json = nlohmann::json;

struct EvalConfig {
  std::size_t episodes = 10000;
  std::uint64_t seed = 2024;
  bool operator==(const EvalConfig&) const = default;
};

struct AblationConfig {
  std::string axis = "warmstart";
  std::size_t total_train_steps = 3000;
  std::size_t checkpoint_every = 500;
  std::size_t eval_episodes = 500;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t candidates = 100;  // reduced candidate set for ablation runs; 0 keeps env.candidates
  bool operator==(const AblationConfig&) const = default;
};

struct Config {
  std::uint64_t seed = 7;
  WorldConfig world;
  EncoderConfig encoder;
  GreedyTrainConfig greedy;
  EnvConfig env;
  ExplorationConfig exploration;
  ReplayConfig replay;
  TrainConfig training;
  RunConfig run;
  std::size_t checkpoint_every = 500;  // RL checkpoint cadence in train steps
  EvalConfig eval;
  AblationConfig ablation;

  bool operator==(const Config&) const = default;
  void validate() const;
};

// ---- enum and small-type conversions ----

inline void to_json(json& j, ExploreMode m) { j = std::string(to_string(m)); }
inline void from_json(const json& j, ExploreMode& m) { m = explore_mode_from_string(j.get<std::string>()); }

inline void to_json(json& j, RewardKind k) { j = k == RewardKind::binary ? "binary" : "probability"; }
inline void from_json(const json& j, RewardKind& k) {
  const auto s = j.get<std::string>();
  if (s == "probability") k = RewardKind::probability;
  else if (s == "binary") k = RewardKind::binary;
  else throw ConfigError("unknown reward kind '" + s + "' (expected probability|binary)");
}

inline void to_json(json& j, const RewardWeights& w) {
  j = json::object();
  for (std::size_t f = 0; f < kNumFeedback; ++f) j[std::string(kFeedbackNames[f])] = w.c[f];
}
inline void from_json(const json& j, RewardWeights& w) {
  for (std::size_t f = 0; f < kNumFeedback; ++f) w.c[f] = j.at(std::string(kFeedbackNames[f])).get<double>();
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GroundTruthParams, watch_gain, watch_fatigue, watch_bias,
                                                long_watch_gain, long_watch_bias, save_gain, save_fatigue,
                                                save_bias, hide_gain, hide_bias, exit_bias, exit_step,
                                                exit_affinity, exit_fatigue, lookback)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LoggingPolicy, subset_size, repeat_prob, max_focus, home_prob)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(WorldConfig, n_items, dim, n_clusters, item_noise, n_users,
                                                user_noise, sessions_per_user, max_session_len, truth, logging)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, embed_dim, window, slot_width, trunk_hidden)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GreedyTrainConfig, epochs, batch_size, learning_rate,
                                                holdout_fraction)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EnvConfig, threshold, lookback, max_horizon, candidates, weights,
                                                reward_kind)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExplorationConfig, epsilon, temperature, truncation, mode)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReplayConfig, capacity, alpha, beta, priority_eps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, gamma, n_step, batch_size, learning_rate,
                                                target_sync_every)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, collection_episodes, training_steps, snapshot_every,
                                                generators, total_train_steps, stabilization_window,
                                                stabilization_tolerance, metrics_every, lockstep)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, episodes, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationConfig, axis, total_train_steps, checkpoint_every,
                                                eval_episodes, seeds, candidates)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Config, seed, world, encoder, greedy, env, exploration, replay,
                                                training, run, checkpoint_every, eval, ablation)

inline void Config::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(world.n_items >= 1 && world.dim >= 1 && world.n_clusters >= 1 && world.n_users >= 1,
       "world: sizes must be >= 1");
  need(world.n_clusters <= world.n_items, "world.n_clusters must not exceed world.n_items");
  need(world.item_noise >= 0.0 && world.user_noise >= 0.0, "world: noise must be >= 0");
  need(world.sessions_per_user >= 1 && world.max_session_len >= 1, "world: session counts must be >= 1");
  const auto& t = world.truth;
  need(t.watch_fatigue >= 0.0 && t.save_fatigue >= 0.0 && t.exit_fatigue >= 0.0,
       "world.truth: fatigue coefficients must be >= 0");
  need(t.lookback >= 1, "world.truth.lookback must be >= 1");
  const auto& lp = world.logging;
  need(lp.subset_size >= 1, "world.logging.subset_size must be >= 1");
  need(lp.repeat_prob >= 0.0 && lp.max_focus >= 0.0 && lp.repeat_prob + lp.max_focus <= 1.0,
       "world.logging: repeat_prob + max_focus must lie in [0,1]");
  need(lp.home_prob >= 0.0 && lp.home_prob <= 1.0, "world.logging.home_prob must be in [0,1]");

  encoder.validate();
  need(encoder.embed_dim == world.dim, "encoder.embed_dim must equal world.dim");
  need(encoder.window == env.lookback, "encoder.window must equal env.lookback");
  need(encoder.window == t.lookback, "encoder.window must equal world.truth.lookback");
  need(greedy.epochs >= 1 && greedy.batch_size >= 1, "greedy: epochs and batch_size must be >= 1");
  need(greedy.learning_rate > 0.0, "greedy.learning_rate must be > 0");
  need(greedy.holdout_fraction >= 0.0 && greedy.holdout_fraction < 1.0, "greedy.holdout_fraction must be in [0,1)");

  env.validate();
  need(env.candidates <= world.n_items, "env.candidates must not exceed world.n_items");
  exploration.validate();
  replay.validate();
  training.validate();
  run.validate();
  need(eval.episodes >= 1, "eval.episodes must be >= 1");
  ablation_axis_from_string(ablation.axis);
  need(ablation.total_train_steps >= 1 && ablation.checkpoint_every >= 1 && ablation.eval_episodes >= 1,
       "ablation: step and episode counts must be >= 1");
  need(!ablation.seeds.empty(), "ablation.seeds must not be empty");
  need(ablation.candidates <= world.n_items, "ablation.candidates must not exceed world.n_items");
}

inline json config_to_json(const Config& c) { return json(c); }

namespace detail {

// Recursively overlays `src` onto `dst`; keys must already exist with a compatible type.
inline void overlay(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config: expected an object at '" + (path.empty() ? "<root>" : path) + "'");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& d = dst[it.key()];
    const json& v = it.value();
    if (d.is_object()) {
      overlay(d, v, key);
    } else if (d.is_number() != v.is_number() || d.is_string() != v.is_string() ||
               d.is_boolean() != v.is_boolean() || d.is_array() != v.is_array()) {
      throw ConfigError("config: wrong type for '" + key + "'");
    } else if (d.is_number_unsigned() && !(v.is_number_unsigned())) {
      throw ConfigError("config: '" + key + "' must be a non-negative integer");
    } else {
      d = v;
    }
  }
}

inline json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: cannot parse " + what + ": " + e.what());
  }
}

inline Config from_merged(const json& j) {
  Config c;
  try {
    c = j.get<Config>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace detail

// Applies "a.b.c=value" overrides to a JSON tree. Values parse as JSON when
// they can (numbers, booleans, arrays); anything else is taken as a string.
inline void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("config: override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t p; (p = rest.find('.')) != std::string::npos; rest = rest.substr(p + 1)) parts.push_back(rest.substr(0, p));
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    detail::overlay(j, patch, "");
  }
}

inline Config config_from_json_text(const std::string& text, const std::vector<std::string>& overrides = {}) {
  json merged = config_to_json(Config{});
  std::string stripped = text;
  if (stripped.find_first_not_of(" \t\r\n") != std::string::npos)
    detail::overlay(merged, detail::parse_text(text, "config text"), "");
  apply_overrides(merged, overrides);
  return detail::from_merged(merged);
}

// defaults <- file <- overrides. An empty path means defaults only.
inline Config load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::string text;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    text = ss.str();
  }
  return config_from_json_text(text, overrides);
}

inline std::string echo_config(const Config& c) { return config_to_json(c).dump(2) + "\n"; }

inline AblationSpec ablation_spec(const Config& c) {
  AblationSpec s;
  s.axis = ablation_axis_from_string(c.ablation.axis);
  s.total_train_steps = c.ablation.total_train_steps;
  s.checkpoint_every = c.ablation.checkpoint_every;
  s.eval_episodes = c.ablation.eval_episodes;
  s.seeds = c.ablation.seeds;
  return s;
}

}  // namespace recomind
