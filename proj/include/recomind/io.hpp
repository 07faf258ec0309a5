#pragma once

// On-disk artifacts: catalog/user checkpoints, JSONL datasets, encoded-net and
// policy-snapshot checkpoints, episode traces and run manifests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ios>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "recomind/agent.hpp"
#include "recomind/errors.hpp"
#include "recomind/greedy_model.hpp"
#include "recomind/nn_core.hpp"
#include "recomind/pipeline.hpp"
#include "recomind/simulator.hpp"
#include "recomind/world.hpp"

namespace recomind::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return is;
}

inline void finish(std::ofstream& os, const fs::path& p) {
  os.flush();
  if (!os) throw std::runtime_error("write failed for " + p.string());
}

// ---- catalog and user pool ----

inline constexpr std::string_view kCatalogMagic = "recomind-catalog";
inline constexpr std::string_view kUsersMagic = "recomind-users";

inline void write_catalog(const fs::path& p, const Catalog& c) {
  auto os = open_out(p);
  os << kCatalogMagic << " 1\n"
     << "items " << c.size() << " dim " << c.dim() << " clusters " << c.n_clusters << " seed " << c.seed
     << " noise " << std::hexfloat << c.noise << std::defaultfloat << '\n';
  nn::detail::write_values(os, c.centers.values());
  nn::detail::write_values(os, c.embeddings.values());
  for (std::size_t i = 0; i < c.cluster.size(); ++i) os << (i ? " " : "") << c.cluster[i];
  os << '\n';
  finish(os, p);
}

inline Catalog read_catalog(const fs::path& p) {
  auto is = open_in(p);
  nn::detail::expect_token(is, kCatalogMagic);
  nn::detail::expect_token(is, "1");
  Catalog c;
  std::size_t items = 0, dim = 0;
  std::string noise;
  nn::detail::expect_token(is, "items");
  is >> items;
  nn::detail::expect_token(is, "dim");
  is >> dim;
  nn::detail::expect_token(is, "clusters");
  is >> c.n_clusters;
  nn::detail::expect_token(is, "seed");
  is >> c.seed;
  nn::detail::expect_token(is, "noise");
  is >> noise;
  if (!is || items == 0 || dim == 0 || c.n_clusters == 0) throw ConfigError("catalog: bad header in " + p.string());
  c.noise = nn::detail::parse_double(noise);
  c.centers = nn::Matrix(c.n_clusters, dim);
  c.embeddings = nn::Matrix(items, dim);
  nn::detail::read_values(is, c.centers.values());
  nn::detail::read_values(is, c.embeddings.values());
  c.cluster.resize(items);
  c.members.assign(c.n_clusters, {});
  for (std::size_t i = 0; i < items; ++i) {
    if (!(is >> c.cluster[i]) || c.cluster[i] < 0 || static_cast<std::size_t>(c.cluster[i]) >= c.n_clusters)
      throw ConfigError("catalog: bad cluster id in " + p.string());
    c.members[static_cast<std::size_t>(c.cluster[i])].push_back(static_cast<int>(i));
  }
  return c;
}

inline void write_users(const fs::path& p, const UserPool& u) {
  auto os = open_out(p);
  os << kUsersMagic << " 1\n"
     << "users " << u.size() << " dim " << u.embeddings.cols() << " seed " << u.seed << " noise " << std::hexfloat
     << u.noise << std::defaultfloat << '\n';
  nn::detail::write_values(os, u.embeddings.values());
  for (std::size_t i = 0; i < u.home_cluster.size(); ++i) os << (i ? " " : "") << u.home_cluster[i];
  os << '\n';
  finish(os, p);
}

inline UserPool read_users(const fs::path& p) {
  auto is = open_in(p);
  nn::detail::expect_token(is, kUsersMagic);
  nn::detail::expect_token(is, "1");
  UserPool u;
  std::size_t n = 0, dim = 0;
  std::string noise;
  nn::detail::expect_token(is, "users");
  is >> n;
  nn::detail::expect_token(is, "dim");
  is >> dim;
  nn::detail::expect_token(is, "seed");
  is >> u.seed;
  nn::detail::expect_token(is, "noise");
  is >> noise;
  if (!is || n == 0 || dim == 0) throw ConfigError("users: bad header in " + p.string());
  u.noise = nn::detail::parse_double(noise);
  u.embeddings = nn::Matrix(n, dim);
  nn::detail::read_values(is, u.embeddings.values());
  u.home_cluster.resize(n);
  for (auto& h : u.home_cluster)
    if (!(is >> h)) throw ConfigError("users: truncated home clusters in " + p.string());
  return u;
}

// ---- JSONL dataset ----

inline json window_to_json(const std::vector<HistorySlot>& w) {
  json a = json::array();
  for (const auto& s : w) a.push_back({s.item_id, s.bits});
  return a;
}

inline std::vector<HistorySlot> window_from_json(const json& a) {
  std::vector<HistorySlot> w;
  for (const auto& e : a) w.push_back({e.at(0).get<int>(), e.at(1).get<FeedbackBits>()});
  return w;
}

inline void write_dataset(const fs::path& p, const std::vector<DatasetRow>& rows) {
  auto os = open_out(p);
  for (const auto& r : rows) {
    json j{{"user_id", r.user_id}, {"session_id", r.session_id}, {"step", r.step},
           {"window", window_to_json(r.window)}, {"action", r.action}, {"label", r.label}};
    os << j.dump() << '\n';
  }
  finish(os, p);
}

template <class F>
void for_each_jsonl(const fs::path& p, F&& f) {
  auto is = open_in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw ConfigError(p.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline std::vector<DatasetRow> read_dataset(const fs::path& p) {
  std::vector<DatasetRow> rows;
  for_each_jsonl(p, [&](const json& j) {
    rows.push_back({j.at("user_id").get<int>(), j.at("session_id").get<int>(), j.at("step").get<int>(),
                    window_from_json(j.at("window")), j.at("action").get<int>(), j.at("label").get<FeedbackBits>()});
  });
  return rows;
}

inline void write_initial_states(const fs::path& p, const std::vector<InitialState>& states) {
  auto os = open_out(p);
  for (const auto& s : states) os << json{{"user_id", s.user_id}, {"window", window_to_json(s.window)}}.dump() << '\n';
  finish(os, p);
}

inline std::vector<InitialState> read_initial_states(const fs::path& p) {
  std::vector<InitialState> out;
  for_each_jsonl(p, [&](const json& j) {
    out.push_back({j.at("user_id").get<int>(), window_from_json(j.at("window"))});
  });
  return out;
}

// ---- encoded-net checkpoints ----

inline constexpr std::string_view kEncodedMagic = "recomind-encoded";

inline void write_encoded(std::ostream& os, const EncodedNet& net, std::string_view kind) {
  const auto& c = net.config;
  os << kEncodedMagic << " 1\nkind " << kind << "\nencoder " << c.embed_dim << ' ' << c.window << ' '
     << c.slot_width << ' ' << c.trunk_hidden.size();
  for (auto h : c.trunk_hidden) os << ' ' << h;
  os << '\n';
  nn::write_layer(os, net.slot_projection);
  nn::write_mlp(os, net.trunk);
}

inline EncodedNet read_encoded(std::istream& is, std::string_view want_kind) {
  nn::detail::expect_token(is, kEncodedMagic);
  nn::detail::expect_token(is, "1");
  nn::detail::expect_token(is, "kind");
  std::string kind;
  is >> kind;
  if (kind != want_kind)
    throw ConfigError("checkpoint holds a '" + kind + "' network, expected '" + std::string(want_kind) + "'");
  nn::detail::expect_token(is, "encoder");
  EncodedNet net;
  std::size_t n_hidden = 0;
  is >> net.config.embed_dim >> net.config.window >> net.config.slot_width >> n_hidden;
  net.config.trunk_hidden.resize(n_hidden);
  for (auto& h : net.config.trunk_hidden) is >> h;
  if (!is) throw ConfigError("checkpoint: bad encoder header");
  net.config.validate();
  net.slot_projection = nn::read_layer(is);
  net.trunk = nn::read_mlp(is);
  if (net.slot_projection.in_width() != net.config.slot_input_width() ||
      net.slot_projection.out_width() != net.config.slot_width ||
      net.trunk.input_width() != net.config.feature_width())
    throw ConfigError("checkpoint: layer widths disagree with the encoder header");
  return net;
}

inline void save_greedy(const fs::path& p, const GreedyNet& g) {
  auto os = open_out(p);
  write_encoded(os, g.net, "greedy");
  finish(os, p);
}

inline GreedyNet load_greedy(const fs::path& p) {
  auto is = open_in(p);
  GreedyNet g{read_encoded(is, "greedy")};
  if (g.net.trunk.head_names != feedback_head_names())
    throw ConfigError("greedy checkpoint heads do not match {watch, long_watch, save, hide, exit}: " + p.string());
  return g;
}

inline void write_q(std::ostream& os, const QNet& q) { write_encoded(os, q.net, "q"); }

inline QNet read_q(std::istream& is) {
  QNet q{read_encoded(is, "q")};
  if (q.net.trunk.head_names != std::vector<std::string>{kQHead})
    throw ConfigError("q checkpoint must have the single head 'q'");
  return q;
}

inline void save_q(const fs::path& p, const QNet& q) {
  auto os = open_out(p);
  write_q(os, q);
  finish(os, p);
}

inline QNet load_q(const fs::path& p) {
  auto is = open_in(p);
  return read_q(is);
}

// Policy snapshot: Q checkpoint, exploration config and version counter.
inline void save_snapshot(const fs::path& p, const QNet& q, const ExplorationConfig& e, std::uint64_t version) {
  auto os = open_out(p);
  write_q(os, q);
  os << "exploration " << std::hexfloat << e.epsilon << ' ' << e.temperature << ' ' << e.truncation
     << std::defaultfloat << ' ' << to_string(e.mode) << "\nversion " << version << '\n';
  finish(os, p);
}

struct LoadedSnapshot {
  QNet net;
  ExplorationConfig exploration;
  std::uint64_t version = 0;
};

inline LoadedSnapshot load_snapshot(const fs::path& p) {
  auto is = open_in(p);
  LoadedSnapshot s{read_q(is), {}, 0};
  nn::detail::expect_token(is, "exploration");
  std::string eps, tau, rho, mode;
  is >> eps >> tau >> rho >> mode;
  nn::detail::expect_token(is, "version");
  is >> s.version;
  if (!is) throw ConfigError("snapshot: truncated trailer in " + p.string());
  s.exploration = {nn::detail::parse_double(eps), nn::detail::parse_double(tau), nn::detail::parse_double(rho),
                   explore_mode_from_string(mode)};
  s.exploration.validate();
  return s;
}

// ---- episode traces ----

struct TraceStep {
  int t = 0;
  std::vector<HistorySlot> window;
  int action = -1;
  double reward = 0.0;
  FeedbackProbs probs{};
  FeedbackBits bits{};
  bool done = false;
};

struct TraceEpisode {
  int user_id = -1;
  std::vector<HistorySlot> initial_window;
  std::vector<int> candidates;
  std::vector<TraceStep> steps;
};

inline TraceStep trace_step(const Transition& tr) {
  return {tr.state.t, tr.state.window, tr.action, tr.reward, tr.feedback.probs, tr.feedback.bits, tr.done};
}

// One "episode" header line followed by one "step" line per transition.
inline void write_trace(std::ostream& os, const std::vector<TraceEpisode>& eps) {
  for (const auto& e : eps) {
    os << json{{"type", "episode"}, {"user_id", e.user_id}, {"window", window_to_json(e.initial_window)},
               {"candidates", e.candidates}}
              .dump()
       << '\n';
    for (const auto& s : e.steps)
      os << json{{"type", "step"}, {"t", s.t}, {"window", window_to_json(s.window)}, {"action", s.action},
                 {"reward", s.reward}, {"probs", s.probs}, {"bits", s.bits}, {"done", s.done}}
                .dump()
         << '\n';
  }
}

inline void save_trace(const fs::path& p, const std::vector<TraceEpisode>& eps) {
  auto os = open_out(p);
  write_trace(os, eps);
  finish(os, p);
}

inline std::vector<TraceEpisode> load_trace(const fs::path& p) {
  std::vector<TraceEpisode> eps;
  for_each_jsonl(p, [&](const json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "episode") {
      eps.push_back({j.at("user_id").get<int>(), window_from_json(j.at("window")),
                     j.at("candidates").get<std::vector<int>>(), {}});
    } else if (type == "step") {
      if (eps.empty()) throw ConfigError("trace: step before any episode header");
      eps.back().steps.push_back({j.at("t").get<int>(), window_from_json(j.at("window")), j.at("action").get<int>(),
                                  j.at("reward").get<double>(), j.at("probs").get<FeedbackProbs>(),
                                  j.at("bits").get<FeedbackBits>(), j.at("done").get<bool>()});
    } else {
      throw ConfigError("trace: unknown record type '" + type + "'");
    }
  });
  return eps;
}

struct ReplayReport {
  std::size_t episodes = 0;
  std::size_t steps = 0;
  std::size_t divergences = 0;
  std::string first_divergence;
};

// Re-runs each episode's action sequence through `sim` and compares every
// recorded field bit for bit.
inline ReplayReport replay_trace(const Simulator& sim, const std::vector<TraceEpisode>& eps) {
  ReplayReport rep;
  auto diverge = [&](std::size_t e, int t, const std::string& what) {
    if (rep.divergences++ == 0)
      rep.first_divergence = "episode " + std::to_string(e) + " t=" + std::to_string(t) + ": " + what;
  };
  for (std::size_t e = 0; e < eps.size(); ++e) {
    const auto& te = eps[e];
    auto cands = std::make_shared<const std::vector<int>>(te.candidates);
    Episode ep = sim.start({te.user_id, te.initial_window}, cands);
    ++rep.episodes;
    for (const auto& s : te.steps) {
      ++rep.steps;
      if (ep.done) {
        diverge(e, s.t, "episode already finished");
        break;
      }
      if (ep.state.t != s.t) diverge(e, s.t, "step index");
      if (ep.state.window != s.window) diverge(e, s.t, "window");
      const Transition tr = sim.step(ep, s.action);
      if (tr.reward != s.reward) diverge(e, s.t, "reward");
      if (tr.feedback.probs != s.probs) diverge(e, s.t, "probabilities");
      if (tr.feedback.bits != s.bits) diverge(e, s.t, "feedback bits");
      if (tr.done != s.done) diverge(e, s.t, "done flag");
    }
    if (!ep.done && !te.steps.empty() && te.steps.back().done) diverge(e, te.steps.back().t, "episode did not end");
  }
  return rep;
}

// ---- hashing and manifests ----

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_file(const fs::path& p) {
  auto is = open_in(p);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) h = fnv1a({buf, static_cast<std::size_t>(is.gcount())}, h);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline void write_json(const fs::path& p, const json& j) {
  auto os = open_out(p);
  os << j.dump(2) << '\n';
  finish(os, p);
}

inline json read_json(const fs::path& p) {
  auto is = open_in(p);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + p.string() + ": " + e.what());
  }
}

inline void write_metrics(const fs::path& p, std::span<const MetricsRow> rows) {
  auto os = open_out(p);
  write_metrics_csv(os, rows);
  finish(os, p);
}

}  // namespace recomind::io
