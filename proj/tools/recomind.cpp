// recomind command-line entry point: gen-world, train-greedy, train-rl,
// evaluate, ablate and replay-episode over a shared run directory.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recomind/config.hpp"
#include "recomind/io.hpp"

namespace fs = std::filesystem;
using namespace recomind;
using io::json;

namespace {

constexpr const char* kVersion = "recomind 0.1.0";

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string mode = "sync";
  std::string out;
  std::string runs_root = "runs";
  std::string tag = "run";
  std::vector<std::string> overrides;
  std::string trace;
  std::size_t trace_episodes = 5;
};

// Raised when an earlier stage's artifact is absent.
struct MissingArtifact : ConfigError {
  using ConfigError::ConfigError;
};

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << std::setw(3) << std::setfill('0') << ms;
  return os.str();
}

std::optional<fs::path> latest_run(const fs::path& root) {
  if (!fs::is_directory(root)) return std::nullopt;
  std::optional<fs::path> best;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "config.json"))
      if (!best || e.path().filename() > best->filename()) best = e.path();
  return best;
}

fs::path resolve_run(const Options& o, const std::string& stage) {
  if (!o.out.empty()) {
    if (!fs::is_directory(o.out))
      throw MissingArtifact("run directory '" + o.out + "' does not exist; run `recomind gen-world --out " + o.out +
                            "` first");
    return o.out;
  }
  auto r = latest_run(o.runs_root);
  if (!r)
    throw MissingArtifact("no run directory under '" + o.runs_root + "'; run `recomind gen-world` before `recomind " +
                          stage + "`");
  return *r;
}

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p))
    throw MissingArtifact("missing " + p.string() + "; run `recomind " + producer + "` first");
}

Config stage_config(const Options& o, const fs::path& run) {
  // Later stages read the config echoed by gen-world unless another file is given.
  const std::string file = o.config_path.empty() ? (run / "config.json").string() : o.config_path;
  auto ov = o.overrides;
  if (o.seed) ov.push_back("seed=" + std::to_string(*o.seed));
  return load_config(file, ov);
}

void record_stage(const fs::path& run, const std::string& stage, const Config& cfg,
                  const std::vector<fs::path>& artifacts, const json& extra = json::object()) {
  const fs::path mp = run / "manifest.json";
  json m = fs::exists(mp) ? io::read_json(mp) : json{{"version", kVersion}, {"stages", json::object()}};
  json a = json::object();
  for (const auto& p : artifacts) a[fs::relative(p, run).generic_string()] = io::hash_file(p);
  const std::string echo = echo_config(cfg);
  json entry{{"seed", cfg.seed},
             {"config", config_to_json(cfg)},
             {"config_hash", [&] {
                std::ostringstream os;
                os << std::hex << std::setw(16) << std::setfill('0') << io::fnv1a(echo);
                return os.str();
              }()},
             {"artifacts", a},
             {"finished", timestamp()},
             {"tool_version", kVersion}};
  entry.update(extra);
  m["stages"][stage] = entry;
  io::write_json(mp, m);
}

struct WorldArtifacts {
  Catalog catalog;
  UserPool users;
  std::vector<InitialState> initial_states;
};

WorldArtifacts load_world(const fs::path& run, bool need_states = true) {
  require(run / "world" / "catalog.ckpt", "gen-world");
  require(run / "world" / "users.ckpt", "gen-world");
  WorldArtifacts w{io::read_catalog(run / "world" / "catalog.ckpt"), io::read_users(run / "world" / "users.ckpt"), {}};
  if (need_states) {
    require(run / "world" / "initial_states.jsonl", "gen-world");
    w.initial_states = io::read_initial_states(run / "world" / "initial_states.jsonl");
  }
  return w;
}

GreedyNet load_greedy_model(const fs::path& run) {
  require(run / "greedy" / "greedy.ckpt", "train-greedy");
  return io::load_greedy(run / "greedy" / "greedy.ckpt");
}

// ---- subcommands ----

int cmd_gen_world(const Options& o) {
  auto ov = o.overrides;
  if (o.seed) ov.push_back("seed=" + std::to_string(*o.seed));
  const Config cfg = load_config(o.config_path, ov);
  const fs::path run = o.out.empty() ? fs::path(o.runs_root) / (timestamp() + "-" + o.tag) : fs::path(o.out);
  fs::create_directories(run);
  {
    auto os = io::open_out(run / "config.json");
    os << echo_config(cfg);
    io::finish(os, run / "config.json");
  }
  const World w = build_world(cfg.world, cfg.seed);
  const auto dir = run / "world";
  io::write_catalog(dir / "catalog.ckpt", w.catalog);
  io::write_users(dir / "users.ckpt", w.users);
  io::write_dataset(dir / "dataset.jsonl", w.dataset.rows);
  io::write_initial_states(dir / "initial_states.jsonl", w.dataset.initial_states);
  record_stage(run, "gen-world", cfg,
               {run / "config.json", dir / "catalog.ckpt", dir / "users.ckpt", dir / "dataset.jsonl",
                dir / "initial_states.jsonl"},
               {{"rows", w.dataset.rows.size()}, {"sessions", w.dataset.initial_states.size()}});
  std::cout << "gen-world: " << w.catalog.size() << " items, " << w.users.size() << " users, "
            << w.dataset.rows.size() << " rows, " << w.dataset.initial_states.size() << " sessions -> "
            << run.string() << '\n';
  return 0;
}

int cmd_train_greedy(const Options& o) {
  const fs::path run = resolve_run(o, "train-greedy");
  const Config cfg = stage_config(o, run);
  auto w = load_world(run, false);
  require(run / "world" / "dataset.jsonl", "gen-world");
  const auto rows = io::read_dataset(run / "world" / "dataset.jsonl");
  const std::uint64_t split_seed = derive_seed(cfg.seed, 0x5917);
  std::vector<const DatasetRow*> train, hold;
  for (const auto& r : rows)
    (is_holdout_session(r.session_id, cfg.greedy.holdout_fraction, split_seed) ? hold : train).push_back(&r);
  if (train.empty()) throw ConfigError("train-greedy: no training rows after the holdout split");
  const auto res = train_greedy(train, w.catalog, w.users, cfg.encoder, cfg.greedy, derive_seed(cfg.seed, 0x9eed));
  const auto dir = run / "greedy";
  io::save_greedy(dir / "greedy.ckpt", res.model);
  json report{{"loss_curve", res.loss_curve}, {"train_rows", train.size()}, {"holdout_rows", hold.size()}};
  if (!hold.empty()) {
    const auto h = evaluate_heads(res.model, w.catalog, w.users, hold);
    json heads = json::object();
    for (std::size_t f = 0; f < kNumFeedback; ++f)
      heads[std::string(kFeedbackNames[f])] = {
          {"auc", h.auc[f]}, {"mean_pred", h.mean_pred[f]}, {"label_rate", h.label_rate[f]}};
    report["heads"] = heads;
    report["mean_auc"] = h.mean_auc;
    std::cout << "train-greedy: held-out mean AUC " << std::fixed << std::setprecision(4) << h.mean_auc << " (";
    for (std::size_t f = 0; f < kNumFeedback; ++f) std::cout << (f ? ", " : "") << kFeedbackNames[f] << ' ' << h.auc[f];
    std::cout << ")\n";
  }
  io::write_json(dir / "report.json", report);
  record_stage(run, "train-greedy", cfg, {dir / "greedy.ckpt", dir / "report.json"});
  return 0;
}

int cmd_train_rl(const Options& o) {
  if (o.mode != "sync" && o.mode != "async") throw ConfigError("--mode must be sync or async");
  const fs::path run = resolve_run(o, "train-rl");
  const Config cfg = stage_config(o, run);
  const auto w = load_world(run);
  const GreedyNet greedy = load_greedy_model(run);
  const Simulator sim(w.catalog, w.users, greedy, cfg.env);
  const auto dir = run / "rl";
  fs::create_directories(dir / "checkpoints");

  RunInputs in;
  in.sim = &sim;
  in.pool = w.initial_states;
  in.train = cfg.training;
  in.explore = cfg.exploration;
  in.replay = cfg.replay;
  in.run = cfg.run;
  in.seed = derive_seed(cfg.seed, 0x41);
  in.progress = &std::cout;
  in.checkpoint_every = cfg.checkpoint_every;
  std::vector<fs::path> saved;
  in.on_checkpoint = [&](std::uint64_t step, const QNet& q) {
    const auto p = dir / "checkpoints" / ("q_step_" + std::to_string(step) + ".ckpt");
    io::save_q(p, q);
    saved.push_back(p);
  };
  const RunResult res = o.mode == "sync" ? run_sync(in, warm_start(greedy)) : run_async(in, warm_start(greedy));

  io::save_q(dir / "q_final.ckpt", res.online);
  io::save_snapshot(dir / "snapshot.ckpt", res.online, cfg.exploration, res.final_version);
  io::write_metrics(dir / "metrics.csv", res.metrics);
  json staleness = json::object();
  for (auto [lag, n] : res.staleness) staleness[std::to_string(lag)] = n;
  const json summary{{"mode", o.mode},
                     {"train_steps", res.train_steps},
                     {"episodes", res.episodes},
                     {"final_version", res.final_version},
                     {"stabilized", res.stabilized},
                     {"wall_seconds", res.wall_seconds},
                     {"staleness", staleness}};
  io::write_json(dir / "summary.json", summary);
  std::vector<fs::path> arts{dir / "q_final.ckpt", dir / "snapshot.ckpt", dir / "metrics.csv"};
  arts.insert(arts.end(), saved.begin(), saved.end());
  record_stage(run, "train-rl", cfg, arts, {{"mode", o.mode}});
  std::cout << "train-rl (" << o.mode << "): " << res.train_steps << " steps, " << res.episodes << " episodes, "
            << (res.stabilized ? "stabilized" : "budget reached") << " in " << std::fixed << std::setprecision(1)
            << res.wall_seconds << "s\n";
  return 0;
}

json table_json(const ComparisonTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"metric", r.metric}, {"rl", r.rl}, {"greedy", r.greedy},
                    {"delta", r.delta ? json(*r.delta) : json(nullptr)}});
  return rows;
}

int cmd_evaluate(const Options& o) {
  const fs::path run = resolve_run(o, "evaluate");
  const Config cfg = stage_config(o, run);
  const auto w = load_world(run);
  const GreedyNet greedy = load_greedy_model(run);
  require(run / "rl" / "q_final.ckpt", "train-rl");
  const QNet q = io::load_q(run / "rl" / "q_final.ckpt");
  const Simulator sim(w.catalog, w.users, greedy, cfg.env);
  const auto table = compare_policies(Policy::rl(q), Policy::greedy(greedy), sim, w.initial_states, cfg.eval.episodes,
                                      cfg.eval.seed, cfg.training.gamma);
  const auto dir = run / "eval";
  fs::create_directories(dir);
  std::ostringstream text;
  print_table(text, table);
  std::cout << text.str();
  {
    auto os = io::open_out(dir / "summary.txt");
    os << text.str();
    io::finish(os, dir / "summary.txt");
  }
  io::write_json(dir / "summary.json", {{"episodes", cfg.eval.episodes}, {"seed", cfg.eval.seed}, {"rows", table_json(table)}});

  // Trace of the first few RL evaluation episodes, replayable with replay-episode.
  std::vector<io::TraceEpisode> trace;
  evaluate_policy(Policy::rl(q), sim, w.initial_states, std::min(o.trace_episodes, cfg.eval.episodes), cfg.eval.seed,
                  cfg.training.gamma, [&](std::size_t i, const Episode& start, const Transition& tr) {
                    if (trace.size() <= i) trace.push_back({start.state.user_id, start.state.window, *start.candidates, {}});
                    trace[i].steps.push_back(io::trace_step(tr));
                  });
  io::save_trace(dir / "trace.jsonl", trace);
  record_stage(run, "evaluate", cfg, {dir / "summary.txt", dir / "summary.json", dir / "trace.jsonl"});
  return 0;
}

int cmd_ablate(const Options& o) {
  const fs::path run = resolve_run(o, "ablate");
  const Config cfg = stage_config(o, run);
  const auto w = load_world(run);
  const GreedyNet greedy = load_greedy_model(run);
  AblationContext ctx;
  ctx.catalog = &w.catalog;
  ctx.users = &w.users;
  ctx.greedy = &greedy;
  ctx.env = cfg.env;
  if (cfg.ablation.candidates > 0) ctx.env.candidates = cfg.ablation.candidates;
  ctx.pool = w.initial_states;
  ctx.train = cfg.training;
  ctx.explore = cfg.exploration;
  ctx.replay = cfg.replay;
  ctx.run = cfg.run;
  ctx.progress = &std::cout;
  const auto spec = ablation_spec(cfg);
  const auto series = run_ablation(spec, ctx);
  const auto dir = run / "ablate" / cfg.ablation.axis;
  fs::create_directories(dir);
  emit_curves(series, (dir / "curves.csv").string());
  record_stage(run, "ablate-" + cfg.ablation.axis, cfg, {dir / "curves.csv"});
  std::cout << "ablate: wrote " << (dir / "curves.csv").string() << '\n';
  return 0;
}

int cmd_replay(const Options& o) {
  const fs::path run = resolve_run(o, "replay-episode");
  const Config cfg = stage_config(o, run);
  const fs::path trace_path = o.trace.empty() ? run / "eval" / "trace.jsonl" : fs::path(o.trace);
  require(trace_path, "evaluate");
  const auto w = load_world(run, false);
  const GreedyNet greedy = load_greedy_model(run);
  const Simulator sim(w.catalog, w.users, greedy, cfg.env);
  const auto rep = io::replay_trace(sim, io::load_trace(trace_path));
  std::cout << "replay-episode: " << rep.episodes << " episodes, " << rep.steps << " steps, " << rep.divergences
            << " divergences\n";
  if (rep.divergences > 0) {
    std::cerr << "first divergence: " << rep.first_divergence << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RL-for-recommendation pipeline on a synthetic world"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Options o;
  auto common = [&](CLI::App* sc) {
    sc->add_option("--config", o.config_path, "JSON config file (comments allowed)");
    sc->add_option("--seed", o.seed, "Master seed override");
    sc->add_option("--out", o.out, "Run directory (default: newest under --runs-root)");
    sc->add_option("--runs-root", o.runs_root, "Parent of timestamped run directories")->capture_default_str();
    sc->add_option("--set", o.overrides, "Config override key=value (repeatable)")->allow_extra_args(false);
  };
  auto* gen = app.add_subcommand("gen-world", "Generate catalog, users and the logged dataset");
  common(gen);
  gen->add_option("--tag", o.tag, "Suffix of the new run directory name")->capture_default_str();
  auto* greedy = app.add_subcommand("train-greedy", "Fit the one-step feedback model");
  common(greedy);
  auto* rl = app.add_subcommand("train-rl", "Train the Q-network against the simulator");
  common(rl);
  rl->add_option("--mode", o.mode, "sync or async")->check(CLI::IsMember({"sync", "async"}))->capture_default_str();
  auto* eval = app.add_subcommand("evaluate", "Paired comparison of RL and greedy policies");
  common(eval);
  eval->add_option("--trace-episodes", o.trace_episodes, "Episodes written to eval/trace.jsonl")->capture_default_str();
  auto* abl = app.add_subcommand("ablate", "Learning curves along one ablation axis");
  common(abl);
  auto* rep = app.add_subcommand("replay-episode", "Re-run an exported trace and check for divergence");
  common(rep);
  rep->add_option("--trace", o.trace, "Trace file (default: <run>/eval/trace.jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    if (*gen) return cmd_gen_world(o);
    if (*greedy) return cmd_train_greedy(o);
    if (*rl) return cmd_train_rl(o);
    if (*eval) return cmd_evaluate(o);
    if (*abl) return cmd_ablate(o);
    if (*rep) return cmd_replay(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
