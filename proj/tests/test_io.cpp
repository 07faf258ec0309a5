#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "recomind/io.hpp"
#include "test_util.hpp"

using namespace recomind;
namespace fs = std::filesystem;

namespace {

const rt::TinySetup& ts() { return rt::TinySetup::get(); }

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("recomind_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                  ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::vector<io::TraceEpisode> record(const Simulator& sim, std::size_t episodes, std::uint64_t seed) {
  std::vector<io::TraceEpisode> out;
  Rng rng(seed);
  for (std::size_t e = 0; e < episodes; ++e) {
    auto ep = sim.reset(ts().pool(), seed + e);
    io::TraceEpisode te{ep.state.user_id, ep.state.window, *ep.candidates, {}};
    while (!ep.done) te.steps.push_back(io::trace_step(sim.step(ep, (*ep.candidates)[rng() % ep.candidates->size()])));
    out.push_back(std::move(te));
  }
  return out;
}

}  // namespace

TEST(Io, CatalogAndUsersRoundTrip) {
  TempDir d;
  const auto& w = ts().world;
  io::write_catalog(d / "catalog.txt", w.catalog);
  io::write_users(d / "users.txt", w.users);
  const auto c = io::read_catalog(d / "catalog.txt");
  const auto u = io::read_users(d / "users.txt");
  EXPECT_EQ(c.embeddings, w.catalog.embeddings);
  EXPECT_EQ(c.centers, w.catalog.centers);
  EXPECT_EQ(c.cluster, w.catalog.cluster);
  EXPECT_EQ(c.members, w.catalog.members);
  EXPECT_EQ(c.seed, w.catalog.seed);
  EXPECT_EQ(c.noise, w.catalog.noise);
  EXPECT_EQ(u.embeddings, w.users.embeddings);
  EXPECT_EQ(u.home_cluster, w.users.home_cluster);
  EXPECT_EQ(u.noise, w.users.noise);
  EXPECT_THROW(io::read_users(d / "catalog.txt"), ConfigError);
}

TEST(Io, DatasetAndInitialStatesRoundTrip) {
  TempDir d;
  const auto& ds = ts().world.dataset;
  io::write_dataset(d / "dataset.jsonl", ds.rows);
  io::write_initial_states(d / "initial.jsonl", ds.initial_states);
  EXPECT_EQ(io::read_dataset(d / "dataset.jsonl"), ds.rows);
  EXPECT_EQ(io::read_initial_states(d / "initial.jsonl"), ds.initial_states);
}

TEST(Io, GreedyAndQCheckpointsRoundTripBitwise) {
  TempDir d;
  io::save_greedy(d / "greedy.ckpt", ts().greedy);
  const auto g = io::load_greedy(d / "greedy.ckpt");
  EXPECT_TRUE(g.net.same_parameters(ts().greedy.net));
  auto q = warm_start(ts().greedy);
  Rng rng(3);
  rt::jitter(q.net, rng, 0.1);
  io::save_q(d / "q.ckpt", q);
  EXPECT_TRUE(io::load_q(d / "q.ckpt").net.same_parameters(q.net));
  EXPECT_THROW(io::load_q(d / "greedy.ckpt"), ConfigError);
  EXPECT_THROW(io::load_greedy(d / "q.ckpt"), ConfigError);
  EXPECT_THROW(io::load_greedy(d / "missing.ckpt"), std::runtime_error);
}

TEST(Io, SnapshotKeepsExplorationAndVersion) {
  TempDir d;
  const auto q = warm_start(ts().greedy);
  const ExplorationConfig e{0.3, 0.05, 0.5, ExploreMode::softmax_q};
  io::save_snapshot(d / "snap.ckpt", q, e, 42);
  const auto s = io::load_snapshot(d / "snap.ckpt");
  EXPECT_TRUE(s.net.net.same_parameters(q.net));
  EXPECT_EQ(s.exploration, e);
  EXPECT_EQ(s.version, 42u);
  io::save_q(d / "plain.ckpt", q);
  EXPECT_THROW(io::load_snapshot(d / "plain.ckpt"), ConfigError);
}

TEST(Io, TraceReplaysWithoutDivergence) {
  TempDir d;
  const auto sim = ts().sim();
  const auto eps = record(sim, 12, 100);
  io::save_trace(d / "trace.jsonl", eps);
  const auto back = io::load_trace(d / "trace.jsonl");
  ASSERT_EQ(back.size(), eps.size());
  std::size_t steps = 0;
  for (const auto& e : back) steps += e.steps.size();
  const auto rep = io::replay_trace(sim, back);
  EXPECT_EQ(rep.episodes, 12u);
  EXPECT_EQ(rep.steps, steps);
  EXPECT_EQ(rep.divergences, 0u) << rep.first_divergence;
}

TEST(Io, TamperedTraceIsDetected) {
  const auto sim = ts().sim();
  auto eps = record(sim, 3, 200);
  ASSERT_FALSE(eps[1].steps.empty());
  eps[1].steps.front().reward = std::nextafter(eps[1].steps.front().reward, 2.0);
  const auto rep = io::replay_trace(sim, eps);
  EXPECT_EQ(rep.divergences, 1u);
  EXPECT_NE(rep.first_divergence.find("reward"), std::string::npos);
  EXPECT_NE(rep.first_divergence.find("episode 1"), std::string::npos);

  auto eps2 = record(sim, 1, 300);
  eps2[0].steps.front().bits[4] ^= 1;
  const auto rep2 = io::replay_trace(sim, eps2);
  EXPECT_EQ(rep2.divergences, 1u);
  EXPECT_NE(rep2.first_divergence.find("feedback bits"), std::string::npos);
}

TEST(Io, MalformedTraceRejected) {
  TempDir d;
  {
    std::ofstream os(d / "bad.jsonl");
    os << R"({"type":"step","t":0})" << '\n';
  }
  EXPECT_THROW(io::load_trace(d / "bad.jsonl"), ConfigError);
  {
    std::ofstream os(d / "bad2.jsonl");
    os << R"({"type":"banana"})" << '\n';
  }
  EXPECT_THROW(io::load_trace(d / "bad2.jsonl"), ConfigError);
}

TEST(Io, HashIsStableAndContentSensitive) {
  TempDir d;
  EXPECT_EQ(io::fnv1a(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(io::fnv1a("a"), 0xaf63dc4c8601ec8cull);
  io::write_json(d / "a.json", {{"x", 1}});
  io::write_json(d / "b.json", {{"x", 1}});
  io::write_json(d / "c.json", {{"x", 2}});
  EXPECT_EQ(io::hash_file(d / "a.json"), io::hash_file(d / "b.json"));
  EXPECT_NE(io::hash_file(d / "a.json"), io::hash_file(d / "c.json"));
  EXPECT_EQ(io::hash_file(d / "a.json").size(), 16u);
  EXPECT_EQ(io::read_json(d / "c.json").at("x"), 2);
}
