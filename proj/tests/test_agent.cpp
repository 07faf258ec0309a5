#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "recomind/agent.hpp"
#include "test_util.hpp"

using namespace recomind;

namespace {

const rt::TinySetup& ts() { return rt::TinySetup::get(); }

// Q through the plain per-vector MLP path (no shared-prefix scoring).
double q_by_hand(const QNet& q, const SessionState& s, int a) {
  const auto x = encode_state_action(q.net, ts().world.catalog, s, a);
  return nn::forward(q.net.trunk, x).output.front();
}

NStepRecord random_record(Rng& rng, const CandidateSet& cands, bool done, double gamma_eff) {
  NStepRecord r;
  r.state = rt::random_state(ts().world, 8, rng);
  r.action = (*cands)[rng() % cands->size()];
  r.reward = uniform01(rng) * 2.0;
  r.next_state = rt::random_state(ts().world, 8, rng);
  r.done = done;
  r.gamma_eff = gamma_eff;
  r.candidates = cands;
  return r;
}

CandidateSet some_candidates(std::size_t n, Rng& rng) {
  std::vector<int> ids;
  while (ids.size() < n) {
    const int id = rt::random_item(ts().world.catalog, rng);
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return std::make_shared<const std::vector<int>>(ids);
}

}  // namespace

TEST(WarmStart, QEqualsSaveProbabilityExactly) {
  const auto q = warm_start(ts().greedy);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto s = rt::random_state(ts().world, 8, rng);
    const int a = rt::random_item(ts().world.catalog, rng);
    EXPECT_EQ(q_value(q, ts().world.catalog, s, a), predict_heads(ts().greedy, ts().world.catalog, s, a)[2]);
  }
}

TEST(WarmStart, CopiesDonorAndAppendsSaveSelector) {
  const auto before = ts().greedy;
  auto q = warm_start(ts().greedy);
  ASSERT_EQ(q.net.trunk.layers.size(), before.net.trunk.layers.size() + 1);
  for (std::size_t i = 0; i < before.net.trunk.layers.size(); ++i)
    EXPECT_EQ(q.net.trunk.layers[i], before.net.trunk.layers[i]);
  const auto& head = q.net.trunk.layers.back();
  const std::vector<double> w(head.weights.values().begin(), head.weights.values().end());
  EXPECT_EQ(w, (std::vector<double>{0, 0, 1, 0, 0}));
  EXPECT_EQ(head.bias, std::vector<double>{0.0});
  q.net.trunk.layers[0].bias[0] += 1.0;
  EXPECT_TRUE(ts().greedy.net.same_parameters(before.net));
}

TEST(WarmStart, RejectsWrongHeads) {
  auto g = ts().greedy;
  g.net.trunk.head_names[2] = "like";
  EXPECT_THROW(warm_start(g), ConfigError);
}

TEST(WarmStart, RandomInitDiffersFromSaveHead) {
  const auto q = random_q_net(ts().greedy.net.config, 3);
  Rng rng(2);
  int differ = 0;
  for (int i = 0; i < 50; ++i) {
    const auto s = rt::random_state(ts().world, 8, rng);
    const int a = rt::random_item(ts().world.catalog, rng);
    differ += q_value(q, ts().world.catalog, s, a) != predict_heads(ts().greedy, ts().world.catalog, s, a)[2];
  }
  EXPECT_GT(differ, 45);
}

TEST(QValue, BatchEqualsPerItemAndPlainForward) {
  auto q = warm_start(ts().greedy);
  Rng rng(3);
  rt::jitter(q.net, rng, 0.1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = rt::random_state(ts().world, 8, rng);
    const auto cands = some_candidates(25, rng);
    const auto all = q_values(q, ts().world.catalog, s, *cands);
    for (std::size_t i = 0; i < cands->size(); ++i) {
      EXPECT_EQ(all[i], q_value(q, ts().world.catalog, s, (*cands)[i]));
      EXPECT_EQ(all[i], q_by_hand(q, s, (*cands)[i]));
    }
  }
}

TEST(Truncate, Examples) {
  const std::vector<int> ids{10, 11, 12, 13};
  EXPECT_EQ(truncate_candidates(std::vector<double>{1, 3, 2, 0}, ids, 0.5), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(truncate_candidates(std::vector<double>{1, 3, 2, 0}, ids, 1.0), (std::vector<std::size_t>{0, 1, 2, 3}));
  const std::vector<int> shuffled{40, 7, 19, 3, 25};
  EXPECT_EQ(truncate_candidates(std::vector<double>(5, 0.3), shuffled, 0.4), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(truncate_candidates(std::vector<double>{5, 1, 2, 3, 4}, shuffled, 0.01), std::vector<std::size_t>{0});
  EXPECT_THROW(truncate_candidates(std::vector<double>{}, std::vector<int>{}, 0.5), UsageError);
  EXPECT_THROW(truncate_candidates(std::vector<double>{1}, std::vector<int>{1}, 0.0), ConfigError);
}

TEST(Truncate, SizeIsCeilOfFraction) {
  Rng rng(4);
  for (std::size_t n : {1, 2, 7, 100, 500})
    for (double rho : {0.01, 0.25, 0.5, 0.999, 1.0}) {
      std::vector<double> v(n);
      std::vector<int> ids(n);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = uniform01(rng);
        ids[i] = static_cast<int>(i);
      }
      const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n))));
      const auto t = truncate_candidates(v, ids, rho);
      ASSERT_EQ(t.size(), k);
      double min_in = 2;
      for (auto p : t) min_in = std::min(min_in, v[p]);
      for (std::size_t i = 0; i < n; ++i)
        if (std::find(t.begin(), t.end(), i) == t.end()) {
          EXPECT_LE(v[i], min_in);
        }
    }
}

TEST(Select, ZeroEpsilonIsArgmaxWithIdTieBreak) {
  Rng rng(5);
  ExplorationConfig cfg;
  cfg.epsilon = 0.0;
  const std::vector<int> ids{9, 4, 6, 2};
  const std::vector<double> v{0.5, 0.9, 0.9, 0.1};
  const std::vector<std::size_t> trunc{0, 3};
  for (auto mode : {ExploreMode::recomind_trunc, ExploreMode::recomind_all, ExploreMode::eps_greedy}) {
    cfg.mode = mode;
    for (int i = 0; i < 100; ++i) EXPECT_EQ(select_action(v, ids, trunc, cfg, rng), 1u);
  }
}

TEST(Select, ArgmaxBranchIsShiftInvariant) {
  Rng rng(6);
  ExplorationConfig cfg;
  cfg.epsilon = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(30);
    std::vector<int> ids(30);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = std::round(uniform01(rng) * 8) / 8;
      ids[i] = static_cast<int>(rng() % 1000);
    }
    auto shifted = v;
    for (double& x : shifted) x += 3.0;
    const std::vector<std::size_t> trunc{0};
    EXPECT_EQ(select_action(v, ids, trunc, cfg, rng), select_action(shifted, ids, trunc, cfg, rng));
  }
}

TEST(Select, TruncatedSoftmaxFrequencies) {
  Rng rng(7);
  ExplorationConfig cfg;
  cfg.epsilon = 1.0;
  cfg.temperature = 0.1;
  const std::vector<int> ids{1, 2, 3, 4, 5};
  const std::vector<double> v{0.0, 0.1, 0.2, 5.0, -1.0};
  const std::vector<std::size_t> trunc{0, 1, 2};
  const int n = 100000;
  std::vector<double> hits(5, 0);
  for (int i = 0; i < n; ++i) hits[select_action(v, ids, trunc, cfg, rng)] += 1;
  const double z = std::exp(0.0) + std::exp(1.0) + std::exp(2.0);
  const double expected[3] = {1.0 / z, std::exp(1.0) / z, std::exp(2.0) / z};
  EXPECT_NEAR(expected[0], 0.090, 5e-4);
  EXPECT_NEAR(expected[2], 0.665, 5e-4);
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(rt::within_sigma(hits[static_cast<std::size_t>(k)], n, expected[k]));
  EXPECT_EQ(hits[3] + hits[4], 0);
}

TEST(Select, AllEqualValuesGiveUniformSoftmax) {
  Rng rng(8);
  ExplorationConfig cfg;
  cfg.epsilon = 1.0;
  cfg.mode = ExploreMode::recomind_all;
  const std::size_t m = 8;
  std::vector<int> ids(m);
  std::iota(ids.begin(), ids.end(), 0);
  const std::vector<double> v(m, 0.4);
  const std::vector<std::size_t> trunc{0};
  const int n = 100000;
  std::vector<double> hits(m, 0);
  for (int i = 0; i < n; ++i) hits[select_action(v, ids, trunc, cfg, rng)] += 1;
  for (double h : hits) EXPECT_TRUE(rt::within_sigma(h, n, 1.0 / m));
}

TEST(Select, ModesFollowTheirDefinitions) {
  Rng rng(9);
  std::vector<int> ids(6);
  std::iota(ids.begin(), ids.end(), 0);
  const std::vector<double> v{0, 0, 0, 0, 0, 1};
  const std::vector<std::size_t> trunc{5};
  ExplorationConfig cfg;
  cfg.epsilon = 1.0;
  cfg.temperature = 100.0;  // nearly uniform softmax
  const int n = 60000;
  for (auto mode : {ExploreMode::eps_greedy, ExploreMode::softmax_q, ExploreMode::recomind_all}) {
    cfg.mode = mode;
    std::vector<double> hits(6, 0);
    for (int i = 0; i < n; ++i) hits[select_action(v, ids, trunc, cfg, rng)] += 1;
    for (int k = 0; k < 5; ++k) EXPECT_GT(hits[static_cast<std::size_t>(k)], n / 8) << to_string(mode);
  }
  cfg.mode = ExploreMode::softmax_q;
  cfg.epsilon = 0.0;  // softmax_q ignores epsilon
  std::vector<double> hits(6, 0);
  for (int i = 0; i < n; ++i) hits[select_action(v, ids, trunc, cfg, rng)] += 1;
  EXPECT_GT(hits[0], n / 8);
}

TEST(Select, TruncatedModeNeverLeavesTheTruncatedSet) {
  Rng rng(10);
  ExplorationConfig cfg;
  cfg.epsilon = 1.0;
  cfg.temperature = 5.0;
  std::vector<int> ids(40);
  std::iota(ids.begin(), ids.end(), 100);
  std::vector<double> v(40);
  for (double& x : v) x = uniform01(rng);
  const auto trunc = truncate_candidates(v, ids, 0.25);
  for (int i = 0; i < 200000; ++i) {
    const auto p = select_action(v, ids, trunc, cfg, rng);
    ASSERT_TRUE(std::binary_search(trunc.begin(), trunc.end(), p));
  }
}

TEST(Exploration, Validation) {
  ExplorationConfig c;
  c.epsilon = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.truncation = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(explore_mode_from_string("boltzmann"), ConfigError);
  EXPECT_EQ(explore_mode_from_string("softmax_q"), ExploreMode::softmax_q);
}

TEST(TdTarget, DoneOrZeroDiscountGivesReward) {
  Rng rng(11);
  const auto q = warm_start(ts().greedy);
  const auto cands = some_candidates(10, rng);
  const auto a = random_record(rng, cands, true, 0.4);
  const auto b = random_record(rng, cands, false, 0.0);
  const std::vector<const NStepRecord*> batch{&a, &b};
  const auto t = td_targets(batch, q, q, ts().world.catalog);
  EXPECT_EQ(t[0], a.reward);
  EXPECT_EQ(t[1], b.reward);
}

TEST(TdTarget, DoubleQByHand) {
  Rng rng(12);
  auto online = warm_start(ts().greedy);
  auto target = random_q_net(ts().greedy.net.config, 7);
  rt::jitter(online.net, rng, 0.2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cands = some_candidates(2, rng);
    const auto r = random_record(rng, cands, false, 0.5625);
    const int a0 = (*cands)[0], a1 = (*cands)[1];
    const double q0 = q_by_hand(online, r.next_state, a0), q1 = q_by_hand(online, r.next_state, a1);
    const int pick = q1 > q0 ? a1 : a0;  // a0 < a1, ties go to a0
    const double want = r.reward + 0.5625 * q_by_hand(target, r.next_state, pick);
    const std::vector<const NStepRecord*> batch{&r};
    EXPECT_EQ(td_targets(batch, online, target, ts().world.catalog)[0], want);
  }
}

TEST(TdTarget, IdenticalNetsReduceToMaxTarget) {
  Rng rng(13);
  auto q = warm_start(ts().greedy);
  rt::jitter(q.net, rng, 0.2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cands = some_candidates(15, rng);
    std::vector<NStepRecord> recs;
    for (int i = 0; i < 8; ++i) recs.push_back(random_record(rng, cands, rng() % 4 == 0, 0.75 * 0.75));
    std::vector<const NStepRecord*> batch;
    for (const auto& r : recs) batch.push_back(&r);
    const auto got = td_targets(batch, q, q, ts().world.catalog);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      double best = -1e300;
      for (int a : *cands) best = std::max(best, q_by_hand(q, recs[i].next_state, a));
      EXPECT_EQ(got[i], recs[i].done ? recs[i].reward : recs[i].reward + recs[i].gamma_eff * best);
    }
  }
}

TEST(TdLoss, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  for (int trial = 0; trial < 3; ++trial) {
    auto q = warm_start(ts().greedy);
    rt::jitter(q.net, rng, 0.2);
    const auto cands = some_candidates(6, rng);
    std::vector<NStepRecord> recs;
    for (int i = 0; i < 6; ++i) recs.push_back(random_record(rng, cands, false, 0.5));
    std::vector<const NStepRecord*> batch;
    for (const auto& r : recs) batch.push_back(&r);
    std::vector<double> targets(batch.size()), weights(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      targets[i] = uniform01(rng) * 2;
      weights[i] = 0.2 + uniform01(rng);
    }
    const auto res = td_loss(q, ts().world.catalog, batch, targets, weights);
    double naive = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double d = targets[i] - q_by_hand(q, recs[i].state, recs[i].action);
      naive += weights[i] * d * d / static_cast<double>(batch.size());
    }
    EXPECT_NEAR(res.loss, naive, 1e-12);
    auto loss = [&] { return td_loss(q, ts().world.catalog, batch, targets, weights).loss; };
    EXPECT_LE(rt::fd_check(parameter_spans(q.net), gradient_spans(res.grads), loss), 1e-4);
  }
}

TEST(TrainStep, MatchingTargetsGiveZeroLossAndNoMove) {
  Rng rng(15);
  auto q = warm_start(ts().greedy);
  const auto cands = some_candidates(6, rng);
  ReplayConfig rc;
  rc.capacity = 16;
  PrioritizedBuffer<NStepRecord> buf(rc);
  // terminal records whose reward already equals Q: target == prediction
  for (int i = 0; i < 8; ++i) {
    auto r = random_record(rng, cands, true, 0.0);
    r.reward = q_value(q, ts().world.catalog, r.state, r.action);
    buf.push(r);
  }
  TargetPair pair(q);
  nn::AdamState adam;
  TrainConfig tc;
  tc.batch_size = 4;
  const auto res = train_step(pair, buf, adam, tc, ts().world.catalog, rng);
  EXPECT_EQ(res.loss, 0.0);
  EXPECT_TRUE(pair.online.net.same_parameters(q.net));
  for (double p : buf.leaf_priorities())
    if (p != 1.0) {
      EXPECT_NEAR(p, std::pow(rc.priority_eps, rc.alpha), 1e-15);
    }
}

TEST(TrainStep, HardSyncCopiesOnlineIntoTarget) {
  Rng rng(16);
  const auto cands = some_candidates(6, rng);
  ReplayConfig rc;
  rc.capacity = 64;
  PrioritizedBuffer<NStepRecord> buf(rc);
  for (int i = 0; i < 32; ++i) buf.push(random_record(rng, cands, rng() & 1u, 0.42));
  TargetPair pair(warm_start(ts().greedy));
  nn::AdamState adam;
  TrainConfig tc;
  tc.batch_size = 8;
  tc.target_sync_every = 3;
  tc.learning_rate = 1e-2;
  for (int step = 1; step <= 6; ++step) {
    const auto res = train_step(pair, buf, adam, tc, ts().world.catalog, rng);
    EXPECT_EQ(res.synced, step % 3 == 0);
    if (res.synced) {
      EXPECT_TRUE(pair.target.net.same_parameters(pair.online.net));
    } else {
      EXPECT_FALSE(pair.target.net.same_parameters(pair.online.net));
    }
  }
  EXPECT_EQ(pair.total_updates, 6u);
}

TEST(TrainConfig, GammaRange) {
  TrainConfig t;
  t.gamma = 0.0;
  EXPECT_NO_THROW(t.validate());
  t.gamma = 1.5;
  EXPECT_THROW(t.validate(), ConfigError);
}
