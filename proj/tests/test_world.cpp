#include <gtest/gtest.h>

#include <cmath>

#include "recomind/world.hpp"
#include "test_util.hpp"

using namespace recomind;

namespace {

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Spelled-out latent process, evaluated independently of the library.
FeedbackProbs oracle_probs(const GroundTruthParams& p, std::span<const double> u, const Catalog& c,
                           const std::vector<HistorySlot>& h, int a, int t) {
  double aff = 0.0;
  for (std::size_t d = 0; d < u.size(); ++d) aff += u[d] * c.item(a)[d];
  double fat = 0.0;
  for (const auto& s : h) {
    double cs = 0.0;
    for (std::size_t d = 0; d < u.size(); ++d) cs += c.item(a)[d] * c.item(s.item_id)[d];
    fat += cs;
  }
  if (!h.empty()) fat /= static_cast<double>(h.size());
  const double w = sig(p.watch_gain * aff - p.watch_fatigue * fat + p.watch_bias);
  return {w, w * sig(p.long_watch_gain * aff + p.long_watch_bias),
          sig(p.save_gain * aff - p.save_fatigue * fat + p.save_bias), sig(-p.hide_gain * aff + p.hide_bias),
          sig(p.exit_bias + p.exit_step * t - p.exit_affinity * aff + p.exit_fatigue * fat)};
}

}  // namespace

TEST(Catalog, SingleItemIsUnitNorm) {
  const auto c = gen_catalog(1, 4, 1, 9);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(norm(c.item(0)), 1.0, 1e-12);
}

TEST(Catalog, DeterministicPerSeed) {
  const auto a = gen_catalog(300, 8, 4, 77), b = gen_catalog(300, 8, 4, 77), c = gen_catalog(300, 8, 4, 78);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_EQ(a.cluster, b.cluster);
  EXPECT_NE(a.embeddings, c.embeddings);
}

TEST(Catalog, InvariantsHold) {
  const auto c = gen_catalog(500, 16, 8, 3);
  std::size_t members = 0;
  for (std::size_t k = 0; k < c.n_clusters; ++k) {
    members += c.members[k].size();
    for (int id : c.members[k]) EXPECT_EQ(c.cluster[static_cast<std::size_t>(id)], static_cast<int>(k));
  }
  EXPECT_EQ(members, c.size());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(norm(c.item(static_cast<int>(i))), 1.0, 1e-12);
}

TEST(Catalog, ItemsAreCloserToOwnCenter) {
  const auto c = gen_catalog(10000, 16, 8, 11);
  double own = 0.0, other = 0.0;
  std::size_t n_other = 0;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t k = 0; k < c.n_clusters; ++k) {
      const double cs = dot(c.item(static_cast<int>(i)), c.centers.row(k));
      if (static_cast<int>(k) == c.cluster[i]) own += cs;
      else {
        other += cs;
        ++n_other;
      }
    }
  EXPECT_GT(own / static_cast<double>(c.size()), other / static_cast<double>(n_other));
}

TEST(Catalog, RejectsBadSizes) {
  EXPECT_THROW(gen_catalog(0, 4, 1, 1), ConfigError);
  EXPECT_THROW(gen_catalog(4, 1, 1, 1), ConfigError);
}

TEST(Users, UnitNormAndValidHome) {
  const auto c = gen_catalog(200, 8, 4, 1);
  const auto u = gen_users(50, c, 2);
  for (std::size_t i = 0; i < u.size(); ++i) {
    EXPECT_NEAR(norm(u.user(static_cast<int>(i))), 1.0, 1e-12);
    EXPECT_GE(u.home_cluster[i], 0);
    EXPECT_LT(u.home_cluster[i], 4);
  }
}

TEST(GroundTruth, MatchesSpelledOutFormula) {
  const auto c = gen_catalog(300, 16, 8, 5);
  const auto users = gen_users(10, c, 6);
  GroundTruthParams p;
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int u = static_cast<int>(rng() % users.size());
    std::vector<HistorySlot> h(rng() % (p.lookback + 1));
    for (auto& s : h) s.item_id = rt::random_item(c, rng);
    const int a = rt::random_item(c, rng);
    const int t = static_cast<int>(rng() % 40);
    const auto got = ground_truth_probs(p, users.user(u), c, h, a, t);
    const auto want = oracle_probs(p, users.user(u), c, h, a, t);
    for (std::size_t f = 0; f < kNumFeedback; ++f) {
      EXPECT_NEAR(got[f], want[f], 1e-12);
      EXPECT_GT(got[f], 0.0);
      EXPECT_LT(got[f], 1.0);
    }
    EXPECT_LE(got[1], got[0]);
  }
}

TEST(GroundTruth, EmptyHistoryHasNoFatigue) {
  const auto c = gen_catalog(50, 8, 2, 1);
  EXPECT_EQ(fatigue_of(c, {}, 3), 0.0);
}

TEST(GroundTruth, OrthogonalActionAndZeroBiasesGiveHalfWatch) {
  Catalog c;
  c.embeddings = nn::Matrix::from_rows({{1, 0}, {0, 1}});
  GroundTruthParams p;
  p.watch_bias = 0.0;
  const std::vector<double> user{1, 0};
  EXPECT_EQ(ground_truth_probs(p, user, c, {}, 1, 0)[index_of(Feedback::watch)], 0.5);
}

TEST(GroundTruth, RepeatingAnItemLowersSave) {
  const auto c = gen_catalog(100, 16, 4, 2);
  const auto users = gen_users(5, c, 3);
  GroundTruthParams p;
  ASSERT_GT(p.save_fatigue, 0.0);
  for (int a = 0; a < 20; ++a) {
    const std::vector<HistorySlot> same(p.lookback, HistorySlot{a, {}});
    EXPECT_LT(ground_truth_probs(p, users.user(0), c, same, a, 0)[2],
              ground_truth_probs(p, users.user(0), c, {}, a, 0)[2]);
  }
}

TEST(GroundTruth, HistoryLongerThanWindowIsUsageError) {
  const auto c = gen_catalog(20, 4, 2, 1);
  const auto users = gen_users(1, c, 1);
  GroundTruthParams p;
  p.lookback = 2;
  const std::vector<HistorySlot> h(3, HistorySlot{0, {}});
  EXPECT_THROW(ground_truth_probs(p, users.user(0), c, h, 0, 0), UsageError);
}

// Alternating the two best items beats repeating the best one over ten steps.
TEST(GroundTruth, AlternatingTopTwoBeatsRepeatingTheBest) {
  WorldConfig wc;
  const auto c = gen_catalog(wc.n_items, wc.dim, wc.n_clusters, 21, wc.item_noise);
  const auto users = gen_users(20, c, 22, wc.user_noise);
  const auto& p = wc.truth;
  for (int u = 0; u < 20; ++u) {
    int best = -1, second = -1;
    double pb = -1, ps = -1;
    for (int a = 0; a < static_cast<int>(c.size()); ++a) {
      const double s = ground_truth_probs(p, users.user(u), c, {}, a, 0)[2];
      if (s > pb) {
        second = best;
        ps = pb;
        best = a;
        pb = s;
      } else if (s > ps) {
        second = a;
        ps = s;
      }
    }
    auto rollout = [&](auto pick) {
      std::vector<HistorySlot> h;
      double total = 0.0;
      for (int t = 0; t < 10; ++t) {
        const int a = pick(t);
        total += ground_truth_probs(p, users.user(u), c, h, a, t)[2];
        append_history(h, {a, {}}, p.lookback);
      }
      return total;
    };
    const double fixed = rollout([&](int) { return best; });
    const double alternating = rollout([&](int t) { return t % 2 ? second : best; });
    EXPECT_LT(fixed, alternating) << "user " << u;
  }
}

TEST(Sessions, MaxLenOneEndsWithExit) {
  const auto c = gen_catalog(100, 8, 2, 1);
  const auto users = gen_users(3, c, 1);
  const auto s = sample_session(0, users, c, {}, {}, {}, 1, 99);
  ASSERT_EQ(s.steps.size(), 1u);
  EXPECT_EQ(s.steps[0].bits[index_of(Feedback::exit)], 1);
}

TEST(Sessions, DeterministicPerSeed) {
  const auto c = gen_catalog(100, 8, 2, 1);
  const auto users = gen_users(3, c, 1);
  EXPECT_EQ(sample_session(1, users, c, {}, {}, {}, 50, 5), sample_session(1, users, c, {}, {}, {}, 50, 5));
}

TEST(Sessions, SaturatedExitGivesLengthOne) {
  const auto c = gen_catalog(100, 8, 2, 1);
  const auto users = gen_users(3, c, 1);
  GroundTruthParams p;
  p.exit_bias = 60.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(sample_session(2, users, c, p, {}, {}, 50, seed).steps.size(), 1u);
}

TEST(Sessions, ExitOnlyAtLastStepAndLongWatchImpliesWatch) {
  const auto w = build_world(rt::tiny_world_config(), 3);
  std::map<int, std::vector<const DatasetRow*>> by_session;
  for (const auto& r : w.dataset.rows) by_session[r.session_id].push_back(&r);
  for (const auto& [id, rows] : by_session) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i]->label[index_of(Feedback::exit)], i + 1 == rows.size() ? 1 : 0);
      if (rows[i]->label[index_of(Feedback::long_watch)]) {
        EXPECT_EQ(rows[i]->label[index_of(Feedback::watch)], 1);
      }
    }
  }
}

TEST(Dataset, OneSessionOfThreeStepsGivesThreeRows) {
  const auto c = gen_catalog(100, 8, 2, 1);
  const auto users = gen_users(1, c, 1);
  WorldConfig wc;
  wc.sessions_per_user = 1;
  wc.max_session_len = 3;
  wc.truth.exit_bias = -60.0;  // never exits early
  const auto ds = build_dataset(users, c, wc, 4);
  ASSERT_EQ(ds.rows.size(), 3u);
  ASSERT_EQ(ds.initial_states.size(), 1u);
  EXPECT_TRUE(ds.initial_states[0].window.empty());
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(ds.rows[static_cast<std::size_t>(t)].step, t);
    EXPECT_EQ(ds.rows[static_cast<std::size_t>(t)].window.size(), static_cast<std::size_t>(t));
  }
}

TEST(Dataset, WindowsAreBoundedAndCarryAcrossSessions) {
  auto wc = rt::tiny_world_config();
  const auto w = build_world(wc, 8);
  for (const auto& r : w.dataset.rows) EXPECT_LE(r.window.size(), wc.truth.lookback);
  // the second session of a user starts from where the first one left off
  const auto& first = w.dataset.rows;
  std::vector<HistorySlot> h;
  for (const auto& r : first) {
    if (r.user_id != 0 || r.session_id != 0) break;
    append_history(h, {r.action, r.label}, wc.truth.lookback);
  }
  EXPECT_EQ(w.dataset.initial_states[1].window, h);
}

TEST(Dataset, PureFunctionOfSeed) {
  const auto a = build_world(rt::tiny_world_config(), 12), b = build_world(rt::tiny_world_config(), 12);
  EXPECT_EQ(a.dataset.rows, b.dataset.rows);
  EXPECT_EQ(a.dataset.initial_states, b.dataset.initial_states);
}

// Per-head label counts against the summed ground-truth probabilities of each row.
TEST(Dataset, LabelMarginalsMatchGroundTruth) {
  WorldConfig wc;
  wc.n_items = 2000;
  wc.n_users = 500;
  wc.sessions_per_user = 60;
  const auto w = build_world(wc, 31);
  ASSERT_GE(w.dataset.rows.size(), 100000u);
  std::array<double, kNumFeedback> expected{}, var{}, observed{};
  for (const auto& r : w.dataset.rows) {
    if (static_cast<std::size_t>(r.step) + 1 == wc.max_session_len) continue;  // exit forced there
    const auto pr = ground_truth_probs(wc.truth, w.users.user(r.user_id), w.catalog, r.window, r.action, r.step);
    for (std::size_t f = 0; f < kNumFeedback; ++f) {
      expected[f] += pr[f];
      var[f] += pr[f] * (1.0 - pr[f]);
      observed[f] += r.label[f];
    }
  }
  for (std::size_t f = 0; f < kNumFeedback; ++f)
    EXPECT_LE(std::abs(observed[f] - expected[f]), 3.0 * std::sqrt(var[f])) << kFeedbackNames[f];
}
