#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "recomind/config.hpp"

using namespace recomind;

namespace {

std::string message_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    config_from_json_text(text, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, EmptyInputGivesDefaults) {
  EXPECT_EQ(config_from_json_text(""), Config{});
  EXPECT_EQ(config_from_json_text("{}"), Config{});
  EXPECT_EQ(load_config(""), Config{});
}

TEST(Config, DocumentedHyperparameterDefaults) {
  const Config c;
  EXPECT_EQ(c.exploration.epsilon, 0.2);
  EXPECT_EQ(c.exploration.temperature, 0.1);
  EXPECT_EQ(c.exploration.truncation, 0.25);
  EXPECT_EQ(c.replay.alpha, 0.9);
  EXPECT_EQ(c.replay.beta, 0.1);
  EXPECT_EQ(c.training.gamma, 0.75);
  EXPECT_EQ(c.training.batch_size, 128u);
  EXPECT_EQ(c.training.n_step, 3u);
  EXPECT_EQ(c.env.lookback, 8u);
  EXPECT_EQ(c.env.threshold, 0.5);
  EXPECT_EQ(c.env.weights, RewardWeights::save_indicator());
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, OverridesApplyInOrder) {
  const auto c = config_from_json_text(R"({"training": {"gamma": 0.5}})", {"training.gamma=0", "seed=11"});
  EXPECT_EQ(c.training.gamma, 0.0);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(config_from_json_text("", {"exploration.mode=softmax_q"}).exploration.mode, ExploreMode::softmax_q);
  EXPECT_EQ(config_from_json_text("", {"ablation.seeds=[4,5]"}).ablation.seeds, (std::vector<std::uint64_t>{4, 5}));
}

TEST(Config, OutOfRangeValuesRejected) {
  EXPECT_FALSE(message_of("", {"training.gamma=1.5"}).empty());
  EXPECT_FALSE(message_of("", {"exploration.epsilon=-0.1"}).empty());
  EXPECT_FALSE(message_of("", {"exploration.mode=boltzmann"}).empty());
  EXPECT_FALSE(message_of("", {"ablation.axis=depth"}).empty());
}

TEST(Config, UnknownKeyNamesThePath) {
  EXPECT_NE(message_of(R"({"replay": {"alpah": 0.5}})").find("replay.alpah"), std::string::npos);
  EXPECT_NE(message_of("", {"training.gama=0.5"}).find("training.gama"), std::string::npos);
  EXPECT_NE(message_of("", {"nonsense"}).find("key=value"), std::string::npos);
}

TEST(Config, WrongTypeRejected) {
  EXPECT_NE(message_of(R"({"training": {"batch_size": "big"}})").find("training.batch_size"), std::string::npos);
  EXPECT_FALSE(message_of(R"({"training": {"batch_size": -4}})").empty());
  EXPECT_FALSE(message_of(R"({"world": 3})").empty());
  EXPECT_FALSE(message_of("{not json").empty());
}

TEST(Config, CommentsAllowed) {
  const auto c = config_from_json_text("{\n  // small run\n  \"seed\": 3 /* inline */\n}");
  EXPECT_EQ(c.seed, 3u);
}

TEST(Config, CrossFieldChecks) {
  EXPECT_NE(message_of("", {"encoder.embed_dim=8"}).find("embed_dim"), std::string::npos);
  EXPECT_NE(message_of("", {"world.n_items=100", "world.n_clusters=4"}).find("candidates"), std::string::npos);
  EXPECT_NO_THROW(config_from_json_text("", {"world.n_items=100", "world.n_clusters=4", "env.candidates=50",
                                             "ablation.candidates=50"}));
  EXPECT_FALSE(message_of("", {"env.lookback=4"}).empty());
}

TEST(Config, EchoReloadsToTheSameConfig) {
  const auto c = config_from_json_text("", {"seed=99", "exploration.mode=eps_greedy", "env.reward_kind=binary",
                                            "replay.beta=0.3"});
  EXPECT_EQ(config_from_json_text(echo_config(c)), c);
  const auto path = std::filesystem::temp_directory_path() / "recomind_cfg_echo.json";
  {
    std::ofstream os(path);
    os << echo_config(c);
  }
  EXPECT_EQ(load_config(path.string()), c);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config("/nonexistent-dir/cfg.json"), ConfigError);
}

TEST(Config, AblationSpecFollowsConfig) {
  const auto c = config_from_json_text("", {"ablation.axis=explore", "ablation.seeds=[9]"});
  const auto s = ablation_spec(c);
  EXPECT_EQ(s.axis, AblationAxis::explore);
  EXPECT_EQ(s.seeds, (std::vector<std::uint64_t>{9}));
  EXPECT_EQ(s.total_train_steps, c.ablation.total_train_steps);
}
