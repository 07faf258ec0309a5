#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace recomind {

// Head order is global: every net, dataset row, checkpoint and metric uses it.
enum class Feedback : std::size_t { watch = 0, long_watch = 1, save = 2, hide = 3, exit = 4 };

inline constexpr std::size_t kNumFeedback = 5;

inline constexpr std::array<std::string_view, kNumFeedback> kFeedbackNames = {
    "watch", "long_watch", "save", "hide", "exit"};

constexpr std::size_t index_of(Feedback f) { return static_cast<std::size_t>(f); }

using FeedbackBits = std::array<std::uint8_t, kNumFeedback>;
using FeedbackProbs = std::array<double, kNumFeedback>;

inline std::vector<std::string> feedback_head_names() {
  return {kFeedbackNames.begin(), kFeedbackNames.end()};
}

}  // namespace recomind
