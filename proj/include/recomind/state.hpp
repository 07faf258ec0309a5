#pragma once

#include <cstddef>
#include <vector>

#include "recomind/feedback.hpp"

namespace recomind {

struct HistorySlot {
  int item_id = -1;
  FeedbackBits bits{};

  bool operator==(const HistorySlot&) const = default;
};

// u plus the most recent L (item, feedback) pairs, oldest first.
struct SessionState {
  int user_id = -1;
  std::vector<double> user;
  std::vector<HistorySlot> window;
  int t = 0;
  bool terminal = false;

  bool operator==(const SessionState&) const = default;
};

inline void append_history(std::vector<HistorySlot>& window, const HistorySlot& slot,
                           std::size_t lookback) {
  window.push_back(slot);
  if (window.size() > lookback)
    window.erase(window.begin(), window.begin() + static_cast<std::ptrdiff_t>(window.size() - lookback));
}

}  // namespace recomind
