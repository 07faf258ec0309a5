#pragma once

#include <stdexcept>
#include <string>

namespace recomind {

// Bad dimensions, out-of-range settings, mismatched artifacts.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// API called out of contract (stale tape, stepping a finished episode, ...).
class UsageError : public std::logic_error {
 public:
  explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

// Optimisation went non-finite.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace recomind
