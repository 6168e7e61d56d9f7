#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tsp {

// Broken precondition or API misuse.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite values or other numeric breakdowns.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// No finite-cost perfect matching exists. Carries the starved row indices
// (ground-truth slots that cannot be matched).
struct InfeasibleMatchError : std::runtime_error {
  InfeasibleMatchError(const std::string& msg, std::vector<int> rows)
      : std::runtime_error(msg), unmatched_rows(std::move(rows)) {}
  std::vector<int> unmatched_rows;
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tsp
