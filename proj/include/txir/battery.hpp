#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace txir {

struct CheckOutcome {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t trials = 0;
  std::size_t entries = 0;
  double seconds = 0;
  std::string worst;  // where the largest error occurred

  bool passed() const noexcept { return max_rel_error < tolerance; }
};

struct BatteryOptions {
  std::uint64_t seed = 0;
  std::size_t op_trials = 20;     // random shapes per primitive op
  std::size_t block_trials = 4;   // random configs per block
  /// Restricts the run to checks whose name contains this substring.
  std::string filter;
  std::function<void(const CheckOutcome&)> on_result;
};

/// Finite-difference comparison of every graph op, every block and the full
/// model at 8x8 with C0 = 8, all in double precision.
std::vector<CheckOutcome> run_gradcheck_battery(const BatteryOptions& options = {});

inline constexpr double kGradTolerance = 1e-4;

}  // namespace txir
