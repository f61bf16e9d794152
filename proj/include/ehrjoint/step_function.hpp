#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace ehrjoint {

// Right-continuous nondecreasing step function; value before the first jump is 0.
struct StepFunction {
  std::vector<double> jump_times;        // strictly increasing
  std::vector<double> cumulative_values; // nondecreasing, same length

  // last cumulative value with jump_time <= t
  double evaluate(double t) const {
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
    if (it == jump_times.begin()) return 0.0;
    return cumulative_values[static_cast<std::size_t>(it - jump_times.begin()) - 1];
  }
};

}  // namespace ehrjoint
