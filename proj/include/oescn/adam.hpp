#pragma once

#include <cstdint>
#include <vector>

#include "oescn/grid.hpp"

namespace oescn {

struct AdamConfig {
  double lr = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates, one pair per trainable parameter, plus the
// shared step counter.
struct AdamState {
  AdamConfig cfg;
  std::uint64_t step_count = 0;
  std::vector<Grid> m;
  std::vector<Grid> v;

  static AdamState for_shapes(const std::vector<std::vector<std::size_t>>& shapes,
                              const AdamConfig& cfg);
};

// One bias-corrected update of a single parameter grid at step t (t >= 1).
void adam_update(Grid& param, const Grid& grad, Grid& m, Grid& v,
                 std::uint64_t t, const AdamConfig& cfg);

// Updates every parameter, advancing the shared step counter once.
void adam_step(const std::vector<Grid*>& params,
               const std::vector<const Grid*>& grads, AdamState& state);

}  // namespace oescn
