#pragma once

#include <cstddef>
#include <functional>

#include "condensa/tensor.hpp"

namespace condensa {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool pass = false;
};

/// Builds a scalar loss on the supplied graph. Must be deterministic.
using LossBuilder = std::function<Tensor(Graph&)>;

/// Compares the analytic gradient of `build` w.r.t. `leaf` against central
/// differences (f(x+h) - f(x-h)) / 2h, element by element. The relative error
/// is |a - n| / max(|a|, |n|, 1e-3); the floor keeps near-zero gradients from
/// dominating on round-off alone. `leaf` is restored on return.
GradCheckReport finite_difference_check(const LossBuilder& build, Tensor leaf, double h = 1e-5,
                                        double tol = 1e-4);

}  // namespace condensa
