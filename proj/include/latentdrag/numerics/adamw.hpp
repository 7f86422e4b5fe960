#pragma once

#include <cstdint>
#include <span>

#include "latentdrag/numerics/matrix.hpp"

namespace latentdrag::numerics {

struct AdamHyper {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  Vector first_moment;
  Vector second_moment;
  std::int64_t step_count = 0;
  AdamHyper hyper;

  static OptimizerState fresh(std::size_t n, const AdamHyper& hyper) {
    return {Vector(n, 0.0), Vector(n, 0.0), 0, hyper};
  }
};

struct AdamStepResult {
  Vector params;
  OptimizerState state;
};

// Adam with decoupled weight decay and bias correction. Pure: inputs are not
// modified. Throws NonFiniteGradient if any gradient entry is not finite.
AdamStepResult adamw_step(const OptimizerState& state, std::span<const double> params,
                          std::span<const double> grads);

// In-place variant used by the optimization loops.
void adamw_update(OptimizerState& state, std::span<double> params, std::span<const double> grads);

}  // namespace latentdrag::numerics
