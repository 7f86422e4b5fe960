#include "latentdrag/numerics/adamw.hpp"

#include <cmath>

#include "latentdrag/error.hpp"

namespace latentdrag::numerics {

void adamw_update(OptimizerState& state, std::span<double> params, std::span<const double> grads) {
  const std::size_t n = params.size();
  if (grads.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw Error(ErrorCode::BadShape, "adamw shapes disagree");
  }
  const AdamHyper& h = state.hyper;
  if (!(h.lr >= 0.0)) throw Error(ErrorCode::BadConfig, "learning rate must be >= 0");
  for (double g : grads) {
    if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "gradient has non-finite entries");
  }

  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    params[i] -= h.lr * h.weight_decay * params[i];
    state.first_moment[i] = h.beta1 * state.first_moment[i] + (1.0 - h.beta1) * grads[i];
    state.second_moment[i] = h.beta2 * state.second_moment[i] + (1.0 - h.beta2) * grads[i] * grads[i];
    const double m_hat = state.first_moment[i] / bc1;
    const double v_hat = state.second_moment[i] / bc2;
    params[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

AdamStepResult adamw_step(const OptimizerState& state, std::span<const double> params,
                          std::span<const double> grads) {
  AdamStepResult out{Vector(params.begin(), params.end()), state};
  adamw_update(out.state, out.params, grads);
  return out;
}

}  // namespace latentdrag::numerics
