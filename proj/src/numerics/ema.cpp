#include "latentdrag/numerics/ema.hpp"

#include "latentdrag/error.hpp"

namespace latentdrag::numerics {

std::vector<double> ema_smooth(std::span<const double> series, double alpha) {
  if (series.empty()) throw Error(ErrorCode::EmptySeries, "ema_smooth on an empty series");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw Error(ErrorCode::BadConfig, "alpha must be in [0, 1)");
  std::vector<double> out(series.size());
  out[0] = series[0];
  for (std::size_t t = 1; t < series.size(); ++t) {
    out[t] = alpha * out[t - 1] + (1.0 - alpha) * series[t];
  }
  return out;
}

}  // namespace latentdrag::numerics
