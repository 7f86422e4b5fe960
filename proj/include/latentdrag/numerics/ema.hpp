#pragma once

#include <span>
#include <vector>

namespace latentdrag::numerics {

// Exponential moving average: out[0] = s[0], out[t] = alpha*out[t-1] + (1-alpha)*s[t].
std::vector<double> ema_smooth(std::span<const double> series, double alpha);

}  // namespace latentdrag::numerics
