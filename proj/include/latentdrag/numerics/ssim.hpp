#pragma once

#include "latentdrag/numerics/raster.hpp"

namespace latentdrag::numerics {

struct SsimParams {
  int window_size = 11;
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean structural similarity over all valid window positions, averaged over
// channels. Gaussian-weighted local statistics; symmetric in (a, b).
double ssim(const Raster& a, const Raster& b, const SsimParams& params = {});

}  // namespace latentdrag::numerics
