#pragma once

#include <cstdint>
#include <vector>

#include "latentdrag/drag/engine.hpp"

namespace latentdrag::drag {

struct Scenario {
  LayeredLatent latent;
  std::vector<PointPair> pairs;
};

// Latent sampled with `seed`; one handle on the rounded center of the first
// blob of layer 0, kept `margin` texels from the border, and a target `offset`
// texels away along x toward the middle of the grid.
Scenario canonical_scenario(const Generator& gen, std::uint64_t seed, double offset = 20.0, double margin = 4.0);

}  // namespace latentdrag::drag
