#include "latentdrag/drag/scenario.hpp"

#include <algorithm>
#include <cmath>

#include "latentdrag/error.hpp"
#include "latentdrag/generator/generator.hpp"

namespace latentdrag::drag {

Scenario canonical_scenario(const Generator& gen, std::uint64_t seed, double offset, double margin) {
  const double max_coord = static_cast<double>(gen.config().feature_resolution) - 1.0;
  if (margin < 0.0 || 2.0 * margin > max_coord || offset < 0.0 || offset > max_coord / 2.0) {
    throw Error(ErrorCode::BadConfig, "scenario offset/margin do not fit the feature grid");
  }
  Scenario s{gen.sample_latent(seed), {}};
  const auto params = gen.blob_params(s.latent);
  const double cx = std::clamp(std::round(params(0, generator::BlobLayout::kCenterX)), margin, max_coord - margin);
  const double cy = std::clamp(std::round(params(0, generator::BlobLayout::kCenterY)), margin, max_coord - margin);
  const double dir = cx <= max_coord / 2.0 ? 1.0 : -1.0;
  s.pairs.push_back({{cx, cy}, {cx + dir * offset, cy}});
  return s;
}

}  // namespace latentdrag::drag
