#include "latentdrag/numerics/random.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace latentdrag::numerics {

Rng::Rng(std::initializer_list<std::uint64_t> seeds) {
  std::vector<std::uint32_t> words;
  words.reserve(seeds.size() * 2);
  for (std::uint64_t s : seeds) {
    words.push_back(static_cast<std::uint32_t>(s & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  engine_.seed(seq);
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace latentdrag::numerics
