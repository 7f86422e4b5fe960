#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace latentdrag::numerics {

// Portable seeded stream: mt19937_64 and seed_seq are fully specified by the
// standard; the uniform and normal transforms are done here so outputs are
// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::initializer_list<std::uint64_t> seeds);

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (one value per call, spare cached).
  double normal() noexcept;
  std::uint64_t next() noexcept { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace latentdrag::numerics
