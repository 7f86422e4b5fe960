#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentdrag/numerics/matrix.hpp"

namespace latentdrag::drag {

// Sub-pixel position on the feature grid.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

inline double distance(const Point& a, const Point& b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

struct DragConfig {
  double learning_rate = 0.05;
  std::optional<std::size_t> n_pca;  // empty: optimize the W+ prefix directly
  std::size_t w_plus_layers = 3;
  double stopping_distance = 10.0;
  std::size_t max_iterations = 150;
  int r1 = 3;   // motion-supervision patch radius
  int r2 = 12;  // tracking search radius
  std::uint64_t seed = 42;
  double weight_decay = 0.0;
  std::size_t pca_samples = 1000;

  bool reduced() const noexcept { return n_pca.has_value(); }
  bool operator==(const DragConfig&) const = default;
};

// "Regular" or the component count, as used in tables and file names.
std::string npca_label(const DragConfig& cfg);

struct HandlePair {
  Point handle;
  Point target;
  numerics::Vector descriptor;  // features at the initial handle position
};

struct StepRecord {
  std::size_t iteration = 0;
  double motion_loss = 0.0;
  double grad_magnitude = 0.0;
  double t_opt = 0.0;    // seconds
  double t_track = 0.0;  // seconds
  double mean_distance = 0.0;
  double max_distance = 0.0;
};

struct RunRecord {
  DragConfig config;
  std::size_t iterations = 0;
  double t_opt_total = 0.0;
  double t_track_total = 0.0;
  double t_total = 0.0;
  double ssim = 0.0;
  double ssim_per_time = 0.0;  // ssim / t_total; 0 when no time was spent
  bool converged = false;
  double final_mean_distance = 0.0;
  double final_max_distance = 0.0;
  std::vector<StepRecord> trace;
  std::optional<std::string> failure;
};

}  // namespace latentdrag::drag
