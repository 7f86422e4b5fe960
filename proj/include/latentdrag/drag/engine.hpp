#pragma once

#include <memory>
#include <span>
#include <vector>

#include "latentdrag/drag/types.hpp"
#include "latentdrag/generator/generator.hpp"
#include "latentdrag/numerics/adamw.hpp"
#include "latentdrag/numerics/pca.hpp"

namespace latentdrag::drag {

using generator::FeatureMap;
using generator::Generator;
using generator::Image;
using generator::LayeredLatent;

// Throws BadConfig when the config is inconsistent with the generator.
void validate(const DragConfig& cfg, const generator::GeneratorConfig& gen);

// One drag session. Exactly one step may be in flight; distinct sessions are
// independent.
struct DragState {
  std::shared_ptr<const Generator> gen;
  DragConfig config;
  LayeredLatent original;  // latent handed to init_session
  LayeredLatent latent;    // latent realized from the trainable vector
  numerics::Vector trainable;  // flattened W+ prefix, or PCA coefficients
  std::shared_ptr<const numerics::PcaBasis> basis;  // set iff config.reduced()
  std::vector<HandlePair> pairs;
  numerics::OptimizerState optimizer;
  FeatureMap features;  // at `latent`
  Image initial_image;  // render of the starting latent
  std::size_t iteration = 0;
  std::vector<StepRecord> trace;

  std::size_t prefix_size() const noexcept { return config.w_plus_layers * latent.dim(); }
  bool is_active(const HandlePair& p) const noexcept {
    return distance(p.handle, p.target) > config.stopping_distance;
  }
  bool converged() const noexcept;
  bool capped() const noexcept { return iteration >= config.max_iterations; }
  bool terminated() const noexcept { return converged() || capped(); }
  double mean_distance() const noexcept;
  double max_distance() const noexcept;
};

struct PointPair {
  Point handle;
  Point target;
};

// Builds a session. When the config is reduced and `basis` is null, the
// shared basis cache fits one from config.pca_samples sampled latents. A
// provided basis must span the flattened W+ prefix and hold >= n_pca rows.
DragState init_session(std::shared_ptr<const Generator> gen, const LayeredLatent& latent,
                       std::span<const PointPair> pairs, const DragConfig& config,
                       std::shared_ptr<const numerics::PcaBasis> basis = nullptr);

struct LossAndGrad {
  double loss = 0.0;
  numerics::Vector grad;         // trainable-shaped
  numerics::Vector prefix_grad;  // gradient w.r.t. the flattened W+ prefix
};

// Motion supervision: L1 between features one unit step toward the target
// and the detached features at the patch. Throws AllConverged when every pair
// is within the stopping distance.
LossAndGrad motion_loss_and_grad(const DragState& state);

// Moves each active handle to the best descriptor match in its search disc.
void track_points(DragState& state);

// One optimization step plus tracking; appends and returns its record.
StepRecord drag_step(DragState& state);

// Steps until converged or capped and summarizes the run. A non-finite
// gradient ends the run early with `failure` set.
RunRecord run_drag(DragState& state);

// Summary of the session as it stands (no stepping).
RunRecord summarize_session(const DragState& state);

// Flattened first `layers` rows of a latent.
numerics::Vector flatten_prefix(const LayeredLatent& latent, std::size_t layers);

// Fits the prefix basis used by reduced sessions (full rank: min(P, samples)).
numerics::PcaBasis fit_prefix_basis(const Generator& gen, std::size_t layers, std::size_t samples);

// Process-wide cache of full prefix bases keyed by (generator config, layers,
// samples). Thread-safe; concurrent requests for the same key fit once.
std::shared_ptr<const numerics::PcaBasis> cached_prefix_basis(const Generator& gen, std::size_t layers,
                                                              std::size_t samples);

}  // namespace latentdrag::drag
