#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "latentdrag/generator/generator.hpp"
#include "latentdrag/numerics/pca.hpp"

namespace latentdrag::align {

using generator::FeatureMap;
using generator::Generator;
using generator::Image;
using generator::LayeredLatent;

enum class InitPolicy { MeanLatent, RandomSeeded, Provided };

struct ProjectionConfig {
  double learning_rate = 0.05;
  std::size_t max_iterations = 500;
  double pixel_l2 = 1.0;
  double feature_l2 = 0.0;  // needs target_features
  InitPolicy init = InitPolicy::RandomSeeded;
  std::uint64_t init_seed = 0;
  std::optional<LayeredLatent> init_latent;   // for InitPolicy::Provided
  std::optional<FeatureMap> target_features;  // ground truth, when the target came from a generator

  void validate() const;
};

struct ProjectionResult {
  LayeredLatent latent;       // best latent seen
  double best_loss = 0.0;
  std::size_t best_iteration = 0;
  std::vector<double> loss;       // loss at each evaluated iterate, 0..max_iterations
  std::vector<double> best_loss_trace;  // running minimum of `loss`
};

// Loss = pixel_l2 * mean((render - target)^2) + feature_l2 * mean((features - target_features)^2).
double projection_loss(const Generator& gen, const LayeredLatent& w, const Image& target, const ProjectionConfig& cfg);

// Adam over all layers of the latent. Throws ShapeMismatch when the target
// does not match the generator output and NonFiniteGradient on divergence.
ProjectionResult project_image(const Image& target, const Generator& gen, const ProjectionConfig& cfg);

// Nearest-neighbour resample of an external raster to the generator output shape.
Image prepare_target(const Image& external, const Generator& gen);

struct EditSpec {
  std::size_t component_index = 0;
  double magnitude = 0.0;  // in coefficient units
  std::size_t layer_begin = 0;
  std::size_t layer_end = 1;  // exclusive
};

// PCA over the flattened layers [begin, end) of sampled latents.
numerics::PcaBasis fit_layer_basis(const Generator& gen, std::size_t layer_begin, std::size_t layer_end,
                                   std::size_t samples, std::size_t n_components = 0);

// w + magnitude * component, reshaped into the edited layers. Throws BadShape
// when the basis does not match the layer range.
LayeredLatent edit_along_component(const LayeredLatent& w, const numerics::PcaBasis& basis, const EditSpec& edit);

struct TransferResult {
  LayeredLatent latent_a_edited;
  LayeredLatent latent_b;
  Image image_a;          // before the edit
  Image image_a_edited;
  Image image_b_projected;
  ProjectionResult projection;
};

TransferResult transfer_edit(const Generator& gen_a, const Generator& gen_b, const LayeredLatent& w_a,
                             const numerics::PcaBasis& basis_a, const EditSpec& edit, const ProjectionConfig& cfg);

// Original A | edited A | projection in B.
Image transfer_panel(const TransferResult& r);

double mse(const Image& a, const Image& b);

}  // namespace latentdrag::align
