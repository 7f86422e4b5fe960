#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "latentdrag/numerics/matrix.hpp"
#include "latentdrag/numerics/raster.hpp"

namespace latentdrag::generator {

using numerics::Matrix;
using numerics::Vector;
using Image = numerics::Raster;       // C x H x W, values in [0, 1]
using FeatureMap = numerics::Raster;  // Fc x Fr x Fr, unbounded

struct GeneratorConfig {
  std::uint64_t seed = 0;
  std::size_t n_layers = 12;
  std::size_t latent_dim = 192;
  std::size_t blobs_per_layer = 4;
  std::size_t channels = 3;
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t feature_channels = 8;
  std::size_t feature_resolution = 64;
  double layer_noise_eps = 0.1;

  bool operator==(const GeneratorConfig&) const = default;
};

// Throws BadConfig if any field is out of range.
void validate(const GeneratorConfig& cfg);

// The layered (W+) latent: one D-vector per generator layer.
struct LayeredLatent {
  Matrix layers;  // L x D

  std::size_t n_layers() const noexcept { return layers.rows(); }
  std::size_t dim() const noexcept { return layers.cols(); }
  bool operator==(const LayeredLatent&) const = default;
};

// Blob geometry and appearance in feature-grid units. Layout of the raw
// parameter vector produced by the per-blob affine map.
struct BlobLayout {
  static constexpr std::size_t kCenterX = 0;
  static constexpr std::size_t kCenterY = 1;
  static constexpr std::size_t kSigmaRaw = 2;
  static constexpr std::size_t kAmplitude = 3;
  static constexpr std::size_t kColor = 4;
};

// sigma = softplus(raw) + 2; the floor keeps every blob at least 2 texels wide.
double blob_sigma(double sigma_raw) noexcept;
inline constexpr double kSigmaFloor = 2.0;

// Immutable after construction; every method is const and reentrant.
class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg);

  const GeneratorConfig& config() const noexcept { return cfg_; }
  std::size_t n_blobs() const noexcept { return cfg_.n_layers * cfg_.blobs_per_layer; }
  std::size_t blob_param_count() const noexcept {
    return BlobLayout::kColor + cfg_.channels + cfg_.feature_channels;
  }
  std::size_t feature_offset() const noexcept { return BlobLayout::kColor + cfg_.channels; }
  std::size_t blob_layer(std::size_t blob) const noexcept { return blob / cfg_.blobs_per_layer; }

  // Fixed affine blob maps: params_b = weights(b) * layer_l + bias(b).
  const Matrix& blob_weights(std::size_t blob) const { return weights_[blob]; }
  const Vector& blob_bias(std::size_t blob) const { return biases_[blob]; }

  LayeredLatent zero_latent() const;
  // Mean of the latent distribution: every layer equals the mapping offset.
  LayeredLatent mean_latent() const;
  // z ~ N(0, I); w = M z + c; layer l = w + eps * n_l. Deterministic per
  // (config.seed, sample_seed).
  LayeredLatent sample_latent(std::uint64_t sample_seed) const;

  // Raw per-blob parameter vectors for a latent (n_blobs x blob_param_count).
  Matrix blob_params(const LayeredLatent& latent) const;

  Image render(const LayeredLatent& latent) const;
  FeatureMap features(const LayeredLatent& latent) const;

  // Same outputs from explicit blob parameters (rows as from blob_params).
  Image render_blobs(const Matrix& params) const;
  FeatureMap features_from_blobs(const Matrix& params) const;

  // d<cotangent, features(latent)>/d latent, L x D.
  Matrix feature_vjp(const LayeredLatent& latent, const FeatureMap& cotangent) const;
  // d<cotangent, render(latent)>/d latent, L x D.
  Matrix render_vjp(const LayeredLatent& latent, const Image& cotangent) const;

  void check_latent(const LayeredLatent& latent) const;

 private:
  GeneratorConfig cfg_;
  Matrix mapping_;  // D x D
  Vector mapping_offset_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

// Bilinear read of the Fc-vector at sub-texel (x, y) in [0, Fr-1]^2.
Vector sample_feature(const FeatureMap& fmap, double x, double y);

// Adjoint of sample_feature: adds `values` into the four texels around (x, y)
// with the same bilinear weights.
void scatter_feature(FeatureMap& fmap, double x, double y, std::span<const double> values);

}  // namespace latentdrag::generator
