#include "latentdrag/align/align.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latentdrag/error.hpp"
#include "latentdrag/generator/raster_io.hpp"
#include "latentdrag/numerics/adamw.hpp"

namespace latentdrag::align {

namespace {

constexpr std::uint64_t kBasisSampleSeedBase = 2'000'000;

void check_target(const Image& target, const Generator& gen) {
  const auto& c = gen.config();
  if (target.channels != c.channels || target.height != c.height || target.width != c.width) {
    throw Error(ErrorCode::ShapeMismatch, "target is " + std::to_string(target.channels) + "x" +
                                              std::to_string(target.height) + "x" + std::to_string(target.width) +
                                              ", generator renders " + std::to_string(c.channels) + "x" +
                                              std::to_string(c.height) + "x" + std::to_string(c.width));
  }
}

LayeredLatent initial_latent(const Generator& gen, const ProjectionConfig& cfg) {
  switch (cfg.init) {
    case InitPolicy::MeanLatent:
      return gen.mean_latent();
    case InitPolicy::RandomSeeded:
      return gen.sample_latent(cfg.init_seed);
    case InitPolicy::Provided:
      break;
  }
  gen.check_latent(*cfg.init_latent);
  return *cfg.init_latent;
}

// Residual-scaled cotangent for weight * mean((x - y)^2).
numerics::Raster mse_cotangent(const numerics::Raster& x, const numerics::Raster& y, double weight, double& loss) {
  numerics::Raster cot(x.channels, x.height, x.width);
  const double n = static_cast<double>(x.values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    const double r = x.values[i] - y.values[i];
    sum += r * r;
    cot.values[i] = 2.0 * weight * r / n;
  }
  loss += weight * sum / n;
  return cot;
}

}  // namespace

void ProjectionConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw Error(ErrorCode::BadConfig, "learning_rate must be >= 0");
  if (max_iterations < 1) throw Error(ErrorCode::BadConfig, "max_iterations must be >= 1");
  if (!(pixel_l2 >= 0.0) || !(feature_l2 >= 0.0) || pixel_l2 + feature_l2 <= 0.0) {
    throw Error(ErrorCode::BadConfig, "loss weights must be >= 0 with at least one > 0");
  }
  if (feature_l2 > 0.0 && !target_features) throw Error(ErrorCode::BadConfig, "feature_l2 needs target_features");
  if (init == InitPolicy::Provided && !init_latent) throw Error(ErrorCode::BadConfig, "init=provided needs a latent");
}

double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::ShapeMismatch, "mse of differently shaped rasters");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  return a.values.empty() ? 0.0 : s / static_cast<double>(a.values.size());
}

double projection_loss(const Generator& gen, const LayeredLatent& w, const Image& target, const ProjectionConfig& cfg) {
  double loss = 0.0;
  if (cfg.pixel_l2 > 0.0) loss += cfg.pixel_l2 * mse(gen.render(w), target);
  if (cfg.feature_l2 > 0.0) loss += cfg.feature_l2 * mse(gen.features(w), *cfg.target_features);
  return loss;
}

ProjectionResult project_image(const Image& target, const Generator& gen, const ProjectionConfig& cfg) {
  cfg.validate();
  check_target(target, gen);
  if (cfg.target_features && cfg.feature_l2 > 0.0) {
    const auto& c = gen.config();
    const auto& f = *cfg.target_features;
    if (f.channels != c.feature_channels || f.height != c.feature_resolution || f.width != c.feature_resolution) {
      throw Error(ErrorCode::ShapeMismatch, "target features do not match the generator feature map");
    }
  }

  LayeredLatent w = initial_latent(gen, cfg);
  numerics::AdamHyper hyper;
  hyper.lr = cfg.learning_rate;
  auto opt = numerics::OptimizerState::fresh(w.layers.data().size(), hyper);

  ProjectionResult out;
  out.latent = w;
  out.best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0;; ++it) {
    double loss = 0.0;
    numerics::Matrix grad(w.n_layers(), w.dim());
    if (cfg.pixel_l2 > 0.0) {
      const auto cot = mse_cotangent(gen.render(w), target, cfg.pixel_l2, loss);
      if (it < cfg.max_iterations) grad = gen.render_vjp(w, cot);
    }
    if (cfg.feature_l2 > 0.0) {
      const auto cot = mse_cotangent(gen.features(w), *cfg.target_features, cfg.feature_l2, loss);
      if (it < cfg.max_iterations) {
        const auto g = gen.feature_vjp(w, cot);
        numerics::axpy(1.0, g.data(), grad.data());
      }
    }
    out.loss.push_back(loss);
    if (loss < out.best_loss) {
      out.best_loss = loss;
      out.best_iteration = it;
      out.latent = w;
    }
    out.best_loss_trace.push_back(out.best_loss);
    if (it == cfg.max_iterations) break;
    numerics::adamw_update(opt, w.layers.data(), grad.data());
  }
  return out;
}

Image prepare_target(const Image& external, const Generator& gen) {
  const auto& c = gen.config();
  return generator::resample_nearest(external, c.channels, c.height, c.width);
}

numerics::PcaBasis fit_layer_basis(const Generator& gen, std::size_t layer_begin, std::size_t layer_end,
                                   std::size_t samples, std::size_t n_components) {
  const auto& c = gen.config();
  if (layer_begin >= layer_end || layer_end > c.n_layers) {
    throw Error(ErrorCode::BadConfig, "layer range must satisfy begin < end <= " + std::to_string(c.n_layers));
  }
  const std::size_t d = c.latent_dim;
  const std::size_t p = (layer_end - layer_begin) * d;
  numerics::Matrix data(samples, p);
  for (std::size_t i = 0; i < samples; ++i) {
    const auto w = gen.sample_latent(kBasisSampleSeedBase + i);
    for (std::size_t l = layer_begin; l < layer_end; ++l) {
      std::copy_n(w.layers.row(l).begin(), d, data.row(i).begin() + static_cast<std::ptrdiff_t>((l - layer_begin) * d));
    }
  }
  const std::size_t n = n_components ? n_components : std::min(samples, p);
  return numerics::fit_pca(data, n);
}

LayeredLatent edit_along_component(const LayeredLatent& w, const numerics::PcaBasis& basis, const EditSpec& edit) {
  const std::size_t d = w.dim();
  if (edit.layer_begin >= edit.layer_end || edit.layer_end > w.n_layers()) {
    throw Error(ErrorCode::BadShape, "edit layer range outside the latent");
  }
  if (basis.dim() != (edit.layer_end - edit.layer_begin) * d) {
    throw Error(ErrorCode::BadShape, "basis dimension " + std::to_string(basis.dim()) +
                                         " does not match the edited layers");
  }
  if (edit.component_index >= basis.size()) {
    throw Error(ErrorCode::BadShape, "component " + std::to_string(edit.component_index) + " not in basis of size " +
                                         std::to_string(basis.size()));
  }
  LayeredLatent out = w;
  const auto comp = basis.components.row(edit.component_index);
  for (std::size_t l = edit.layer_begin; l < edit.layer_end; ++l) {
    for (std::size_t j = 0; j < d; ++j) out.layers(l, j) += edit.magnitude * comp[(l - edit.layer_begin) * d + j];
  }
  return out;
}

TransferResult transfer_edit(const Generator& gen_a, const Generator& gen_b, const LayeredLatent& w_a,
                             const numerics::PcaBasis& basis_a, const EditSpec& edit, const ProjectionConfig& cfg) {
  TransferResult r;
  r.image_a = gen_a.render(w_a);
  r.latent_a_edited = edit_along_component(w_a, basis_a, edit);
  r.image_a_edited = gen_a.render(r.latent_a_edited);
  ProjectionConfig pc = cfg;
  pc.feature_l2 = 0.0;  // features of A are not comparable with B's
  pc.target_features.reset();
  r.projection = project_image(prepare_target(r.image_a_edited, gen_b), gen_b, pc);
  r.latent_b = r.projection.latent;
  r.image_b_projected = gen_b.render(r.latent_b);
  return r;
}

Image transfer_panel(const TransferResult& r) {
  const std::vector<Image> panels{r.image_a, r.image_a_edited,
                                  generator::resample_nearest(r.image_b_projected, r.image_a.channels,
                                                              r.image_a.height, r.image_a.width)};
  return generator::side_by_side(panels);
}

}  // namespace latentdrag::align
