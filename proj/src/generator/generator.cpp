#include "latentdrag/generator/generator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latentdrag/error.hpp"
#include "latentdrag/numerics/random.hpp"

namespace latentdrag::generator {

namespace {

// Stream tags keep generator construction and latent sampling independent.
constexpr std::uint64_t kTagWeights = 0x57454947u;
constexpr std::uint64_t kTagLatent = 0x4c415445u;

double softplus(double x) noexcept { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }
double inverse_softplus(double y) { return std::log(std::expm1(y)); }

// Pixel-center coordinate of sample index i on a grid of `n` samples that
// covers a feature grid of `fr` texels.
double grid_coordinate(std::size_t i, std::size_t n, std::size_t fr) noexcept {
  const double scale = static_cast<double>(fr) / static_cast<double>(n);
  return (static_cast<double>(i) + 0.5) * scale - 0.5;
}

struct BlobGeometry {
  double cx, cy, sigma, dsigma_draw;
};

BlobGeometry geometry(std::span<const double> p) {
  const double raw = p[BlobLayout::kSigmaRaw];
  return {p[BlobLayout::kCenterX], p[BlobLayout::kCenterY], blob_sigma(raw), sigmoid(raw)};
}

std::vector<double> axis_profile(std::size_t n, std::size_t fr, double center, double sigma) {
  std::vector<double> g(n);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = grid_coordinate(i, n, fr) - center;
    g[i] = std::exp(-d * d * inv);
  }
  return g;
}

// Accumulates sum_b v_b[ch] * g_b(u) over an h x w grid. `weights` holds one
// row of per-channel weights per blob.
void splat(const Matrix& params, const Matrix& weights, std::size_t fr, numerics::Raster& out) {
  const std::size_t h = out.height;
  const std::size_t w = out.width;
  for (std::size_t b = 0; b < params.rows(); ++b) {
    const BlobGeometry geo = geometry(params.row(b));
    const auto gx = axis_profile(w, fr, geo.cx, geo.sigma);
    const auto gy = axis_profile(h, fr, geo.cy, geo.sigma);
    for (std::size_t ch = 0; ch < out.channels; ++ch) {
      const double v = weights(b, ch);
      if (v == 0.0) continue;
      for (std::size_t y = 0; y < h; ++y) {
        const double gyv = gy[y] * v;
        double* row = &out.at(ch, y, 0);
        for (std::size_t x = 0; x < w; ++x) row[x] += gyv * gx[x];
      }
    }
  }
}

struct SplatGrad {
  Matrix dweights;  // n_blobs x channels
  Matrix dgeom;     // n_blobs x 3: d cx, d cy, d sigma_raw
};

// Adjoint of splat for a cotangent on the splatted field.
SplatGrad splat_vjp(const Matrix& params, const Matrix& weights, std::size_t fr,
                    const numerics::Raster& cot) {
  const std::size_t h = cot.height;
  const std::size_t w = cot.width;
  const std::size_t nch = cot.channels;
  SplatGrad out{Matrix(params.rows(), nch), Matrix(params.rows(), 3)};

  std::vector<double> xs(w), ys(h);
  for (std::size_t x = 0; x < w; ++x) xs[x] = grid_coordinate(x, w, fr);
  for (std::size_t y = 0; y < h; ++y) ys[y] = grid_coordinate(y, h, fr);

  std::vector<double> s_row(w);
  for (std::size_t b = 0; b < params.rows(); ++b) {
    const BlobGeometry geo = geometry(params.row(b));
    const auto gx = axis_profile(w, fr, geo.cx, geo.sigma);
    const auto gy = axis_profile(h, fr, geo.cy, geo.sigma);
    const double inv_s2 = 1.0 / (geo.sigma * geo.sigma);

    double dcx = 0.0, dcy = 0.0, dsig = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
      const double dy = ys[y] - geo.cy;
      std::fill(s_row.begin(), s_row.end(), 0.0);
      for (std::size_t ch = 0; ch < nch; ++ch) {
        const double v = weights(b, ch);
        const double* crow = cot.values.data() + (ch * h + y) * w;
        double dv = 0.0;
        for (std::size_t x = 0; x < w; ++x) {
          dv += crow[x] * gx[x];
          s_row[x] += crow[x] * v;
        }
        out.dweights(b, ch) += dv * gy[y];
      }
      double sx = 0.0, sxd = 0.0, sxd2 = 0.0;
      for (std::size_t x = 0; x < w; ++x) {
        const double sg = s_row[x] * gx[x];
        const double dx = xs[x] - geo.cx;
        sx += sg;
        sxd += sg * dx;
        sxd2 += sg * dx * dx;
      }
      dcx += gy[y] * sxd;
      dcy += gy[y] * sx * dy;
      dsig += gy[y] * (sxd2 + sx * dy * dy);
    }
    out.dgeom(b, 0) = dcx * inv_s2;
    out.dgeom(b, 1) = dcy * inv_s2;
    out.dgeom(b, 2) = dsig * inv_s2 / geo.sigma * geo.dsigma_draw;
  }
  return out;
}

Matrix image_weights(const Matrix& params, std::size_t channels) {
  Matrix v(params.rows(), channels);
  for (std::size_t b = 0; b < params.rows(); ++b) {
    const double amp = params(b, BlobLayout::kAmplitude);
    for (std::size_t ch = 0; ch < channels; ++ch) v(b, ch) = amp * params(b, BlobLayout::kColor + ch);
  }
  return v;
}

Matrix feature_weights(const Matrix& params, std::size_t offset, std::size_t channels) {
  Matrix v(params.rows(), channels);
  for (std::size_t b = 0; b < params.rows(); ++b) {
    for (std::size_t ch = 0; ch < channels; ++ch) v(b, ch) = params(b, offset + ch);
  }
  return v;
}

}  // namespace

double blob_sigma(double sigma_raw) noexcept { return softplus(sigma_raw) + kSigmaFloor; }

void validate(const GeneratorConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::BadConfig, what); };
  if (cfg.n_layers < 1) fail("n_layers must be >= 1");
  if (cfg.latent_dim < 2) fail("latent_dim must be >= 2");
  if (cfg.blobs_per_layer < 1) fail("blobs_per_layer must be >= 1");
  if (cfg.channels < 1 || cfg.height < 1 || cfg.width < 1) fail("image shape must be positive");
  if (cfg.feature_channels < 1 || cfg.feature_resolution < 2) fail("feature shape too small");
  if (!(cfg.layer_noise_eps >= 0.0) || !std::isfinite(cfg.layer_noise_eps)) {
    fail("layer_noise_eps must be finite and >= 0");
  }
}

Generator::Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  const std::size_t d = cfg_.latent_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  numerics::Rng rng({cfg_.seed, kTagWeights});

  // Anisotropic mapping: column i scaled by 1/(1 + i/4), normalized so each
  // latent coordinate has unit variance on average.
  Vector spectrum(d);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    spectrum[i] = 1.0 / (1.0 + static_cast<double>(i) / 4.0);
    sum_sq += spectrum[i] * spectrum[i];
  }
  const double norm = std::sqrt(static_cast<double>(d) / sum_sq);
  mapping_ = Matrix(d, d);
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) mapping_(r, c) = spectrum[c] * norm * rng.normal() * inv_sqrt_d;
  }
  mapping_offset_.resize(d);
  for (double& x : mapping_offset_) x = 0.3 * rng.normal();

  const double fr = static_cast<double>(cfg_.feature_resolution);
  const std::size_t np = blob_param_count();
  weights_.reserve(n_blobs());
  biases_.reserve(n_blobs());
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    // Early layers carry large, bright blobs; later layers finer detail.
    const double depth = cfg_.n_layers > 1 ? static_cast<double>(l) / (cfg_.n_layers - 1) : 0.0;
    const double coarse = 1.0 - 0.6 * depth;
    // Features fall off faster than appearance so a coarse blob dominates the
    // descriptor at its own center.
    const double feature_gain = std::exp(-4.0 * depth);
    for (std::size_t k = 0; k < cfg_.blobs_per_layer; ++k) {
      Matrix a(np, d);
      Vector bias(np);
      auto fill_row = [&](std::size_t row, double scale) {
        for (std::size_t c = 0; c < d; ++c) a(row, c) = scale * rng.normal() * inv_sqrt_d;
      };
      fill_row(BlobLayout::kCenterX, 0.03 * fr);
      fill_row(BlobLayout::kCenterY, 0.03 * fr);
      fill_row(BlobLayout::kSigmaRaw, 0.05);
      fill_row(BlobLayout::kAmplitude, 0.3);
      bias[BlobLayout::kCenterX] = rng.uniform(0.25, 0.75) * (fr - 1.0);
      bias[BlobLayout::kCenterY] = rng.uniform(0.25, 0.75) * (fr - 1.0);
      bias[BlobLayout::kSigmaRaw] = inverse_softplus(2.0 * coarse * rng.uniform(0.8, 1.2));
      bias[BlobLayout::kAmplitude] =
          (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.5, 2.5) * coarse;
      for (std::size_t ch = 0; ch < cfg_.channels; ++ch) {
        fill_row(BlobLayout::kColor + ch, 0.3);
        bias[BlobLayout::kColor + ch] = rng.normal();
      }
      for (std::size_t ch = 0; ch < cfg_.feature_channels; ++ch) {
        fill_row(feature_offset() + ch, 0.02);
        bias[feature_offset() + ch] = rng.normal() * feature_gain;
      }
      weights_.push_back(std::move(a));
      biases_.push_back(std::move(bias));
    }
  }
}

LayeredLatent Generator::zero_latent() const {
  return {Matrix(cfg_.n_layers, cfg_.latent_dim, 0.0)};
}

LayeredLatent Generator::mean_latent() const {
  LayeredLatent out = zero_latent();
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    std::copy(mapping_offset_.begin(), mapping_offset_.end(), out.layers.row(l).begin());
  }
  return out;
}

LayeredLatent Generator::sample_latent(std::uint64_t sample_seed) const {
  const std::size_t d = cfg_.latent_dim;
  numerics::Rng rng({cfg_.seed, sample_seed, kTagLatent});
  Vector z(d);
  for (double& x : z) x = rng.normal();
  Vector w = mapping_offset_;
  for (std::size_t r = 0; r < d; ++r) w[r] += numerics::dot(mapping_.row(r), z);

  LayeredLatent out = zero_latent();
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    auto row = out.layers.row(l);
    for (std::size_t c = 0; c < d; ++c) row[c] = w[c];
    if (cfg_.layer_noise_eps > 0.0) {
      for (std::size_t c = 0; c < d; ++c) row[c] += cfg_.layer_noise_eps * rng.normal();
    }
  }
  return out;
}

void Generator::check_latent(const LayeredLatent& latent) const {
  if (latent.n_layers() != cfg_.n_layers || latent.dim() != cfg_.latent_dim) {
    throw Error(ErrorCode::BadShape, "latent shape does not match generator");
  }
  for (double x : latent.layers.data()) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteLatent, "latent has non-finite entries");
  }
}

Matrix Generator::blob_params(const LayeredLatent& latent) const {
  check_latent(latent);
  const std::size_t np = blob_param_count();
  Matrix out(n_blobs(), np);
  for (std::size_t b = 0; b < n_blobs(); ++b) {
    auto layer = latent.layers.row(blob_layer(b));
    auto dst = out.row(b);
    for (std::size_t r = 0; r < np; ++r) dst[r] = biases_[b][r] + numerics::dot(weights_[b].row(r), layer);
  }
  return out;
}

Image Generator::render_blobs(const Matrix& params) const {
  Image img(cfg_.channels, cfg_.height, cfg_.width, 0.0);
  splat(params, image_weights(params, cfg_.channels), cfg_.feature_resolution, img);
  for (double& v : img.values) v = std::clamp(sigmoid(v), 0.0, 1.0);
  return img;
}

FeatureMap Generator::features_from_blobs(const Matrix& params) const {
  const std::size_t fr = cfg_.feature_resolution;
  FeatureMap fmap(cfg_.feature_channels, fr, fr, 0.0);
  splat(params, feature_weights(params, feature_offset(), cfg_.feature_channels), fr, fmap);
  return fmap;
}

Image Generator::render(const LayeredLatent& latent) const { return render_blobs(blob_params(latent)); }

FeatureMap Generator::features(const LayeredLatent& latent) const {
  return features_from_blobs(blob_params(latent));
}

Matrix Generator::feature_vjp(const LayeredLatent& latent, const FeatureMap& cotangent) const {
  const std::size_t fr = cfg_.feature_resolution;
  if (cotangent.channels != cfg_.feature_channels || cotangent.height != fr || cotangent.width != fr) {
    throw Error(ErrorCode::BadShape, "feature cotangent shape mismatch");
  }
  const Matrix params = blob_params(latent);
  const SplatGrad g =
      splat_vjp(params, feature_weights(params, feature_offset(), cfg_.feature_channels), fr, cotangent);

  Matrix grad(cfg_.n_layers, cfg_.latent_dim, 0.0);
  Vector dparams(blob_param_count());
  for (std::size_t b = 0; b < n_blobs(); ++b) {
    std::fill(dparams.begin(), dparams.end(), 0.0);
    dparams[BlobLayout::kCenterX] = g.dgeom(b, 0);
    dparams[BlobLayout::kCenterY] = g.dgeom(b, 1);
    dparams[BlobLayout::kSigmaRaw] = g.dgeom(b, 2);
    for (std::size_t ch = 0; ch < cfg_.feature_channels; ++ch) dparams[feature_offset() + ch] = g.dweights(b, ch);
    auto out = grad.row(blob_layer(b));
    for (std::size_t r = 0; r < dparams.size(); ++r) {
      if (dparams[r] != 0.0) numerics::axpy(dparams[r], weights_[b].row(r), out);
    }
  }
  return grad;
}

Matrix Generator::render_vjp(const LayeredLatent& latent, const Image& cotangent) const {
  if (cotangent.channels != cfg_.channels || cotangent.height != cfg_.height ||
      cotangent.width != cfg_.width) {
    throw Error(ErrorCode::BadShape, "image cotangent shape mismatch");
  }
  const Matrix params = blob_params(latent);
  const Matrix weights = image_weights(params, cfg_.channels);

  // Back through the sigmoid squash.
  Image pre(cfg_.channels, cfg_.height, cfg_.width, 0.0);
  splat(params, weights, cfg_.feature_resolution, pre);
  Image cot_pre = cotangent;
  for (std::size_t i = 0; i < pre.values.size(); ++i) {
    const double s = sigmoid(pre.values[i]);
    cot_pre.values[i] *= s * (1.0 - s);
  }
  const SplatGrad g = splat_vjp(params, weights, cfg_.feature_resolution, cot_pre);

  Matrix grad(cfg_.n_layers, cfg_.latent_dim, 0.0);
  Vector dparams(blob_param_count());
  for (std::size_t b = 0; b < n_blobs(); ++b) {
    std::fill(dparams.begin(), dparams.end(), 0.0);
    dparams[BlobLayout::kCenterX] = g.dgeom(b, 0);
    dparams[BlobLayout::kCenterY] = g.dgeom(b, 1);
    dparams[BlobLayout::kSigmaRaw] = g.dgeom(b, 2);
    const double amp = params(b, BlobLayout::kAmplitude);
    double damp = 0.0;
    for (std::size_t ch = 0; ch < cfg_.channels; ++ch) {
      damp += g.dweights(b, ch) * params(b, BlobLayout::kColor + ch);
      dparams[BlobLayout::kColor + ch] = g.dweights(b, ch) * amp;
    }
    dparams[BlobLayout::kAmplitude] = damp;
    auto out = grad.row(blob_layer(b));
    for (std::size_t r = 0; r < dparams.size(); ++r) {
      if (dparams[r] != 0.0) numerics::axpy(dparams[r], weights_[b].row(r), out);
    }
  }
  return grad;
}

namespace {

struct BilinearCell {
  std::size_t x0, y0, x1, y1;
  double fx, fy;
};

BilinearCell bilinear_cell(const FeatureMap& fmap, double x, double y) {
  const double maxx = static_cast<double>(fmap.width) - 1.0;
  const double maxy = static_cast<double>(fmap.height) - 1.0;
  if (!(x >= 0.0 && x <= maxx && y >= 0.0 && y <= maxy)) {
    throw Error(ErrorCode::OutOfBounds, "feature sample outside grid");
  }
  // The last texel row/column is reached with weight 1 from the cell before it.
  const auto x0 = static_cast<std::size_t>(std::min(std::floor(x), std::max(maxx - 1.0, 0.0)));
  const auto y0 = static_cast<std::size_t>(std::min(std::floor(y), std::max(maxy - 1.0, 0.0)));
  return {x0, y0, std::min(x0 + 1, fmap.width - 1), std::min(y0 + 1, fmap.height - 1),
          x - static_cast<double>(x0), y - static_cast<double>(y0)};
}

}  // namespace

Vector sample_feature(const FeatureMap& fmap, double x, double y) {
  const BilinearCell c = bilinear_cell(fmap, x, y);
  Vector out(fmap.channels);
  for (std::size_t ch = 0; ch < fmap.channels; ++ch) {
    out[ch] = (1 - c.fy) * ((1 - c.fx) * fmap.at(ch, c.y0, c.x0) + c.fx * fmap.at(ch, c.y0, c.x1)) +
              c.fy * ((1 - c.fx) * fmap.at(ch, c.y1, c.x0) + c.fx * fmap.at(ch, c.y1, c.x1));
  }
  return out;
}

void scatter_feature(FeatureMap& fmap, double x, double y, std::span<const double> values) {
  if (values.size() != fmap.channels) throw Error(ErrorCode::BadShape, "scatter channel mismatch");
  const BilinearCell c = bilinear_cell(fmap, x, y);
  for (std::size_t ch = 0; ch < fmap.channels; ++ch) {
    const double v = values[ch];
    fmap.at(ch, c.y0, c.x0) += (1 - c.fy) * (1 - c.fx) * v;
    fmap.at(ch, c.y0, c.x1) += (1 - c.fy) * c.fx * v;
    fmap.at(ch, c.y1, c.x0) += c.fy * (1 - c.fx) * v;
    fmap.at(ch, c.y1, c.x1) += c.fy * c.fx * v;
  }
}

}  // namespace latentdrag::generator
