#include "latentdrag/drag/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <string>

#include "latentdrag/error.hpp"
#include "latentdrag/numerics/ssim.hpp"

namespace latentdrag::drag {

namespace {

// Latents used for PCA fitting come from their own seed range so they never
// coincide with scenario seeds.
constexpr std::uint64_t kPcaSampleSeedBase = 1'000'000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool in_grid(const Point& p, double max_coord) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= max_coord && p.y <= max_coord;
}

void write_prefix(LayeredLatent& latent, std::span<const double> flat, std::size_t layers) {
  const std::size_t d = latent.dim();
  for (std::size_t l = 0; l < layers; ++l) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(l * d), d, latent.layers.row(l).begin());
  }
}

void realize_latent(DragState& s) {
  if (s.config.reduced()) {
    write_prefix(s.latent, numerics::pca_reconstruct(*s.basis, s.trainable), s.config.w_plus_layers);
  } else {
    write_prefix(s.latent, s.trainable, s.config.w_plus_layers);
  }
}

std::string cache_key(const generator::GeneratorConfig& g, std::size_t layers, std::size_t samples) {
  std::ostringstream os;
  os.precision(17);
  os << g.seed << '/' << g.n_layers << '/' << g.latent_dim << '/' << g.blobs_per_layer << '/' << g.channels
     << '/' << g.height << '/' << g.width << '/' << g.feature_channels << '/' << g.feature_resolution << '/'
     << g.layer_noise_eps << '|' << layers << '|' << samples;
  return os.str();
}

}  // namespace

std::string npca_label(const DragConfig& cfg) {
  return cfg.n_pca ? std::to_string(*cfg.n_pca) : std::string("Regular");
}

void validate(const DragConfig& cfg, const generator::GeneratorConfig& gen) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::BadConfig, what); };
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) fail("learning_rate must be >= 0");
  if (cfg.w_plus_layers < 1 || cfg.w_plus_layers > gen.n_layers) {
    fail("w_plus_layers must be in [1, " + std::to_string(gen.n_layers) + "]");
  }
  if (!(cfg.stopping_distance > 0.0)) fail("stopping_distance must be > 0");
  if (cfg.r1 < 1 || cfg.r2 < cfg.r1) fail("radii must satisfy r2 >= r1 >= 1");
  if (!(cfg.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (cfg.n_pca) {
    const std::size_t prefix = cfg.w_plus_layers * gen.latent_dim;
    if (*cfg.n_pca < 1 || *cfg.n_pca > prefix) {
      fail("n_pca=" + std::to_string(*cfg.n_pca) + " must be in [1, layers*latent_dim=" + std::to_string(prefix) +
           "]");
    }
    if (*cfg.n_pca > cfg.pca_samples) fail("n_pca exceeds the number of PCA samples");
    if (cfg.pca_samples < 2) fail("pca_samples must be >= 2");
  }
}

bool DragState::converged() const noexcept {
  return std::none_of(pairs.begin(), pairs.end(), [&](const HandlePair& p) { return is_active(p); });
}

double DragState::mean_distance() const noexcept {
  double s = 0.0;
  for (const auto& p : pairs) s += distance(p.handle, p.target);
  return pairs.empty() ? 0.0 : s / static_cast<double>(pairs.size());
}

double DragState::max_distance() const noexcept {
  double m = 0.0;
  for (const auto& p : pairs) m = std::max(m, distance(p.handle, p.target));
  return m;
}

numerics::Vector flatten_prefix(const LayeredLatent& latent, std::size_t layers) {
  const std::size_t d = latent.dim();
  numerics::Vector flat(layers * d);
  for (std::size_t l = 0; l < layers; ++l) std::copy_n(latent.layers.row(l).begin(), d, flat.begin() + l * d);
  return flat;
}

numerics::PcaBasis fit_prefix_basis(const Generator& gen, std::size_t layers, std::size_t samples) {
  const std::size_t d = gen.config().latent_dim;
  numerics::Matrix data(samples, layers * d);
  for (std::size_t i = 0; i < samples; ++i) {
    const auto flat = flatten_prefix(gen.sample_latent(kPcaSampleSeedBase + i), layers);
    std::copy(flat.begin(), flat.end(), data.row(i).begin());
  }
  return numerics::fit_pca(data, std::min(samples, layers * d));
}

std::shared_ptr<const numerics::PcaBasis> cached_prefix_basis(const Generator& gen, std::size_t layers,
                                                              std::size_t samples) {
  using Entry = std::shared_future<std::shared_ptr<const numerics::PcaBasis>>;
  static std::mutex mu;
  static std::map<std::string, Entry> cache;

  const std::string key = cache_key(gen.config(), layers, samples);
  std::promise<std::shared_ptr<const numerics::PcaBasis>> promise;
  Entry entry;
  {
    std::lock_guard lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) {
      entry = it->second;
    } else {
      entry = promise.get_future().share();
      cache.emplace(key, entry);
      it = cache.end();
    }
    if (it != cache.end()) return entry.get();
  }
  try {
    promise.set_value(std::make_shared<const numerics::PcaBasis>(fit_prefix_basis(gen, layers, samples)));
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu);
    cache.erase(key);
  }
  return entry.get();
}

DragState init_session(std::shared_ptr<const Generator> gen, const LayeredLatent& latent,
                       std::span<const PointPair> pairs, const DragConfig& config,
                       std::shared_ptr<const numerics::PcaBasis> basis) {
  if (!gen) throw Error(ErrorCode::BadConfig, "no generator");
  validate(config, gen->config());
  gen->check_latent(latent);
  if (pairs.empty()) throw Error(ErrorCode::BadConfig, "at least one handle/target pair is required");
  const double max_coord = static_cast<double>(gen->config().feature_resolution) - 1.0;
  for (const auto& p : pairs) {
    if (!in_grid(p.handle, max_coord) || !in_grid(p.target, max_coord)) {
      throw Error(ErrorCode::OutOfBounds, "handle/target outside [0, " + std::to_string(max_coord) + "]^2");
    }
  }

  DragState s;
  s.gen = gen;
  s.config = config;
  s.original = latent;
  s.latent = latent;

  const auto prefix = flatten_prefix(latent, config.w_plus_layers);
  if (config.reduced()) {
    if (!basis) basis = cached_prefix_basis(*gen, config.w_plus_layers, config.pca_samples);
    if (basis->dim() != prefix.size()) throw Error(ErrorCode::BadConfig, "basis does not span the W+ prefix");
    if (basis->size() < *config.n_pca) throw Error(ErrorCode::BadConfig, "basis has fewer than n_pca components");
    s.basis = basis->size() == *config.n_pca
                  ? basis
                  : std::make_shared<const numerics::PcaBasis>(basis->truncated(*config.n_pca));
    s.trainable = numerics::pca_project(*s.basis, prefix);
  } else {
    s.trainable = prefix;
  }
  realize_latent(s);

  numerics::AdamHyper hyper;
  hyper.lr = config.learning_rate;
  hyper.weight_decay = config.weight_decay;
  s.optimizer = numerics::OptimizerState::fresh(s.trainable.size(), hyper);

  s.features = gen->features(s.latent);
  s.initial_image = gen->render(s.latent);
  for (const auto& p : pairs) {
    s.pairs.push_back({p.handle, p.target, generator::sample_feature(s.features, p.handle.x, p.handle.y)});
  }
  return s;
}

LossAndGrad motion_loss_and_grad(const DragState& state) {
  const Generator& gen = *state.gen;
  const FeatureMap& f = state.features;
  const double max_coord = static_cast<double>(f.width) - 1.0;
  FeatureMap cot(f.channels, f.height, f.width, 0.0);
  numerics::Vector signs(f.channels);

  LossAndGrad out;
  bool any_active = false;
  const int r1 = state.config.r1;
  for (const auto& pair : state.pairs) {
    if (!state.is_active(pair)) continue;
    any_active = true;
    const double dist = distance(pair.handle, pair.target);
    const double norm = std::max(dist, 1.0);
    const Point dir{(pair.target.x - pair.handle.x) / norm, (pair.target.y - pair.handle.y) / norm};
    for (int j = -r1; j <= r1; ++j) {
      for (int i = -r1; i <= r1; ++i) {
        if (i * i + j * j > r1 * r1) continue;
        const Point q{pair.handle.x + i, pair.handle.y + j};
        const Point moved{q.x + dir.x, q.y + dir.y};
        if (!in_grid(q, max_coord) || !in_grid(moved, max_coord)) continue;
        const auto ref = generator::sample_feature(f, q.x, q.y);  // detached
        const auto cur = generator::sample_feature(f, moved.x, moved.y);
        for (std::size_t c = 0; c < f.channels; ++c) {
          const double diff = cur[c] - ref[c];
          out.loss += std::abs(diff);
          signs[c] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        }
        generator::scatter_feature(cot, moved.x, moved.y, signs);
      }
    }
  }
  if (!any_active) throw Error(ErrorCode::AllConverged, "every pair is within the stopping distance");

  const numerics::Matrix full = gen.feature_vjp(state.latent, cot);
  out.prefix_grad = flatten_prefix(LayeredLatent{full}, state.config.w_plus_layers);
  out.grad = state.config.reduced() ? numerics::pca_pullback(*state.basis, out.prefix_grad) : out.prefix_grad;
  return out;
}

void track_points(DragState& state) {
  const FeatureMap& f = state.features;
  const auto max_x = static_cast<long>(f.width) - 1;
  const auto max_y = static_cast<long>(f.height) - 1;
  const int r2 = state.config.r2;
  for (auto& pair : state.pairs) {
    if (!state.is_active(pair)) continue;
    const Point p = pair.handle;
    const long cx = std::lround(p.x);
    const long cy = std::lround(p.y);
    double best_cost = std::numeric_limits<double>::infinity();
    double best_dist = std::numeric_limits<double>::infinity();
    Point best = p;
    // Row-major scan; a candidate replaces the incumbent only if strictly
    // cheaper, or equally cheap and strictly nearer.
    for (long y = std::max(0L, cy - r2 - 1); y <= std::min(max_y, cy + r2 + 1); ++y) {
      for (long x = std::max(0L, cx - r2 - 1); x <= std::min(max_x, cx + r2 + 1); ++x) {
        const Point q{static_cast<double>(x), static_cast<double>(y)};
        const double dq = distance(q, p);
        if (dq > r2) continue;
        double cost = 0.0;
        for (std::size_t c = 0; c < f.channels; ++c) cost += std::abs(f.at(c, y, x) - pair.descriptor[c]);
        if (cost < best_cost || (cost == best_cost && dq < best_dist)) {
          best_cost = cost;
          best_dist = dq;
          best = q;
        }
      }
    }
    pair.handle = best;
  }
}

StepRecord drag_step(DragState& state) {
  if (state.terminated()) throw Error(ErrorCode::AllConverged, "session already terminated");
  StepRecord rec;
  rec.iteration = state.iteration;

  const auto t0 = Clock::now();
  const LossAndGrad lg = motion_loss_and_grad(state);
  numerics::adamw_update(state.optimizer, state.trainable, lg.grad);
  realize_latent(state);
  rec.t_opt = seconds_since(t0);
  rec.motion_loss = lg.loss;
  rec.grad_magnitude = numerics::norm2(lg.grad);

  const auto t1 = Clock::now();
  state.features = state.gen->features(state.latent);
  track_points(state);
  rec.t_track = seconds_since(t1);

  rec.mean_distance = state.mean_distance();
  rec.max_distance = state.max_distance();
  state.iteration += 1;
  state.trace.push_back(rec);
  return rec;
}

RunRecord summarize_session(const DragState& state) {
  RunRecord r;
  r.config = state.config;
  r.iterations = state.iteration;
  r.trace = state.trace;
  for (const auto& s : state.trace) {
    r.t_opt_total += s.t_opt;
    r.t_track_total += s.t_track;
    r.t_total += s.t_opt + s.t_track;
  }
  r.converged = state.converged();
  r.final_mean_distance = state.mean_distance();
  r.final_max_distance = state.max_distance();
  r.ssim = numerics::ssim(state.initial_image, state.gen->render(state.latent));
  r.ssim_per_time = r.t_total > 0.0 ? r.ssim / r.t_total : 0.0;
  return r;
}

RunRecord run_drag(DragState& state) {
  try {
    while (!state.terminated()) drag_step(state);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFiniteGradient && e.code() != ErrorCode::NonFiniteLatent) throw;
    RunRecord r = summarize_session(state);
    r.converged = false;
    r.failure = e.what();
    return r;
  }
  return summarize_session(state);
}

}  // namespace latentdrag::drag
