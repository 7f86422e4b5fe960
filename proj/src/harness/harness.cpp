#include "latentdrag/harness/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

#include "latentdrag/error.hpp"
#include "latentdrag/generator/raster_io.hpp"
#include "latentdrag/numerics/ema.hpp"

namespace latentdrag::harness {

namespace fs = std::filesystem;
using drag::json;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Shortest round-trip text for a learning rate ("0.05", "0.002").
std::string lr_text(double lr) {
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, lr);
    if (std::strtod(buf, nullptr) == lr) return buf;
  }
  return fmt("%.17g", lr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::OutputUnwritable, "cannot write " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::OutputUnwritable, "cannot create " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

std::string npca_label(const std::optional<std::size_t>& n) { return n ? std::to_string(*n) : "Regular"; }

std::vector<DragConfig> GridSpec::expand() const {
  std::vector<DragConfig> out;
  out.reserve(run_count());
  for (double lr : learning_rates) {
    for (const auto& n : n_pca_options) {
      for (std::size_t m : layer_options) {
        for (std::uint64_t seed : seeds) {
          DragConfig c = base;
          c.learning_rate = lr;
          c.n_pca = n;
          c.w_plus_layers = m;
          c.seed = seed;
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

void GridSpec::validate() const {
  if (learning_rates.empty() || n_pca_options.empty() || layer_options.empty() || seeds.empty()) {
    throw Error(ErrorCode::BadConfig, "every grid axis needs at least one value");
  }
  generator::validate(scenario.generator);
  for (const auto& c : expand()) drag::validate(c, scenario.generator);
}

drag::Scenario make_scenario(const generator::Generator& gen, const ScenarioSpec& spec, std::uint64_t seed) {
  if (spec.points.empty()) return drag::canonical_scenario(gen, seed, spec.offset);
  return {gen.sample_latent(seed), spec.points};
}

std::string cell_dir_name(const DragConfig& cfg) {
  return "npca-" + drag::npca_label(cfg) + "_layers-" + std::to_string(cfg.w_plus_layers) + "_lr-" +
         lr_text(cfg.learning_rate);
}

fs::path run_dir(const fs::path& out, const DragConfig& cfg) {
  return out / cell_dir_name(cfg) / ("seed-" + std::to_string(cfg.seed));
}

RunRecord run_one(const std::shared_ptr<const generator::Generator>& gen, const ScenarioSpec& spec,
                  const DragConfig& cfg, const fs::path& dir, bool write_images) {
  RunRecord record;
  std::optional<drag::DragState> state;
  try {
    const auto sc = make_scenario(*gen, spec, cfg.seed);
    state.emplace(drag::init_session(gen, sc.latent, sc.pairs, cfg));
    record = drag::run_drag(*state);
  } catch (const Error& e) {
    record = state ? drag::summarize_session(*state) : RunRecord{};
    record.config = cfg;
    record.converged = false;
    record.failure = e.what();
  }
  if (dir.empty()) return record;

  ensure_dir(dir);
  drag::write_trace_jsonl(dir / "trace.jsonl", record);
  drag::write_json(dir / "summary.json", drag::summary_json(record));
  if (!record.trace.empty()) write_text(dir / "curves.csv", curves_csv(record));
  if (write_images && state) {
    const auto final_image = gen->render(state->latent);
    const auto points = drag::current_points(*state);
    generator::write_png(dir / "initial.png", state->initial_image);
    generator::write_png(dir / "final.png", final_image);
    generator::write_png(dir / "annotated.png",
                         drag::annotate(final_image, points, gen->config().feature_resolution));
  }
  return record;
}

std::vector<RunRecord> run_grid(const GridSpec& spec) {
  spec.validate();
  if (!spec.output_dir.empty()) ensure_dir(spec.output_dir);

  const auto gen = std::make_shared<const generator::Generator>(spec.scenario.generator);
  const auto configs = spec.expand();
  std::vector<RunRecord> records(configs.size());

  std::size_t workers = spec.workers ? spec.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, configs.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        const fs::path dir = spec.output_dir.empty() ? fs::path{} : run_dir(spec.output_dir, configs[i]);
        records[i] = run_one(gen, spec.scenario, configs[i], dir, spec.write_images);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        next = configs.size();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  if (!spec.output_dir.empty()) {
    write_summaries(spec.output_dir, records);
    drag::write_json(spec.output_dir / "grid.json", grid_spec_to_json(spec));
  }
  return records;
}

double ssim_per_time_e2(double ssim, double time_total) { return time_total > 0.0 ? 100.0 * ssim / time_total : 0.0; }

std::vector<CellSummary> summarize(const std::vector<RunRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::EmptyResults, "no run records to summarize");
  // Ordered like the grid: lr descending, Regular before component counts, layers ascending.
  using Key = std::tuple<double, std::optional<std::size_t>, std::size_t>;
  std::map<Key, std::vector<const RunRecord*>> cells;
  for (const auto& r : records) cells[{-r.config.learning_rate, r.config.n_pca, r.config.w_plus_layers}].push_back(&r);

  std::vector<CellSummary> out;
  for (const auto& [k, runs] : cells) {
    CellSummary c;
    c.learning_rate = -std::get<0>(k);
    c.n_pca = std::get<1>(k);
    c.layers = std::get<2>(k);
    c.n_seeds = runs.size();
    bool all_capped = true;
    for (const auto* r : runs) {
      c.iteration_total += static_cast<double>(r->iterations);
      c.time_total += r->t_total;
      c.ssim += r->ssim;
      c.n_converged += r->converged ? 1 : 0;
      c.n_failed += r->failure ? 1 : 0;
      all_capped = all_capped && !r->converged && r->iterations >= r->config.max_iterations;
    }
    const double n = static_cast<double>(c.n_seeds);
    c.iteration_total /= n;
    c.time_total /= n;
    c.ssim /= n;
    c.ssim_per_time = ssim_per_time_e2(c.ssim, c.time_total);
    c.not_converged = all_capped;
    out.push_back(c);
  }
  return out;
}

std::string format_iterations(const CellSummary& c) {
  if (c.not_converged) return fmt("%.0f", c.iteration_total) + " (✗)";
  return fmt("%.1f", c.iteration_total);
}

std::string summary_csv(const std::vector<CellSummary>& cells) {
  std::ostringstream os;
  os << "npca,layers,lr,iteration_total,time_total,ssim,ssim_per_time,converged\n";
  for (const auto& c : cells) {
    os << npca_label(c.n_pca) << ',' << c.layers << ',' << lr_text(c.learning_rate) << ','
       << fmt("%.4f", c.iteration_total) << ',' << fmt("%.6f", c.time_total) << ',' << fmt("%.6f", c.ssim) << ','
       << fmt("%.6f", c.ssim_per_time) << ',' << (c.not_converged ? "✗" : "yes") << '\n';
  }
  return os.str();
}

std::string summary_markdown(const std::vector<CellSummary>& cells) {
  std::ostringstream os;
  os << "| PCA | W+ layers | lr | Iterations | Time (s) | SSIM | SSIM/time (1e-2) | Converged seeds |\n"
     << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& c : cells) {
    os << "| " << npca_label(c.n_pca) << " | " << c.layers << " | " << lr_text(c.learning_rate) << " | "
       << format_iterations(c) << " | " << fmt("%.3f", c.time_total) << " | " << fmt("%.3f", c.ssim) << " | "
       << fmt("%.3f", c.ssim_per_time) << " | " << c.n_converged << "/" << c.n_seeds << " |\n";
  }
  return os.str();
}

std::string runs_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << "npca,layers,lr,seed,iterations,t_opt_total,t_track_total,t_total,ssim,ssim_per_time,converged,"
        "final_max_distance,failure\n";
  for (const auto& r : records) {
    std::string failure = r.failure.value_or("");
    std::replace(failure.begin(), failure.end(), ',', ';');
    std::replace(failure.begin(), failure.end(), '\n', ' ');
    os << drag::npca_label(r.config) << ',' << r.config.w_plus_layers << ',' << lr_text(r.config.learning_rate)
       << ',' << r.config.seed << ',' << r.iterations << ',' << fmt("%.6f", r.t_opt_total) << ','
       << fmt("%.6f", r.t_track_total) << ',' << fmt("%.6f", r.t_total) << ',' << fmt("%.6f", r.ssim) << ','
       << fmt("%.6f", r.ssim_per_time) << ',' << (r.converged ? "true" : "false") << ','
       << fmt("%.4f", r.final_max_distance) << ',' << failure << '\n';
  }
  return os.str();
}

void write_summaries(const fs::path& out, const std::vector<RunRecord>& records) {
  ensure_dir(out);
  const auto cells = summarize(records);
  write_text(out / "summary.csv", summary_csv(cells));
  write_text(out / "summary.md", summary_markdown(cells));
  write_text(out / "runs.csv", runs_csv(records));
}

std::vector<RunRecord> load_records(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "summary.json" &&
        e.path().parent_path().filename().string().starts_with("seed-")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) {
    try {
      out.push_back(drag::summary_from_json(drag::read_json(f)));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, f.string() + ": " + e.what());
    }
  }
  return out;
}

std::string curves_csv(const RunRecord& r, double alpha) {
  std::vector<double> loss, grad, time, dist;
  for (const auto& s : r.trace) {
    loss.push_back(s.motion_loss);
    grad.push_back(s.grad_magnitude);
    time.push_back(s.t_opt + s.t_track);
    dist.push_back(s.max_distance);
  }
  const auto loss_s = numerics::ema_smooth(loss, alpha);
  const auto grad_s = numerics::ema_smooth(grad, alpha);
  const auto time_s = numerics::ema_smooth(time, alpha);
  std::ostringstream os;
  os << "iteration,motion_loss,motion_loss_ema,grad_magnitude,grad_magnitude_ema,step_time,step_time_ema,"
        "max_distance\n";
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    os << r.trace[i].iteration << ',' << fmt("%.9g", loss[i]) << ',' << fmt("%.9g", loss_s[i]) << ','
       << fmt("%.9g", grad[i]) << ',' << fmt("%.9g", grad_s[i]) << ',' << fmt("%.9g", time[i]) << ','
       << fmt("%.9g", time_s[i]) << ',' << fmt("%.6g", dist[i]) << '\n';
  }
  return os.str();
}

std::vector<VarianceCurve> variance_report(const generator::GeneratorConfig& cfg,
                                           const std::vector<std::size_t>& layer_options, std::size_t n_samples) {
  if (n_samples < 2) throw Error(ErrorCode::BadConfig, "variance report needs at least 2 samples");
  const generator::Generator gen(cfg);
  std::vector<VarianceCurve> out;
  for (std::size_t m : layer_options) {
    if (m < 1 || m > cfg.n_layers) throw Error(ErrorCode::BadConfig, "layer count " + std::to_string(m) + " invalid");
    const auto basis = drag::fit_prefix_basis(gen, m, n_samples);
    VarianceCurve c;
    c.layers = m;
    c.ratio = basis.explained_variance_ratio;
    double cum = 0.0;
    for (double r : c.ratio) c.cumulative.push_back(cum += r);
    out.push_back(std::move(c));
  }
  return out;
}

std::string variance_csv(const std::vector<VarianceCurve>& curves) {
  std::ostringstream os;
  os << "layers,component,ratio,cumulative\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.ratio.size(); ++i) {
      os << c.layers << ',' << i << ',' << fmt("%.12g", c.ratio[i]) << ',' << fmt("%.12g", c.cumulative[i]) << '\n';
    }
  }
  return os.str();
}

json generator_config_to_json(const generator::GeneratorConfig& g) {
  return {{"seed", g.seed},
          {"n_layers", g.n_layers},
          {"latent_dim", g.latent_dim},
          {"blobs_per_layer", g.blobs_per_layer},
          {"channels", g.channels},
          {"height", g.height},
          {"width", g.width},
          {"feature_channels", g.feature_channels},
          {"feature_resolution", g.feature_resolution},
          {"layer_noise_eps", g.layer_noise_eps}};
}

generator::GeneratorConfig generator_config_from_json(const json& j, generator::GeneratorConfig g) {
  g.seed = get_or(j, "seed", g.seed);
  g.n_layers = get_or(j, "n_layers", g.n_layers);
  g.latent_dim = get_or(j, "latent_dim", g.latent_dim);
  g.blobs_per_layer = get_or(j, "blobs_per_layer", g.blobs_per_layer);
  g.channels = get_or(j, "channels", g.channels);
  g.height = get_or(j, "height", g.height);
  g.width = get_or(j, "width", g.width);
  g.feature_channels = get_or(j, "feature_channels", g.feature_channels);
  g.feature_resolution = get_or(j, "feature_resolution", g.feature_resolution);
  g.layer_noise_eps = get_or(j, "layer_noise_eps", g.layer_noise_eps);
  return g;
}

json grid_spec_to_json(const GridSpec& spec) {
  json npca = json::array();
  for (const auto& n : spec.n_pca_options) npca.push_back(n ? json(*n) : json("Regular"));
  json drag_base = drag::config_to_json(spec.base);
  for (const char* k : {"learning_rate", "n_pca", "w_plus_layers", "seed"}) drag_base.erase(k);
  json points = json::array();
  for (const auto& p : spec.scenario.points) points.push_back({p.handle.x, p.handle.y, p.target.x, p.target.y});
  return {{"learning_rates", spec.learning_rates},
          {"n_pca_options", npca},
          {"layer_options", spec.layer_options},
          {"seeds", spec.seeds},
          {"drag", drag_base},
          {"scenario",
           {{"generator", generator_config_to_json(spec.scenario.generator)},
            {"points", points},
            {"offset", spec.scenario.offset}}},
          {"output_dir", spec.output_dir.string()},
          {"workers", spec.workers},
          {"write_images", spec.write_images}};
}

GridSpec grid_spec_from_json(const json& j) {
  GridSpec s;
  try {
    if (!j.is_object()) throw Error(ErrorCode::BadConfig, "grid config must be a JSON object");
    s.learning_rates = get_or(j, "learning_rates", s.learning_rates);
    if (j.contains("n_pca_options")) {
      s.n_pca_options.clear();
      for (const auto& n : j.at("n_pca_options")) {
        s.n_pca_options.push_back(drag::config_from_json(json{{"n_pca", n}}).n_pca);
      }
    }
    s.layer_options = get_or(j, "layer_options", s.layer_options);
    s.seeds = get_or(j, "seeds", s.seeds);
    if (j.contains("drag")) s.base = drag::config_from_json(j.at("drag"), s.base);
    if (j.contains("scenario")) {
      const auto& sc = j.at("scenario");
      if (sc.contains("generator")) s.scenario.generator = generator_config_from_json(sc.at("generator"));
      s.scenario.offset = get_or(sc, "offset", s.scenario.offset);
      if (sc.contains("points")) {
        for (const auto& p : sc.at("points")) {
          const auto v = p.get<std::vector<double>>();
          if (v.size() != 4) throw Error(ErrorCode::BadConfig, "each point pair is [hx, hy, tx, ty]");
          s.scenario.points.push_back({{v[0], v[1]}, {v[2], v[3]}});
        }
      }
    }
    s.output_dir = get_or<std::string>(j, "output_dir", "");
    s.workers = get_or(j, "workers", s.workers);
    s.write_images = get_or(j, "write_images", s.write_images);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, e.what());
  }
  return s;
}

GridSpec load_grid_spec(const fs::path& path) { return grid_spec_from_json(drag::read_json(path)); }

}  // namespace latentdrag::harness
