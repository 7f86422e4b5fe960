#include <pthread.h>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "latentdrag/align/align.hpp"
#include "latentdrag/drag/records.hpp"
#include "latentdrag/error.hpp"
#include "latentdrag/generator/raster_io.hpp"
#include "latentdrag/harness/harness.hpp"
#include "latentdrag/numerics/ssim.hpp"
#include "latentdrag/service/service.hpp"

namespace fs = std::filesystem;
using namespace latentdrag;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw Error(ErrorCode::BadConfig, "not a number: '" + s + "'");
  return v;
}

// "x1,y1:x2,y2" -> handle (x1, y1), target (x2, y2).
drag::PointPair parse_pair(const std::string& s) {
  const auto halves = split(s, ':');
  if (halves.size() != 2) throw Error(ErrorCode::BadConfig, "point pair must be x1,y1:x2,y2, got '" + s + "'");
  auto point = [&](const std::string& p) {
    const auto xy = split(p, ',');
    if (xy.size() != 2) throw Error(ErrorCode::BadConfig, "point must be x,y, got '" + p + "'");
    return drag::Point{parse_double(xy[0]), parse_double(xy[1])};
  };
  return {point(halves[0]), point(halves[1])};
}

std::optional<std::size_t> parse_npca(const std::string& s) {
  if (s == "Regular" || s == "regular" || s == "none") return std::nullopt;
  const double v = parse_double(s);
  if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v)))
    throw Error(ErrorCode::BadConfig, "npca must be Regular or a positive integer");
  return static_cast<std::size_t>(v);
}

generator::GeneratorConfig load_generator(const std::string& path, std::optional<std::uint64_t> seed) {
  generator::GeneratorConfig g;
  if (!path.empty()) g = harness::generator_config_from_json(drag::read_json(path));
  if (seed) g.seed = *seed;
  generator::validate(g);
  return g;
}

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw Error(ErrorCode::OutputUnwritable, path.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-space point dragging: engine, experiment grid, alignment and HTTP service"};
  app.require_subcommand(1);

  // grid
  auto* grid = app.add_subcommand("grid", "Experiment grid over lr x n_pca x layers x seeds");
  grid->require_subcommand(1);
  auto* grid_run = grid->add_subcommand("run", "Run every grid cell and write summaries");
  std::string grid_config, grid_out;
  std::size_t grid_workers = 0;
  bool no_images = false;
  grid_run->add_option("--config", grid_config, "Grid spec JSON (defaults to the full 135-run grid)");
  grid_run->add_option("--out", grid_out, "Output directory")->required();
  grid_run->add_option("--workers", grid_workers, "Worker threads (0: hardware concurrency)");
  grid_run->add_flag("--no-images", no_images, "Skip per-run PNGs");
  auto* grid_sum = grid->add_subcommand("summarize", "Rebuild summaries from a finished grid directory");
  std::string sum_dir;
  grid_sum->add_option("dir", sum_dir, "Grid output directory")->required();

  // variance-report
  auto* var = app.add_subcommand("variance-report", "Explained variance of the broadcast W+ prefix");
  std::string var_layers = "3,6,12", var_out, var_gen;
  std::size_t var_samples = 1000;
  std::optional<double> var_eps;
  var->add_option("--layers", var_layers, "Comma-separated prefix sizes");
  var->add_option("--samples", var_samples, "Sampled latents");
  var->add_option("--eps", var_eps, "Per-layer noise scale override");
  var->add_option("--generator", var_gen, "Generator config JSON");
  var->add_option("--out", var_out, "CSV path (stdout when omitted)");

  // drag run
  auto* drag_cmd = app.add_subcommand("drag", "Single drag session");
  drag_cmd->require_subcommand(1);
  auto* drag_run = drag_cmd->add_subcommand("run", "Drag until converged or capped");
  double d_lr = 0.05;
  std::string d_npca = "Regular", d_out, d_gen;
  std::size_t d_layers = 3, d_max_iter = 150;
  std::uint64_t d_seed = 42;
  std::vector<std::string> d_points;
  drag_run->add_option("--lr", d_lr, "Learning rate");
  drag_run->add_option("--npca", d_npca, "Regular or number of PCA components");
  drag_run->add_option("--layers", d_layers, "Trainable W+ layers");
  drag_run->add_option("--seed", d_seed, "Latent seed");
  drag_run->add_option("--max-iterations", d_max_iter, "Iteration cap");
  drag_run->add_option("--points", d_points, "Pairs x1,y1:x2,y2 in feature-grid units (default: canonical)");
  drag_run->add_option("--generator", d_gen, "Generator config JSON");
  drag_run->add_option("--out", d_out, "Directory for trace, summary and images");

  // align
  auto* align_cmd = app.add_subcommand("align", "Projection, component edits and cross-generator transfer");
  align_cmd->require_subcommand(1);
  std::string a_gen, a_gen_b, a_out = "align-out", a_target;
  std::uint64_t a_seed = 42, a_init_seed = 7, a_gen_b_seed = 1;
  std::size_t a_iters = 500, a_component = 0, a_begin = 0, a_end = 3, a_samples = 1000;
  double a_lr = 0.05, a_mag = 2.0, a_feat = 0.0;

  auto* a_project = align_cmd->add_subcommand("project", "Invert an image into the generator");
  a_project->add_option("--target", a_target, "PNG to invert (default: render of --seed)");
  a_project->add_option("--seed", a_seed, "Latent seed when no target is given");
  auto* a_edit = align_cmd->add_subcommand("edit", "Move a latent along one PCA component");
  a_edit->add_option("--seed", a_seed, "Latent seed");
  auto* a_transfer = align_cmd->add_subcommand("transfer", "Edit in generator A, project into generator B");
  a_transfer->add_option("--seed", a_seed, "Latent seed in generator A");
  a_transfer->add_option("--generator-b", a_gen_b, "Generator B config JSON");
  a_transfer->add_option("--generator-b-seed", a_gen_b_seed, "Generator B seed");
  for (auto* sub : {a_project, a_edit, a_transfer}) {
    sub->add_option("--generator", a_gen, "Generator config JSON");
    sub->add_option("--out", a_out, "Output directory");
  }
  for (auto* sub : {a_project, a_transfer}) {
    sub->add_option("--lr", a_lr, "Projection learning rate");
    sub->add_option("--iterations", a_iters, "Projection iterations");
    sub->add_option("--init-seed", a_init_seed, "Seed of the random initial latent");
  }
  a_project->add_option("--feature-weight", a_feat, "Weight of the feature-space term");
  for (auto* sub : {a_edit, a_transfer}) {
    sub->add_option("--component", a_component, "Component index");
    sub->add_option("--magnitude", a_mag, "Step along the component");
    sub->add_option("--layer-begin", a_begin, "First edited layer");
    sub->add_option("--layer-end", a_end, "One past the last edited layer");
    sub->add_option("--samples", a_samples, "Latents sampled to fit the basis");
  }

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP session API (env: LATENTDRAG_BIND, LATENTDRAG_SESSION_CAP, "
                                            "LATENTDRAG_FRAME_STRIDE)");
  std::string s_bind, s_gen;
  serve->add_option("--bind", s_bind, "host:port, overrides LATENTDRAG_BIND");
  serve->add_option("--generator", s_gen, "Default generator config JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*grid_run) {
      auto spec = grid_config.empty() ? harness::GridSpec{} : harness::load_grid_spec(grid_config);
      spec.output_dir = grid_out;
      if (grid_workers) spec.workers = grid_workers;
      if (no_images) spec.write_images = false;
      std::cerr << "running " << spec.run_count() << " drag runs into " << grid_out << "\n";
      const auto records = harness::run_grid(spec);
      std::cout << harness::summary_markdown(harness::summarize(records));
    } else if (*grid_sum) {
      const auto records = harness::load_records(sum_dir);
      harness::write_summaries(sum_dir, records);
      std::cout << harness::summary_markdown(harness::summarize(records));
    } else if (*var) {
      auto g = load_generator(var_gen, std::nullopt);
      if (var_eps) g.layer_noise_eps = *var_eps;
      std::vector<std::size_t> layers;
      for (const auto& s : split(var_layers, ',')) layers.push_back(static_cast<std::size_t>(parse_double(s)));
      const auto csv = harness::variance_csv(harness::variance_report(g, layers, var_samples));
      if (var_out.empty())
        std::cout << csv;
      else
        write_text(var_out, csv);
    } else if (*drag_run) {
      harness::ScenarioSpec scenario;
      scenario.generator = load_generator(d_gen, std::nullopt);
      for (const auto& p : d_points) scenario.points.push_back(parse_pair(p));
      drag::DragConfig cfg;
      cfg.learning_rate = d_lr;
      cfg.n_pca = parse_npca(d_npca);
      cfg.w_plus_layers = d_layers;
      cfg.seed = d_seed;
      cfg.max_iterations = d_max_iter;
      const auto gen = std::make_shared<const generator::Generator>(scenario.generator);
      const auto r = harness::run_one(gen, scenario, cfg, d_out.empty() ? fs::path{} : fs::path(d_out));
      std::cout << drag::summary_json(r).dump(2) << "\n";
      if (r.failure) return 2;
    } else if (*a_project) {
      const generator::Generator gen(load_generator(a_gen, std::nullopt));
      const auto target = a_target.empty() ? gen.render(gen.sample_latent(a_seed))
                                           : align::prepare_target(generator::read_png(a_target), gen);
      align::ProjectionConfig pc;
      pc.learning_rate = a_lr;
      pc.max_iterations = a_iters;
      pc.init_seed = a_init_seed;
      if (a_feat > 0.0) {
        if (!a_target.empty()) throw Error(ErrorCode::BadConfig, "--feature-weight needs a generated target");
        pc.feature_l2 = a_feat;
        pc.target_features = gen.features(gen.sample_latent(a_seed));
      }
      const auto r = align::project_image(target, gen, pc);
      const auto recon = gen.render(r.latent);
      fs::create_directories(a_out);
      generator::write_png(fs::path(a_out) / "target.png", target);
      generator::write_png(fs::path(a_out) / "projected.png", recon);
      std::string loss = "iteration,loss,best_loss\n";
      for (std::size_t i = 0; i < r.loss.size(); ++i)
        loss += std::to_string(i) + "," + std::to_string(r.loss[i]) + "," + std::to_string(r.best_loss_trace[i]) + "\n";
      write_text(fs::path(a_out) / "loss.csv", loss);
      std::cout << drag::json{{"best_loss", r.best_loss},
                              {"best_iteration", r.best_iteration},
                              {"mse", align::mse(recon, target)},
                              {"ssim", numerics::ssim(recon, target)}}
                       .dump(2)
                << "\n";
    } else if (*a_edit) {
      const generator::Generator gen(load_generator(a_gen, std::nullopt));
      const auto basis = align::fit_layer_basis(gen, a_begin, a_end, a_samples);
      const auto w = gen.sample_latent(a_seed);
      const auto edited = align::edit_along_component(w, basis, {a_component, a_mag, a_begin, a_end});
      const std::vector<generator::Image> panels{gen.render(w), gen.render(edited)};
      fs::create_directories(a_out);
      generator::write_png(fs::path(a_out) / "edit.png", generator::side_by_side(panels));
      std::cout << drag::json{{"component", a_component},
                              {"explained_variance_ratio", basis.explained_variance_ratio.at(a_component)},
                              {"mse", align::mse(panels[0], panels[1])}}
                       .dump(2)
                << "\n";
    } else if (*a_transfer) {
      const generator::Generator gen_a(load_generator(a_gen, std::nullopt));
      const generator::Generator gen_b(load_generator(a_gen_b, a_gen_b_seed));
      const auto basis = align::fit_layer_basis(gen_a, a_begin, a_end, a_samples);
      align::ProjectionConfig pc;
      pc.learning_rate = a_lr;
      pc.max_iterations = a_iters;
      pc.init_seed = a_init_seed;
      const auto r = align::transfer_edit(gen_a, gen_b, gen_a.sample_latent(a_seed), basis,
                                          {a_component, a_mag, a_begin, a_end}, pc);
      fs::create_directories(a_out);
      generator::write_png(fs::path(a_out) / "transfer.png", align::transfer_panel(r));
      std::cout << drag::json{{"best_loss", r.projection.best_loss},
                              {"mse", align::mse(r.image_b_projected, r.image_a_edited)},
                              {"ssim", numerics::ssim(r.image_b_projected, r.image_a_edited)}}
                       .dump(2)
                << "\n";
    } else if (*serve) {
      service::ServiceConfig cfg;
      cfg.generator = load_generator(s_gen, std::nullopt);
      cfg = service::ServiceConfig::from_env(cfg);
      if (!s_bind.empty()) {
        const auto colon = s_bind.rfind(':');
        if (colon == std::string::npos) throw Error(ErrorCode::BadConfig, "--bind must be host:port");
        cfg.host = s_bind.substr(0, colon);
        cfg.port = static_cast<int>(parse_double(s_bind.substr(colon + 1)));
      }
      // Signals are taken synchronously by a watcher so shutdown runs outside
      // a handler. Server threads inherit the mask.
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      service::Service svc(cfg);
      std::thread watcher([&] {
        int sig = 0;
        sigwait(&set, &sig);
        svc.stop();
      });
      std::cerr << "listening on " << cfg.host << ":" << cfg.port << "\n";
      const bool ok = svc.listen();
      if (!ok) std::cerr << "error: cannot listen on " << cfg.host << ":" << cfg.port << "\n";
      pthread_kill(watcher.native_handle(), SIGTERM);
      watcher.join();
      return ok ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
