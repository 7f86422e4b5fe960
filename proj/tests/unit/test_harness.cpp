#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "latentdrag/error.hpp"
#include "latentdrag/harness/harness.hpp"
#include "latentdrag/numerics/ema.hpp"

using namespace latentdrag;
using namespace latentdrag::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ld_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

RunRecord fake_run(std::optional<std::size_t> npca, std::size_t layers, double lr, std::uint64_t seed,
                   std::size_t iterations, double t_total, double ssim, bool converged) {
  RunRecord r;
  r.config.n_pca = npca;
  r.config.w_plus_layers = layers;
  r.config.learning_rate = lr;
  r.config.seed = seed;
  r.iterations = iterations;
  r.t_total = t_total;
  r.ssim = ssim;
  r.converged = converged;
  return r;
}

GridSpec small_grid() {
  GridSpec g;
  g.learning_rates = {0.05};
  g.n_pca_options = {std::nullopt, 64};
  g.layer_options = {3};
  g.seeds = {13};
  g.base.max_iterations = 40;
  return g;
}

generator::GeneratorConfig narrow_generator(double eps) {
  generator::GeneratorConfig g;
  g.latent_dim = 8;
  g.layer_noise_eps = eps;
  return g;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(GridSpec, PaperGridExpandsToCartesianProduct) {
  const GridSpec g;
  EXPECT_EQ(g.run_count(), 135u);
  const auto configs = g.expand();
  ASSERT_EQ(configs.size(), 135u);
  std::set<std::string> dirs;
  for (const auto& c : configs) {
    EXPECT_EQ(c.stopping_distance, 10.0);
    EXPECT_EQ(c.max_iterations, 150u);
    EXPECT_EQ(c.pca_samples, 1000u);
    dirs.insert(run_dir("out", c).string());
  }
  EXPECT_EQ(dirs.size(), 135u);
  EXPECT_EQ(cell_dir_name(configs.front()), "npca-Regular_layers-3_lr-0.1");
  EXPECT_EQ(cell_dir_name(configs.back()), "npca-512_layers-12_lr-0.002");
  EXPECT_NO_THROW(g.validate());
}

TEST(GridSpec, RejectsEmptyAxesAndBadCells) {
  GridSpec g;
  g.seeds.clear();
  EXPECT_THROW(g.validate(), Error);
  g = {};
  g.layer_options = {13};
  EXPECT_THROW(g.validate(), Error);
  g = {};
  g.n_pca_options = {std::size_t{577}};
  g.layer_options = {3};
  EXPECT_THROW(g.validate(), Error);
}

TEST(GridSpec, JsonRoundTrip) {
  GridSpec g = small_grid();
  g.scenario.points = {{{10, 12}, {30, 12}}};
  g.output_dir = "some/dir";
  g.workers = 2;
  const auto back = grid_spec_from_json(grid_spec_to_json(g));
  EXPECT_EQ(back.learning_rates, g.learning_rates);
  EXPECT_EQ(back.n_pca_options, g.n_pca_options);
  EXPECT_EQ(back.layer_options, g.layer_options);
  EXPECT_EQ(back.seeds, g.seeds);
  EXPECT_EQ(back.base, g.base);
  EXPECT_EQ(back.scenario.generator, g.scenario.generator);
  ASSERT_EQ(back.scenario.points.size(), 1u);
  EXPECT_EQ(back.scenario.points[0].target, (drag::Point{30, 12}));
  EXPECT_EQ(back.output_dir, g.output_dir);
  EXPECT_EQ(back.workers, 2u);

  EXPECT_THROW(grid_spec_from_json(drag::json{{"seeds", "all"}}), Error);
  EXPECT_THROW(grid_spec_from_json(drag::json{{"scenario", {{"points", {{1, 2, 3}}}}}}), Error);
  EXPECT_THROW(load_grid_spec(scratch_dir("missing") / "grid.json"), Error);
}

TEST(Summarize, ReproducesReferenceRatios) {
  // Seed means of 0.444 / 7.780 s and 0.470 / 44.652 s.
  const std::vector<RunRecord> recs{
      fake_run(std::nullopt, 3, 0.05, 13, 40, 7.0, 0.40, true),
      fake_run(std::nullopt, 3, 0.05, 42, 30, 8.0, 0.45, true),
      fake_run(std::nullopt, 3, 0.05, 999, 50, 8.34, 0.482, true),
      fake_run(std::nullopt, 3, 0.002, 13, 140, 44.652, 0.470, true),
  };
  const auto cells = summarize(recs);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].n_seeds, 3u);
  EXPECT_NEAR(cells[0].ssim, 0.444, 1e-12);
  EXPECT_NEAR(cells[0].time_total, 7.780, 1e-12);
  EXPECT_NEAR(cells[0].ssim_per_time, 5.710, 0.005 * 5.710);
  EXPECT_NEAR(cells[1].ssim_per_time, 1.054, 0.005 * 1.054);
  EXPECT_NEAR(cells[0].iteration_total, 40.0, 1e-12);
  EXPECT_FALSE(cells[0].not_converged);
}

TEST(Summarize, FlagsCellOnlyWhenEverySeedIsCapped) {
  std::vector<RunRecord> recs;
  for (std::uint64_t s : {13u, 42u, 999u}) recs.push_back(fake_run(64, 6, 0.002, s, 150, 1.0, 0.9, false));
  for (std::uint64_t s : {13u, 42u}) recs.push_back(fake_run(64, 3, 0.002, s, 150, 1.0, 0.9, false));
  recs.push_back(fake_run(64, 3, 0.002, 999, 90, 1.0, 0.9, true));
  const auto cells = summarize(recs);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].layers, 3u);
  EXPECT_FALSE(cells[0].not_converged);
  EXPECT_EQ(cells[0].n_converged, 1u);
  EXPECT_EQ(format_iterations(cells[0]), "130.0");
  EXPECT_TRUE(cells[1].not_converged);
  EXPECT_EQ(cells[1].iteration_total, 150.0);
  EXPECT_EQ(format_iterations(cells[1]), "150 (✗)");
  const auto csv = summary_csv(cells);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "npca,layers,lr,iteration_total,time_total,ssim,ssim_per_time,converged");
  EXPECT_NE(csv.find("64,6,0.002,150.0000"), std::string::npos);
}

TEST(Summarize, EmptyInputIsAnError) {
  try {
    summarize({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyResults);
  }
}

TEST(RunGrid, SingletonMatchesDirectRun) {
  GridSpec g = small_grid();
  g.n_pca_options = {64};
  const auto recs = run_grid(g);
  ASSERT_EQ(recs.size(), 1u);

  auto gen = std::make_shared<const generator::Generator>(g.scenario.generator);
  const auto sc = drag::canonical_scenario(*gen, 13);
  auto state = drag::init_session(gen, sc.latent, sc.pairs, g.expand()[0]);
  const auto direct = drag::run_drag(state);
  ASSERT_EQ(recs[0].trace.size(), direct.trace.size());
  for (std::size_t i = 0; i < direct.trace.size(); ++i) {
    EXPECT_EQ(recs[0].trace[i].motion_loss, direct.trace[i].motion_loss);
    EXPECT_EQ(recs[0].trace[i].max_distance, direct.trace[i].max_distance);
  }
  EXPECT_EQ(recs[0].ssim, direct.ssim);
  EXPECT_EQ(recs[0].converged, direct.converged);
}

TEST(RunGrid, RepeatedRunsAgreeApartFromTiming) {
  GridSpec g = small_grid();
  g.seeds = {13, 42};
  g.workers = 2;
  const auto a = run_grid(g);
  g.workers = 1;
  const auto b = run_grid(g);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].config, b[i].config);
    EXPECT_EQ(a[i].iterations, b[i].iterations);
    EXPECT_EQ(a[i].ssim, b[i].ssim);
    EXPECT_EQ(a[i].final_max_distance, b[i].final_max_distance);
  }
}

TEST(RunGrid, WritesArtifactsAndSummaries) {
  GridSpec g = small_grid();
  g.output_dir = scratch_dir("artifacts");
  const auto recs = run_grid(g);
  for (const auto& c : g.expand()) {
    const auto dir = run_dir(g.output_dir, c);
    for (const char* f : {"trace.jsonl", "summary.json", "initial.png", "final.png", "annotated.png", "curves.csv"}) {
      EXPECT_TRUE(fs::exists(dir / f)) << dir / f;
    }
  }
  for (const char* f : {"summary.csv", "summary.md", "runs.csv", "grid.json"}) EXPECT_TRUE(fs::exists(g.output_dir / f));

  const auto loaded = load_records(g.output_dir);
  ASSERT_EQ(loaded.size(), recs.size());
  EXPECT_EQ(summary_csv(summarize(loaded)), slurp(g.output_dir / "summary.csv"));

  // Trace lines equal the records, summary line last.
  const auto first = run_dir(g.output_dir, g.expand()[0]) / "trace.jsonl";
  std::ifstream in(first);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = drag::json::parse(line);
    if (j.contains("summary")) {
      EXPECT_EQ(j["summary"]["iterations"].get<std::size_t>(), recs[0].iterations);
    } else {
      EXPECT_EQ(drag::step_from_json(j).motion_loss, recs[0].trace[n++].motion_loss);
    }
  }
  EXPECT_EQ(n, recs[0].trace.size());
  fs::remove_all(g.output_dir);
}

TEST(RunGrid, CellFailureIsRecordedNotFatal) {
  GridSpec g = small_grid();
  g.n_pca_options = {std::nullopt};
  g.scenario.points = {{{-3, 5}, {20, 5}}};
  const auto recs = run_grid(g);
  ASSERT_EQ(recs.size(), 1u);
  ASSERT_TRUE(recs[0].failure);
  EXPECT_NE(recs[0].failure->find("OutOfBounds"), std::string::npos);
  EXPECT_FALSE(recs[0].converged);
}

TEST(RunGrid, UnwritableOutputIsReported) {
  const auto file = scratch_dir("blocker");
  { std::ofstream(file) << "x"; }
  GridSpec g = small_grid();
  g.output_dir = file / "inside";
  try {
    run_grid(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutputUnwritable);
  }
  fs::remove(file);
}

TEST(Curves, EmaColumnsFollowTheRecurrence) {
  GridSpec g = small_grid();
  g.n_pca_options = {64};
  const auto r = run_grid(g)[0];
  ASSERT_GT(r.trace.size(), 2u);
  std::istringstream in(curves_csv(r));
  std::string line;
  std::getline(in, line);
  double s = 0.0;
  for (std::size_t i = 0; std::getline(in, line); ++i) {
    std::vector<double> v;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) v.push_back(std::stod(cell));
    s = i == 0 ? r.trace[0].motion_loss : 0.99 * s + 0.01 * r.trace[i].motion_loss;
    EXPECT_NEAR(v[2], s, 1e-6 * std::max(1.0, s));
  }
}

TEST(VarianceReport, CumulativeCurveEndsAtOne) {
  const auto curves = variance_report(narrow_generator(0.1), {3, 12}, 300);
  ASSERT_EQ(curves.size(), 2u);
  for (const auto& c : curves) {
    for (std::size_t i = 1; i < c.cumulative.size(); ++i) EXPECT_GE(c.cumulative[i], c.cumulative[i - 1]);
    EXPECT_NEAR(c.cumulative.back(), 1.0, 1e-9);
  }
  EXPECT_EQ(curves[0].ratio.size(), 24u);
  const auto csv = variance_csv(curves);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layers,component,ratio,cumulative");
}

TEST(VarianceReport, BroadcastLatentsGiveLayerInvariantRatios) {
  const auto curves = variance_report(narrow_generator(0.0), {3, 6, 12}, 300);
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(c.ratio[i], curves[0].ratio[i], 1e-9) << c.layers << " " << i;
    for (std::size_t i = 8; i < c.ratio.size(); ++i) EXPECT_NEAR(c.ratio[i], 0.0, 1e-9);
  }
}

TEST(VarianceReport, TruncationCapturesRatioSum) {
  const generator::Generator gen(narrow_generator(0.1));
  const auto basis = drag::fit_prefix_basis(gen, 3, 300);
  // Brute-force residual energy of the samples outside the leading n components.
  numerics::Matrix samples(300, 24);
  for (std::size_t i = 0; i < 300; ++i) {
    const auto f = drag::flatten_prefix(gen.sample_latent(1'000'000 + i), 3);
    std::copy(f.begin(), f.end(), samples.row(i).begin());
  }
  for (std::size_t n : {1u, 4u, 10u}) {
    const auto t = basis.truncated(n);
    double resid = 0.0, total = 0.0;
    for (std::size_t i = 0; i < 300; ++i) {
      const auto back = numerics::pca_reconstruct(t, numerics::pca_project(t, samples.row(i)));
      for (std::size_t p = 0; p < 24; ++p) {
        resid += (samples(i, p) - back[p]) * (samples(i, p) - back[p]);
        total += (samples(i, p) - basis.mean[p]) * (samples(i, p) - basis.mean[p]);
      }
    }
    double captured = 0.0;
    for (std::size_t k = 0; k < n; ++k) captured += basis.explained_variance_ratio[k];
    EXPECT_NEAR(1.0 - resid / total, captured, 1e-9);
  }
}
