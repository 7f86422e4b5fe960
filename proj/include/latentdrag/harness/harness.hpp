#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latentdrag/drag/records.hpp"
#include "latentdrag/drag/scenario.hpp"

namespace latentdrag::harness {

using drag::DragConfig;
using drag::RunRecord;

inline constexpr double kReportEmaAlpha = 0.99;

struct ScenarioSpec {
  generator::GeneratorConfig generator;
  // Empty: the canonical single-blob drag for each seed.
  std::vector<drag::PointPair> points;
  double offset = 20.0;
};

struct GridSpec {
  std::vector<double> learning_rates{0.1, 0.05, 0.002};
  std::vector<std::optional<std::size_t>> n_pca_options{std::nullopt, 64, 128, 256, 512};
  std::vector<std::size_t> layer_options{3, 6, 12};
  std::vector<std::uint64_t> seeds{13, 42, 999};
  DragConfig base;  // everything except lr / n_pca / layers / seed
  ScenarioSpec scenario;
  std::filesystem::path output_dir;  // empty: keep results in memory only
  std::size_t workers = 0;           // 0: hardware concurrency
  bool write_images = true;

  std::size_t run_count() const noexcept {
    return learning_rates.size() * n_pca_options.size() * layer_options.size() * seeds.size();
  }
  // Configs in execution order: lr, then n_pca, then layers, then seed.
  std::vector<DragConfig> expand() const;
  void validate() const;
};

// Scenario for one seed.
drag::Scenario make_scenario(const generator::Generator& gen, const ScenarioSpec& spec, std::uint64_t seed);

// One drag run from a fresh session. Engine errors are recorded in `failure`.
RunRecord run_one(const std::shared_ptr<const generator::Generator>& gen, const ScenarioSpec& spec,
                  const DragConfig& cfg, const std::filesystem::path& run_dir = {}, bool write_images = true);

std::string cell_dir_name(const DragConfig& cfg);
std::filesystem::path run_dir(const std::filesystem::path& out, const DragConfig& cfg);

// Runs the full product; records are returned in GridSpec::expand() order.
// Writes per-run artifacts and summary.csv / summary.md / runs.csv when
// output_dir is set. Throws OutputUnwritable if the directory cannot be used.
std::vector<RunRecord> run_grid(const GridSpec& spec);

struct CellSummary {
  std::optional<std::size_t> n_pca;
  std::size_t layers = 0;
  double learning_rate = 0.0;
  double iteration_total = 0.0;  // seed mean
  double time_total = 0.0;       // seed mean, seconds
  double ssim = 0.0;             // seed mean
  double ssim_per_time = 0.0;    // ssim / time_total, in units of 1e-2
  bool not_converged = false;    // every seed hit the iteration cap
  std::size_t n_seeds = 0;
  std::size_t n_converged = 0;
  std::size_t n_failed = 0;
};

// Seed means per (n_pca, layers, lr) cell, ordered by lr descending, then
// Regular before component counts, then layers. Throws EmptyResults.
std::vector<CellSummary> summarize(const std::vector<RunRecord>& records);

double ssim_per_time_e2(double ssim, double time_total);
std::string npca_label(const std::optional<std::size_t>& n);
// "31.3", or "150 (✗)" for a flagged cell.
std::string format_iterations(const CellSummary& c);

std::string summary_csv(const std::vector<CellSummary>& cells);
std::string summary_markdown(const std::vector<CellSummary>& cells);
std::string runs_csv(const std::vector<RunRecord>& records);
void write_summaries(const std::filesystem::path& out, const std::vector<RunRecord>& records);

// Loads every */seed-*/summary.json below `dir`, sorted by path.
std::vector<RunRecord> load_records(const std::filesystem::path& dir);

// Raw and EMA-smoothed per-step series for plotting.
std::string curves_csv(const RunRecord& r, double alpha = kReportEmaAlpha);

struct VarianceCurve {
  std::size_t layers = 0;
  std::vector<double> ratio;
  std::vector<double> cumulative;
};

std::vector<VarianceCurve> variance_report(const generator::GeneratorConfig& gen,
                                           const std::vector<std::size_t>& layer_options,
                                           std::size_t n_samples = 1000);
std::string variance_csv(const std::vector<VarianceCurve>& curves);

// Grid config as JSON mirroring the GridSpec field names.
drag::json grid_spec_to_json(const GridSpec& spec);
GridSpec grid_spec_from_json(const drag::json& j);
GridSpec load_grid_spec(const std::filesystem::path& path);

drag::json generator_config_to_json(const generator::GeneratorConfig& g);
generator::GeneratorConfig generator_config_from_json(const drag::json& j, generator::GeneratorConfig base = {});

}  // namespace latentdrag::harness
