#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcalab/datagen.hpp"
#include "mcalab/train.hpp"

namespace mcalab {

struct VariantSpec {
  std::string name;
  nlohmann::json mca_overrides;  // merged over the base MCA config
};

struct ExperimentGrid {
  std::vector<VariantSpec> variants;
  std::vector<double> noise_levels;
  std::vector<std::uint64_t> seeds;
  TrainConfig base_train;
  GeneratorConfig base_generator;

  void validate() const;
};

struct CellResult {
  std::string variant;
  double noise_level = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  double ind_acc1 = 0.0, ind_acc5 = 0.0;
  double ood_acc1 = 0.0, ood_acc5 = 0.0;
  double shortcut_index_ood = 0.0;
  double margin_rate_ood = 0.0;
  double final_cl_smoothed = 0.0;  // mean CL term over the trailing window
};

struct SummaryRow {
  std::string variant;
  double noise_level = 0.0;
  std::size_t n_seeds = 0;
  double ind_mean = 0.0, ind_std = 0.0;
  double ood_mean = 0.0, ood_std = 0.0;
  double shortcut_mean = 0.0;
  double margin_mean = 0.0;
  bool has_delta = false;
  double ood_paired_delta = 0.0;  // mean over seeds vs the alpha=beta=0 baseline
};

struct GridResult {
  std::vector<CellResult> cells;
  std::vector<SummaryRow> rows;
};

// Runs every (variant, noise, seed) cell; a failed run is recorded with its
// error and the grid continues. Datasets are generated once per
// (noise, seed) and reused across variants so comparisons are seed-paired.
GridResult run_grid(const ExperimentGrid& grid,
                    const std::optional<std::filesystem::path>& out_dir = std::nullopt);

nlohmann::json grid_summary_json(const GridResult& result);
std::string format_summary_table(const GridResult& result);

nlohmann::json experiment_grid_to_json(const ExperimentGrid& grid);
ExperimentGrid experiment_grid_from_json(const nlohmann::json& j);

// Standard ablation: {CL, +MCP, +MCR, +MCA} at the default noise, 5 seeds.
ExperimentGrid default_grid();

}  // namespace mcalab
