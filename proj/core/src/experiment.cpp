#include "mcalab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mcalab/config.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/eval.hpp"

namespace mcalab {

void ExperimentGrid::validate() const {
  if (variants.empty()) throw InvalidConfigError("grid needs at least one variant");
  if (seeds.empty()) throw InvalidConfigError("grid needs at least one seed");
  if (noise_levels.empty()) throw InvalidConfigError("grid needs at least one noise level");
}

namespace {

MCAConfig variant_mca(const TrainConfig& base, const VariantSpec& variant) {
  nlohmann::json j = mca_config_to_json(base.mca);
  for (const auto& [key, value] : variant.mca_overrides.items()) j[key] = value;
  return mca_config_from_json(j);
}

bool is_baseline(const MCAConfig& mca) { return mca.alpha == 0.0 && mca.beta == 0.0; }

double smoothed_tail_cl(const std::vector<StepRecord>& log) {
  if (log.empty()) return 0.0;
  std::size_t window = std::min<std::size_t>(200, log.size());
  double sum = 0.0;
  for (std::size_t i = log.size() - window; i < log.size(); ++i) sum += log[i].loss_cl;
  return sum / static_cast<double>(window);
}

std::string cell_dir_name(const std::string& variant, double noise, std::uint64_t seed) {
  std::ostringstream os;
  os << variant << "_noise" << noise << "_seed" << seed;
  return os.str();
}

}  // namespace

GridResult run_grid(const ExperimentGrid& grid,
                    const std::optional<std::filesystem::path>& out_dir) {
  grid.validate();
  GridResult result;

  for (double noise : grid.noise_levels) {
    for (std::uint64_t seed : grid.seeds) {
      GeneratorConfig gen = grid.base_generator;
      gen.image_noise_std = noise;
      gen.seed = seed;
      DatasetBundle dataset = generate(gen);

      for (const VariantSpec& variant : grid.variants) {
        CellResult cell;
        cell.variant = variant.name;
        cell.noise_level = noise;
        cell.seed = seed;
        try {
          TrainConfig cfg = grid.base_train;
          cfg.seed = seed;
          cfg.encoder.image_dim = gen.image_dim;
          cfg.encoder.text_vocab = gen.vocab;
          cfg.mca = variant_mca(grid.base_train, variant);

          std::optional<std::filesystem::path> cell_dir;
          if (out_dir)
            cell_dir = *out_dir / "cells" / cell_dir_name(variant.name, noise, seed);
          TrainResult run = run_training(dataset, cfg, cell_dir);

          RetrievalReport ind = evaluate(run.params, dataset.ind_test, "ind");
          RetrievalReport ood = evaluate(run.params, dataset.ood_test, "ood");
          cell.ind_acc1 = ind.accuracy_at_1;
          cell.ind_acc5 = ind.accuracy_at_5;
          cell.ood_acc1 = ood.accuracy_at_1;
          cell.ood_acc5 = ood.accuracy_at_5;
          cell.shortcut_index_ood = shortcut_index(run.params, dataset.ood_test, 8, seed);
          cell.margin_rate_ood = composition_margin_rate(run.params, dataset.ood_test);
          cell.final_cl_smoothed = smoothed_tail_cl(run.step_log);
        } catch (const std::exception& e) {
          cell.failed = true;
          cell.error = e.what();
        }
        result.cells.push_back(std::move(cell));
      }
    }
  }

  // Aggregate: mean +- std per (variant, noise), with seed-paired OOD deltas
  // against the alpha=beta=0 baseline at the same (noise, seed).
  std::string baseline_name;
  for (const VariantSpec& v : grid.variants)
    if (is_baseline(variant_mca(grid.base_train, v))) {
      baseline_name = v.name;
      break;
    }

  auto find_cell = [&](const std::string& variant, double noise,
                       std::uint64_t seed) -> const CellResult* {
    for (const CellResult& c : result.cells)
      if (c.variant == variant && c.noise_level == noise && c.seed == seed && !c.failed)
        return &c;
    return nullptr;
  };

  for (const VariantSpec& variant : grid.variants) {
    for (double noise : grid.noise_levels) {
      SummaryRow row;
      row.variant = variant.name;
      row.noise_level = noise;
      std::vector<double> inds, oods, shortcuts, margins, deltas;
      for (std::uint64_t seed : grid.seeds) {
        const CellResult* c = find_cell(variant.name, noise, seed);
        if (!c) continue;
        inds.push_back(c->ind_acc1);
        oods.push_back(c->ood_acc1);
        shortcuts.push_back(c->shortcut_index_ood);
        margins.push_back(c->margin_rate_ood);
        if (!baseline_name.empty()) {
          const CellResult* base = find_cell(baseline_name, noise, seed);
          if (base) deltas.push_back(c->ood_acc1 - base->ood_acc1);
        }
      }
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
      };
      auto stddev = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        double m = mean(v), s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
      };
      row.n_seeds = inds.size();
      row.ind_mean = mean(inds);
      row.ind_std = stddev(inds);
      row.ood_mean = mean(oods);
      row.ood_std = stddev(oods);
      row.shortcut_mean = mean(shortcuts);
      row.margin_mean = mean(margins);
      row.has_delta = !deltas.empty();
      row.ood_paired_delta = mean(deltas);
      result.rows.push_back(std::move(row));
    }
  }

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream out(*out_dir / "summary.json", std::ios::trunc);
    out << grid_summary_json(result).dump(2) << '\n';
  }
  return result;
}

nlohmann::json grid_summary_json(const GridResult& result) {
  nlohmann::ordered_json j;
  j["cells"] = nlohmann::json::array();
  for (const CellResult& c : result.cells) {
    nlohmann::ordered_json cj;
    cj["variant"] = c.variant;
    cj["noise_level"] = c.noise_level;
    cj["seed"] = c.seed;
    cj["failed"] = c.failed;
    if (c.failed) {
      cj["error"] = c.error;
    } else {
      cj["ind_acc1"] = c.ind_acc1;
      cj["ind_acc5"] = c.ind_acc5;
      cj["ood_acc1"] = c.ood_acc1;
      cj["ood_acc5"] = c.ood_acc5;
      cj["shortcut_index_ood"] = c.shortcut_index_ood;
      cj["margin_rate_ood"] = c.margin_rate_ood;
      cj["final_cl_smoothed"] = c.final_cl_smoothed;
    }
    j["cells"].push_back(cj);
  }
  j["summary"] = nlohmann::json::array();
  for (const SummaryRow& r : result.rows) {
    nlohmann::ordered_json rj;
    rj["variant"] = r.variant;
    rj["noise_level"] = r.noise_level;
    rj["n_seeds"] = r.n_seeds;
    rj["ind_acc1_mean"] = r.ind_mean;
    rj["ind_acc1_std"] = r.ind_std;
    rj["ood_acc1_mean"] = r.ood_mean;
    rj["ood_acc1_std"] = r.ood_std;
    rj["shortcut_index_mean"] = r.shortcut_mean;
    rj["margin_rate_mean"] = r.margin_mean;
    if (r.has_delta) rj["ood_paired_delta_vs_baseline"] = r.ood_paired_delta;
    j["summary"].push_back(rj);
  }
  return j;
}

std::string format_summary_table(const GridResult& result) {
  std::ostringstream os;
  os << "variant            noise   seeds  ind@1 (std)      ood@1 (std)      shortcut  margin  d_ood\n";
  char line[256];
  for (const SummaryRow& r : result.rows) {
    std::snprintf(line, sizeof(line),
                  "%-18s %-7.3g %-6zu %6.4f (%.4f)  %6.4f (%.4f)  %8.4f  %6.4f  %+.4f\n",
                  r.variant.c_str(), r.noise_level, r.n_seeds, r.ind_mean, r.ind_std, r.ood_mean,
                  r.ood_std, r.shortcut_mean, r.margin_mean,
                  r.has_delta ? r.ood_paired_delta : 0.0);
    os << line;
  }
  return os.str();
}

nlohmann::json experiment_grid_to_json(const ExperimentGrid& grid) {
  nlohmann::ordered_json j;
  j["variants"] = nlohmann::json::array();
  for (const VariantSpec& v : grid.variants) {
    nlohmann::ordered_json vj;
    vj["name"] = v.name;
    vj["mca_overrides"] = v.mca_overrides;
    j["variants"].push_back(vj);
  }
  j["noise_levels"] = grid.noise_levels;
  j["seeds"] = grid.seeds;
  j["train"] = train_config_to_json(grid.base_train);
  j["generator"] = generator_config_to_json(grid.base_generator);
  return j;
}

ExperimentGrid experiment_grid_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidConfigError("experiment grid: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "variants" && key != "noise_levels" && key != "seeds" && key != "train" &&
        key != "generator")
      throw InvalidConfigError("experiment grid: unknown key '" + key +
                               "' (valid keys: variants, noise_levels, seeds, train, generator)");
  }
  ExperimentGrid grid = default_grid();
  if (j.contains("variants")) {
    grid.variants.clear();
    for (const auto& vj : j.at("variants")) {
      VariantSpec v;
      v.name = vj.at("name").get<std::string>();
      if (vj.contains("mca_overrides")) v.mca_overrides = vj.at("mca_overrides");
      grid.variants.push_back(std::move(v));
    }
  }
  if (j.contains("noise_levels"))
    grid.noise_levels = j.at("noise_levels").get<std::vector<double>>();
  if (j.contains("seeds")) grid.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("train")) grid.base_train = train_config_from_json(j.at("train"));
  if (j.contains("generator")) grid.base_generator = generator_config_from_json(j.at("generator"));
  return grid;
}

ExperimentGrid default_grid() {
  ExperimentGrid grid;
  grid.variants = {
      {"cl", nlohmann::json{{"alpha", 0.0}, {"beta", 0.0}}},
      {"mcp_only", nlohmann::json{{"alpha", 0.01}, {"beta", 0.0}}},
      {"mcr_only", nlohmann::json{{"alpha", 0.0}, {"beta", 0.01}}},
      {"mca", nlohmann::json{{"alpha", 0.01}, {"beta", 0.01}}},
  };
  grid.noise_levels = {0.03};
  grid.seeds = {1, 2, 3, 4, 5};
  grid.base_train = TrainConfig{};
  grid.base_train.eval_every = grid.base_train.steps;  // probe only at the end
  grid.base_generator = GeneratorConfig{};
  return grid;
}

}  // namespace mcalab
