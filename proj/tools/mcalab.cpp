// Command-line front end: data generation, training, evaluation, gradient
// checks, embedding export and the variant-grid experiment.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mcalab/binfile.hpp"
#include "mcalab/config.hpp"
#include "mcalab/datagen.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/eval.hpp"
#include "mcalab/experiment.hpp"
#include "mcalab/gradcheck.hpp"
#include "mcalab/model.hpp"
#include "mcalab/objectives.hpp"
#include "mcalab/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mcalab::InvalidConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw mcalab::InvalidConfigError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

json build_config(const std::string& config_path, const std::vector<std::string>& sets) {
  json doc = json::object();
  if (!config_path.empty()) doc = load_json_file(config_path);
  for (const std::string& kv : sets) mcalab::apply_override(doc, kv);
  return doc;
}

std::uint32_t file_crc32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mcalab::Error("cannot open artifact for hashing: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return mcalab::crc32_bytes(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

// Every run leaves a manifest next to its artifacts: the effective config,
// the seed, and a CRC32 per produced file.
void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                    std::uint64_t seed, const std::vector<fs::path>& artifacts) {
  ordered_json m;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = config;
  m["artifacts"] = ordered_json::object();
  for (const fs::path& p : artifacts) {
    char hex[16];
    std::snprintf(hex, sizeof(hex), "%08x", file_crc32(p));
    m["artifacts"][p.filename().string()] = std::string("crc32:") + hex;
  }
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  out << m.dump(2) << '\n';
}

std::vector<fs::path> dir_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_gen_data(const std::string& config_path, const std::vector<std::string>& sets,
                 std::optional<std::uint64_t> seed, const std::string& out) {
  json doc = build_config(config_path, sets);
  if (seed) doc["seed"] = *seed;
  mcalab::GeneratorConfig cfg = mcalab::generator_config_from_json(doc);
  mcalab::DatasetBundle bundle = mcalab::generate(cfg);

  fs::create_directories(out);
  fs::path data_path = fs::path(out) / "dataset.mcalab";
  mcalab::serialize(bundle, data_path);

  mcalab::SplitAccuracy img = mcalab::oracle_image_only(bundle);
  mcalab::SplitAccuracy lat = mcalab::oracle_latent(bundle);
  std::printf("wrote %s (%zu train pairs, %zu/%zu eval cases)\n", data_path.string().c_str(),
              bundle.train.size(), bundle.ind_test.size(), bundle.ood_test.size());
  std::printf("oracle image-only  acc@1  ind=%.4f  ood=%.4f\n", img.ind, img.ood);
  std::printf("oracle latent      acc@1  ind=%.4f  ood=%.4f\n", lat.ind, lat.ood);

  write_manifest(out, "gen-data", mcalab::generator_config_to_json(cfg), cfg.seed, {data_path});
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::vector<std::string>& sets, std::optional<std::uint64_t> seed,
              const std::string& out) {
  json doc = build_config(config_path, sets);
  if (seed) doc["seed"] = *seed;
  mcalab::TrainConfig cfg = mcalab::train_config_from_json(doc);

  mcalab::DatasetBundle bundle = mcalab::deserialize(data_path);
  cfg.encoder.image_dim = bundle.config.image_dim;
  cfg.encoder.text_vocab = bundle.config.vocab;

  fs::create_directories(out);
  mcalab::TrainResult result = mcalab::run_training(bundle, cfg, fs::path(out));

  mcalab::RetrievalReport ind = mcalab::full_report(result.params, bundle.ind_test, "ind");
  mcalab::RetrievalReport ood = mcalab::full_report(result.params, bundle.ood_test, "ood");
  ordered_json report;
  for (const auto& r : {ind, ood}) {
    ordered_json rj;
    rj["accuracy_at_1"] = r.accuracy_at_1;
    rj["accuracy_at_5"] = r.accuracy_at_5;
    rj["n_queries"] = r.n_queries;
    rj["shortcut_index"] = r.shortcut_index;
    rj["composition_margin_rate"] = r.composition_margin_rate;
    report[r.split] = rj;
  }
  {
    std::ofstream rep(fs::path(out) / "report.json", std::ios::trunc);
    rep << report.dump(2) << '\n';
  }
  std::printf("ind acc@1=%.4f acc@5=%.4f | ood acc@1=%.4f acc@5=%.4f shortcut=%.4f margin=%.4f\n",
              ind.accuracy_at_1, ind.accuracy_at_5, ood.accuracy_at_1, ood.accuracy_at_5,
              ood.shortcut_index, ood.composition_margin_rate);

  write_manifest(out, "train", mcalab::train_config_to_json(cfg), cfg.seed, dir_files(out));
  return 0;
}

int cmd_eval(const std::string& data_path, const std::string& ckpt_path, const std::string& out) {
  mcalab::DatasetBundle bundle = mcalab::deserialize(data_path);
  auto [params, step] = mcalab::load_checkpoint(ckpt_path);

  ordered_json report;
  report["checkpoint_step"] = step;
  for (const auto* split : {&bundle.ind_test, &bundle.ood_test}) {
    std::string name = (split == &bundle.ind_test) ? "ind" : "ood";
    mcalab::RetrievalReport r = mcalab::full_report(params, *split, name);
    ordered_json rj;
    rj["accuracy_at_1"] = r.accuracy_at_1;
    rj["accuracy_at_5"] = r.accuracy_at_5;
    rj["n_queries"] = r.n_queries;
    rj["shortcut_index"] = r.shortcut_index;
    rj["composition_margin_rate"] = r.composition_margin_rate;
    report[name] = rj;
    std::printf("%s  acc@1=%.4f  acc@5=%.4f  shortcut=%.4f  margin=%.4f\n", name.c_str(),
                r.accuracy_at_1, r.accuracy_at_5, r.shortcut_index, r.composition_margin_rate);
  }

  if (!out.empty()) {
    fs::create_directories(out);
    fs::path rep_path = fs::path(out) / "report.json";
    std::ofstream rep(rep_path, std::ios::trunc);
    rep << report.dump(2) << '\n';
    rep.close();
    write_manifest(out, "eval", json{{"data", data_path}, {"checkpoint", ckpt_path}}, 0,
                   {rep_path});
  }
  return 0;
}

// A small full-pipeline gradient-check problem: tiny encoder + gated mixer,
// fixed 6-pair batch with composed, image->image and text->image pairs.
mcalab::GradCheckProblem full_loss_problem() {
  mcalab::EncoderConfig enc;
  enc.d_model = 8;
  enc.d_out = 8;
  enc.n_hidden_layers = 1;
  enc.image_dim = 6;
  enc.text_vocab = 4;

  mcalab::MCAConfig mca;
  mca.alpha = 0.5;
  mca.beta = 0.5;
  mca.tau = 0.2;  // gentler than the training tau, keeps FD well-conditioned

  mcalab::Rng data_rng(777);
  auto rand_image = [&]() {
    std::vector<double> v(enc.image_dim);
    for (double& x : v) x = data_rng.gaussian(0.0, 1.0);
    return v;
  };
  std::vector<mcalab::Pair> batch;
  for (int i = 0; i < 6; ++i) {
    mcalab::Pair p;
    p.query.image = rand_image();
    if (i % 3 != 1) p.query.token = static_cast<std::int32_t>(i % enc.text_vocab);
    if (i % 3 == 2) {
      p.positive_doc.token = static_cast<std::int32_t>((i + 1) % enc.text_vocab);
    }
    p.positive_doc.image = rand_image();
    batch.push_back(std::move(p));
  }

  mcalab::GradCheckProblem problem;
  problem.make_params = [enc, mca](std::uint64_t seed) {
    mcalab::EncoderParams ep = mcalab::init_encoder(enc, seed);
    mcalab::MixerParams mp = mcalab::init_mixer(mca.mixer, enc.d_out, mca.mfb_factor, seed + 1);
    std::vector<mcalab::NamedTensor> all = ep.params;
    for (auto& nt : mp.params) all.push_back(nt);
    return all;
  };
  problem.build_loss = [enc, mca, batch](mcalab::Tape& tape,
                                         std::vector<mcalab::NamedTensor>& params) {
    mcalab::EncoderParams ep;
    ep.config = enc;
    mcalab::MixerParams mp;
    mp.kind = mca.mixer;
    for (auto& nt : params) {
      if (nt.name.rfind("mixer_", 0) == 0)
        mp.params.push_back(nt);
      else
        ep.params.push_back(nt);
    }
    return mcalab::total_loss(tape, ep, mp, batch, mca);
  };
  return problem;
}

int cmd_grad_check(std::size_t n_seeds, double tol) {
  mcalab::GradCheckProblem problem = full_loss_problem();
  bool all_ok = true;
  for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
    mcalab::GradCheckReport report = mcalab::grad_check(problem, seed);
    std::printf("seed %llu: max_rel_error=%.3e %s\n", static_cast<unsigned long long>(seed),
                report.max_rel_error, report.ok(tol) ? "ok" : "FAIL");
    if (!report.ok(tol)) {
      all_ok = false;
      for (const auto& e : report.entries)
        if (e.max_rel_error >= tol)
          std::fprintf(stderr, "  %s: max_rel_error=%.3e\n", e.name.c_str(), e.max_rel_error);
    }
  }
  return all_ok ? 0 : 1;
}

int cmd_export_emb(const std::string& data_path, const std::string& ckpt_path,
                   const std::string& split, const std::string& out) {
  if (split != "ind" && split != "ood")
    throw mcalab::InvalidConfigError("--split must be 'ind' or 'ood', got '" + split + "'");
  mcalab::DatasetBundle bundle = mcalab::deserialize(data_path);
  auto [params, step] = mcalab::load_checkpoint(ckpt_path);
  const auto& cases = (split == "ind") ? bundle.ind_test : bundle.ood_test;

  fs::create_directories(out);
  fs::path emb_path = fs::path(out) / ("embeddings_" + split + ".mcalab");
  mcalab::export_embeddings(params, cases, emb_path);
  std::printf("wrote %s (%zu eval cases, checkpoint step %zu)\n", emb_path.string().c_str(),
              cases.size(), step);
  write_manifest(out, "export-emb",
                 json{{"data", data_path}, {"checkpoint", ckpt_path}, {"split", split}}, 0,
                 {emb_path});
  return 0;
}

int cmd_experiment(const std::string& config_path, const std::vector<std::string>& sets,
                   const std::string& out) {
  mcalab::ExperimentGrid grid;
  if (config_path.empty() && sets.empty()) {
    grid = mcalab::default_grid();
  } else {
    json doc = build_config(config_path, sets);
    grid = mcalab::experiment_grid_from_json(doc);
  }
  fs::create_directories(out);
  mcalab::GridResult result = mcalab::run_grid(grid, fs::path(out));
  std::fputs(mcalab::format_summary_table(result).c_str(), stdout);
  {
    std::ofstream g(fs::path(out) / "grid.json", std::ios::trunc);
    g << mcalab::experiment_grid_to_json(grid).dump(2) << '\n';
  }
  std::vector<fs::path> artifacts = {fs::path(out) / "summary.json", fs::path(out) / "grid.json"};
  write_manifest(out, "experiment", mcalab::experiment_grid_to_json(grid),
                 grid.seeds.empty() ? 0 : grid.seeds.front(), artifacts);
  for (const mcalab::CellResult& c : result.cells)
    if (c.failed)
      std::fprintf(stderr, "cell %s noise=%g seed=%llu failed: %s\n", c.variant.c_str(),
                   c.noise_level, static_cast<unsigned long long>(c.seed), c.error.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcalab: modality-composition training lab"};
  app.require_subcommand(1);

  std::string config_path, out, data_path, ckpt_path, split = "ood";
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::size_t gc_seeds = 3;
  double gc_tol = 1e-4;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "generator config JSON");
  gen->add_option("--set", sets, "override, e.g. --set image_noise_std=0.4");
  gen->add_option("--seed", seed, "generator seed override");
  gen->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train an encoder on a dataset");
  train->add_option("--data", data_path, "dataset file")->required();
  train->add_option("--config", config_path, "train config JSON");
  train->add_option("--set", sets, "override, e.g. --set mca.alpha=0");
  train->add_option("--seed", seed, "training seed override");
  train->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--data", data_path, "dataset file")->required();
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--out", out, "optional report directory");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full loss");
  gc->add_option("--seeds", gc_seeds, "number of seeds to check");
  gc->add_option("--tol", gc_tol, "max relative error tolerance");

  auto* ex = app.add_subcommand("export-emb", "dump eval-split embeddings");
  ex->add_option("--data", data_path, "dataset file")->required();
  ex->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ex->add_option("--split", split, "ind or ood");
  ex->add_option("--out", out, "output directory")->required();

  auto* exp = app.add_subcommand("experiment", "run the variant x noise x seed grid");
  exp->add_option("--config", config_path, "grid config JSON");
  exp->add_option("--set", sets, "override on the grid JSON, e.g. --set seeds=[1,2]");
  exp->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad arguments
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, sets, seed, out);
    if (train->parsed()) return cmd_train(data_path, config_path, sets, seed, out);
    if (ev->parsed()) return cmd_eval(data_path, ckpt_path, out);
    if (gc->parsed()) return cmd_grad_check(gc_seeds, gc_tol);
    if (ex->parsed()) return cmd_export_emb(data_path, ckpt_path, split, out);
    if (exp->parsed()) return cmd_experiment(config_path, sets, out);
  } catch (const mcalab::InvalidConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
