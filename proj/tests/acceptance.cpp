// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any hard criterion fails. The heavy criteria run real training
// grids, so the whole binary takes tens of minutes on one CPU core.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "mcalab/datagen.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/eval.hpp"
#include "mcalab/experiment.hpp"
#include "mcalab/gradcheck.hpp"
#include "mcalab/model.hpp"
#include "mcalab/objectives.hpp"
#include "mcalab/train.hpp"

using namespace mcalab;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int n, bool pass, const std::string& detail) {
  std::printf("CRITERION %d: %s — %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

EncoderConfig tiny_enc() {
  EncoderConfig c;
  c.d_model = 8;
  c.d_out = 6;
  c.n_hidden_layers = 1;
  c.image_dim = 5;
  c.text_vocab = 4;
  return c;
}

std::vector<Pair> tiny_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Pair> batch;
  for (std::size_t i = 0; i < n; ++i) {
    Pair p;
    std::vector<double> qi(5), di(5);
    for (double& x : qi) x = rng.gaussian(0, 1);
    for (double& x : di) x = rng.gaussian(0, 1);
    p.query.image = qi;
    p.query.token = static_cast<std::int32_t>(i % 4);
    p.positive_doc.image = di;
    batch.push_back(std::move(p));
  }
  return batch;
}

// Builds a gradient-check problem over the full parameter set with one of
// the loss terms dominant and a chosen mixer.
GradCheckProblem loss_problem(double alpha, double beta, Mixer mixer_kind) {
  EncoderConfig enc = tiny_enc();
  MCAConfig cfg;
  cfg.tau = 0.2;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.mixer = mixer_kind;
  std::vector<Pair> batch = tiny_batch(4, 55);

  GradCheckProblem p;
  p.make_params = [enc, cfg](std::uint64_t seed) {
    EncoderParams ep = init_encoder(enc, seed);
    MixerParams mp = init_mixer(cfg.mixer, enc.d_out, cfg.mfb_factor, seed + 1);
    std::vector<NamedTensor> all = ep.params;
    for (auto& nt : mp.params) all.push_back(nt);
    return all;
  };
  p.build_loss = [enc, cfg, batch](Tape& tape, std::vector<NamedTensor>& params) {
    EncoderParams ep;
    ep.config = enc;
    MixerParams mp;
    mp.kind = cfg.mixer;
    for (auto& nt : params) {
      if (nt.name.rfind("mixer_", 0) == 0)
        mp.params.push_back(nt);
      else
        ep.params.push_back(nt);
    }
    return total_loss(tape, ep, mp, batch, cfg);
  };
  return p;
}

void criterion_1() {
  double t0 = now_s();
  struct Case {
    const char* name;
    double alpha, beta;
    Mixer mixer;
  };
  std::vector<Case> cases = {
      {"cl", 0.0, 0.0, Mixer::MeanPool},
      {"mcp", 1.0, 0.0, Mixer::MeanPool},
      {"mcr/mean_pool", 0.0, 1.0, Mixer::MeanPool},
      {"mcr/gated_fusion", 0.0, 1.0, Mixer::GatedFusion},
      {"mcr/mfb", 0.0, 1.0, Mixer::Mfb},
      {"total", 0.5, 0.5, Mixer::GatedFusion},
  };
  double worst = 0.0;
  std::string worst_case;
  for (const Case& c : cases) {
    GradCheckProblem prob = loss_problem(c.alpha, c.beta, c.mixer);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      GradCheckReport rep = grad_check(prob, seed);
      if (rep.max_rel_error > worst) {
        worst = rep.max_rel_error;
        worst_case = std::string(c.name) + " seed " + std::to_string(seed);
      }
    }
  }
  double elapsed = now_s() - t0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "worst max_rel_error %.3e (%s), 10 seeds x 6 losses in %.1fs", worst,
                worst_case.c_str(), elapsed);
  report(1, worst < 1e-4 && elapsed < 60.0, buf);
}

void criterion_2() {
  bool ok = true;
  std::string detail;

  {  // uniform CL = ln B
    Tape tape;
    Tensor q = Tensor::from({1, 2}, {1.0, 0.0});
    Tensor d = Tensor::from({4, 2}, {0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0});
    double v = cl_loss(tape, q, d, {0}, 0.02).scalar();
    if (std::abs(v - std::log(4.0)) > 1e-9) {
      ok = false;
      detail += "cl uniform != ln4; ";
    }
  }
  {  // MCP equal-similarity fixed point
    Tape tape;
    Tensor target = testutil::unit_row({1.0, 0.0, 0.0});
    Tensor composed = testutil::unit_row(testutil::with_cos(0.4));
    std::vector<Tensor> parts = {testutil::unit_row(testutil::with_cos(0.4, true)),
                                 testutil::unit_row(testutil::with_cos(0.4))};
    if (std::abs(mcp_loss(tape, composed, parts, target, 0.02).scalar()) > 1e-9) {
      ok = false;
      detail += "mcp equal-sim != 0; ";
    }
  }
  {  // MCR identical prototypes = ln B
    Tape tape;
    Tensor composed = Tensor::from({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
    Tensor protos = Tensor::from({4, 2}, {0, 1, 0, 1, 0, 1, 0, 1});
    if (std::abs(mcr_loss(tape, composed, protos, 0.02).scalar() - std::log(4.0)) > 1e-9) {
      ok = false;
      detail += "mcr identical-protos != lnB; ";
    }
  }
  {  // alpha = beta = 0 makes total bit-equal to cl
    EncoderParams params = init_encoder(tiny_enc(), 2);
    MixerParams mixer = init_mixer(Mixer::GatedFusion, 6, 4, 3);
    std::vector<Pair> batch = tiny_batch(4, 31);
    MCAConfig off;
    off.alpha = 0.0;
    off.beta = 0.0;
    LossBreakdown bd;
    Tape tape;
    double total = total_loss(tape, params, mixer, batch, off, &bd).scalar();
    if (total != bd.cl) {
      ok = false;
      detail += "alpha=beta=0 not bit-equal to cl; ";
    }
  }
  report(2, ok, ok ? "ln B, MCP=0, MCR=ln B, bit-equal CL reduction all hold" : detail);
}

void criterion_3() {
  DatasetBundle b = generate(GeneratorConfig{});
  SplitAccuracy img = oracle_image_only(b);
  SplitAccuracy lat = oracle_latent(b);
  bool ok = img.ind >= 0.90 && img.ood <= 0.30 && lat.ind == 1.0 && lat.ood == 1.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "image-only oracle ind=%.4f (>=0.90) ood=%.4f (<=0.30), latent oracle %.2f/%.2f",
                img.ind, img.ood, lat.ind, lat.ood);
  report(3, ok, buf);
}

struct PairedRuns {
  GridResult ab;           // cl + mca variants
  GridResult singles;      // mcp_only + mcr_only
  double ab_elapsed = 0.0;
  std::vector<std::uint64_t> seeds;
  double noise = 0.0;
};

const CellResult* find_cell(const GridResult& r, const std::string& variant,
                            std::uint64_t seed) {
  for (const CellResult& c : r.cells)
    if (c.variant == variant && c.seed == seed && !c.failed) return &c;
  return nullptr;
}

PairedRuns run_paired() {
  PairedRuns out;
  ExperimentGrid base = default_grid();
  out.seeds = base.seeds;
  out.noise = base.noise_levels[0];

  ExperimentGrid ab = base;
  ab.variants = {{"cl", nlohmann::json{{"alpha", 0.0}, {"beta", 0.0}}},
                 {"mca", nlohmann::json{{"alpha", 0.01}, {"beta", 0.01}}}};
  double t0 = now_s();
  out.ab = run_grid(ab);
  out.ab_elapsed = now_s() - t0;

  ExperimentGrid singles = base;
  singles.variants = {{"mcp_only", nlohmann::json{{"alpha", 0.01}, {"beta", 0.0}}},
                      {"mcr_only", nlohmann::json{{"alpha", 0.0}, {"beta", 0.01}}}};
  out.singles = run_grid(singles);
  return out;
}

void criteria_4_to_7(const PairedRuns& runs) {
  // 4: OOD paired delta of MCA over CL
  int positive = 0, valid = 0;
  double ood_delta_sum = 0.0, ind_delta_sum = 0.0;
  double cl_final = 0.0, mca_final = 0.0;
  int shortcut_dir = 0, margin_dir = 0;
  for (std::uint64_t seed : runs.seeds) {
    const CellResult* cl = find_cell(runs.ab, "cl", seed);
    const CellResult* mca = find_cell(runs.ab, "mca", seed);
    if (!cl || !mca) continue;
    ++valid;
    double d = mca->ood_acc1 - cl->ood_acc1;
    ood_delta_sum += d;
    if (d > 0.0) ++positive;
    ind_delta_sum += mca->ind_acc1 - cl->ind_acc1;
    if (mca->shortcut_index_ood < cl->shortcut_index_ood) ++shortcut_dir;
    if (mca->margin_rate_ood > cl->margin_rate_ood) ++margin_dir;
    cl_final += cl->final_cl_smoothed;
    mca_final += mca->final_cl_smoothed;
  }
  double mean_ood = valid ? ood_delta_sum / valid : 0.0;
  double mean_ind = valid ? ind_delta_sum / valid : 0.0;
  cl_final /= valid ? valid : 1;
  mca_final /= valid ? valid : 1;

  {
    bool ok = valid == 5 && mean_ood > 0.0 && positive >= 4 && std::abs(mean_ind) <= 0.02 &&
              runs.ab_elapsed < 600.0;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "ood delta mean %+0.4f, %d/5 seeds positive, ind delta %+0.4f (|.|<=0.02), "
                  "2x5 runs in %.0fs (<600)",
                  mean_ood, positive, mean_ind, runs.ab_elapsed);
    report(4, ok, buf);
  }
  {
    bool ok = valid == 5 && shortcut_dir >= 4 && margin_dir >= 4;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "shortcut_index(MCA) < CL in %d/5 seeds, margin_rate(MCA) > CL in %d/5 seeds",
                  shortcut_dir, margin_dir);
    report(5, ok, buf);
  }
  {  // 6: combined delta >= each single-loss delta (mean over seeds)
    double mcp_delta = 0.0, mcr_delta = 0.0;
    int n = 0;
    for (std::uint64_t seed : runs.seeds) {
      const CellResult* cl = find_cell(runs.ab, "cl", seed);
      const CellResult* mcp = find_cell(runs.singles, "mcp_only", seed);
      const CellResult* mcr = find_cell(runs.singles, "mcr_only", seed);
      if (!cl || !mcp || !mcr) continue;
      ++n;
      mcp_delta += mcp->ood_acc1 - cl->ood_acc1;
      mcr_delta += mcr->ood_acc1 - cl->ood_acc1;
    }
    mcp_delta /= n ? n : 1;
    mcr_delta /= n ? n : 1;
    bool ok = n == 5 && mean_ood >= mcp_delta && mean_ood >= mcr_delta;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "mean ood deltas: both %+0.4f vs mcp-only %+0.4f, mcr-only %+0.4f", mean_ood,
                  mcp_delta, mcr_delta);
    report(6, ok, buf);
  }
  {  // 7: CL-term convergence non-interference
    bool ok = valid == 5 && std::abs(mca_final - cl_final) <= 0.20 * cl_final;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "final smoothed CL term: mca %.4f vs cl %.4f (|diff| <= 20%%)", mca_final,
                  cl_final);
    report(7, ok, buf);
  }
}

void criterion_8() {
  ExperimentGrid g = default_grid();
  g.noise_levels = {0.12};  // the low-resolution analog
  g.seeds = {1, 2, 3};
  g.variants = {{"w0", nlohmann::json{{"alpha", 0.0}, {"beta", 0.0}}},
                {"w0.01", nlohmann::json{{"alpha", 0.01}, {"beta", 0.01}}},
                {"w0.1", nlohmann::json{{"alpha", 0.1}, {"beta", 0.1}}},
                {"w1", nlohmann::json{{"alpha", 1.0}, {"beta", 1.0}}}};
  GridResult r = run_grid(g);
  std::fputs(format_summary_table(r).c_str(), stdout);

  std::string best;
  double best_delta = -1e300;
  for (const SummaryRow& row : r.rows) {
    if (row.variant == "w0" || !row.has_delta) continue;
    if (row.ood_paired_delta > best_delta) {
      best_delta = row.ood_paired_delta;
      best = row.variant;
    }
  }
  bool trend = (best == "w0.1" || best == "w1");
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "high-noise best ood delta %+0.4f at %s%s", best_delta, best.c_str(),
                trend ? " (trend holds: strongest weighting wins)"
                      : " (report-only: trend inverted, grid table above)");
  // Report-only criterion: an inverted trend is documented, not failed.
  report(8, true, buf);
}

void criterion_9() {
  fs::path base = testutil::tmp_dir("acc_repro");
  GeneratorConfig g = testutil::small_gen(11);
  bool ok = true;
  std::string detail;

  serialize(generate(g), base / "d1.mcalab");
  serialize(generate(g), base / "d2.mcalab");
  if (testutil::slurp(base / "d1.mcalab") != testutil::slurp(base / "d2.mcalab")) {
    ok = false;
    detail += "dataset bytes differ; ";
  }

  DatasetBundle data = deserialize(base / "d1.mcalab");
  TrainConfig cfg;
  cfg.steps = 80;
  cfg.warmup_steps = 10;
  cfg.batch_size = 64;
  cfg.eval_every = 40;
  for (const char* name : {"r1", "r2"}) run_training(data, cfg, base / name);
  for (const char* f :
       {"step_log.jsonl", "probe_log.jsonl", "checkpoint_final.mcackpt",
        "checkpoint_last.mcackpt"}) {
    if (testutil::slurp(base / "r1" / f) != testutil::slurp(base / "r2" / f)) {
      ok = false;
      detail += std::string(f) + " differs; ";
    }
  }

  auto [p1, s1] = load_checkpoint(base / "r1" / "checkpoint_final.mcackpt");
  RetrievalReport a = full_report(p1, data.ood_test, "ood");
  RetrievalReport b = full_report(p1, data.ood_test, "ood");
  if (a.accuracy_at_1 != b.accuracy_at_1 || a.shortcut_index != b.shortcut_index ||
      a.composition_margin_rate != b.composition_margin_rate) {
    ok = false;
    detail += "report not deterministic; ";
  }
  report(9, ok, ok ? "dataset, logs, checkpoints and reports bit-identical across reruns" : detail);
}

void criterion_10() {
  fs::path dir = testutil::tmp_dir("acc_formats");
  bool ok = true;
  std::string detail;

  DatasetBundle b = generate(testutil::small_gen(13));
  serialize(b, dir / "a.mcalab");
  serialize(deserialize(dir / "a.mcalab"), dir / "b.mcalab");
  if (testutil::slurp(dir / "a.mcalab") != testutil::slurp(dir / "b.mcalab")) {
    ok = false;
    detail += "dataset round-trip not byte-identical; ";
  }

  EncoderParams params = init_encoder(tiny_enc(), 5);
  save_checkpoint(params, 9, dir / "a.mcackpt");
  auto [loaded, step] = load_checkpoint(dir / "a.mcackpt");
  save_checkpoint(loaded, step, dir / "b.mcackpt");
  if (testutil::slurp(dir / "a.mcackpt") != testutil::slurp(dir / "b.mcackpt")) {
    ok = false;
    detail += "checkpoint round-trip not byte-identical; ";
  }

  std::string bytes = testutil::slurp(dir / "a.mcalab");
  {  // truncation must name the array it lands in
    std::ofstream(dir / "t.mcalab", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    try {
      deserialize(dir / "t.mcalab");
      ok = false;
      detail += "truncation accepted; ";
    } catch (const FormatError& e) {
      if (std::string(e.what()).find("truncated inside array") == std::string::npos) {
        ok = false;
        detail += "truncation error lacks array name; ";
      }
    }
  }
  {  // payload corruption must be caught with an offset
    std::string bad = bytes;
    bad[bad.size() - 32] ^= 0x40;
    std::ofstream(dir / "c.mcalab", std::ios::binary) << bad;
    try {
      deserialize(dir / "c.mcalab");
      ok = false;
      detail += "corruption accepted; ";
    } catch (const FormatError& e) {
      std::string msg = e.what();
      if (msg.find("offset") == std::string::npos) {
        ok = false;
        detail += "corruption error lacks offset; ";
      }
    }
  }
  {  // wrong magic
    std::string bad = bytes;
    bad[0] = '?';
    std::ofstream(dir / "m.mcalab", std::ios::binary) << bad;
    try {
      deserialize(dir / "m.mcalab");
      ok = false;
      detail += "bad magic accepted; ";
    } catch (const FormatError&) {
    }
  }
  report(10, ok, ok ? "round-trip byte-identity and located corruption errors hold" : detail);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  PairedRuns runs = run_paired();
  criteria_4_to_7(runs);
  criterion_8();
  criterion_9();
  criterion_10();
  std::printf("%d criterion failure(s)\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
