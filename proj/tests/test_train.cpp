#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "mcalab/datagen.hpp"
#include "mcalab/errors.hpp"
#include "mcalab/model.hpp"
#include "mcalab/train.hpp"

using namespace mcalab;
namespace fs = std::filesystem;

namespace {

TrainConfig quick_config(std::size_t steps = 60) {
  TrainConfig c;
  c.steps = steps;
  c.warmup_steps = steps / 5;
  c.batch_size = 64;
  c.eval_every = steps;  // probe only at the end
  return c;
}

}  // namespace

TEST_CASE("lr schedule") {
  TrainConfig c;
  c.steps = 2000;
  c.warmup_steps = 200;
  c.peak_learning_rate = 1e-3;
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(200, c) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(2000, c) == 0.0);
  CHECK(lr_at(100, c) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_at(1100, c) == doctest::Approx(5e-4).epsilon(1e-12));
}

TEST_CASE("batch sampler: determinism and epoch coverage") {
  BatchSampler a(10, 3, 5), b(10, 3, 5);
  for (int i = 0; i < 20; ++i) CHECK(a.next() == b.next());

  BatchSampler s(12, 4, 9);
  std::set<std::size_t> seen;
  for (int i = 0; i < 3; ++i)
    for (std::size_t idx : s.next()) {
      CHECK(seen.insert(idx).second);  // within-epoch: no repeats
      CHECK(idx < 12);
    }
  CHECK(seen.size() == 12);

  CHECK_THROWS_AS(BatchSampler(4, 8, 1), InvalidConfigError);
}

TEST_CASE("adamw closed forms") {
  {  // zero gradients, zero weight decay -> fixed point
    AdamW opt(0.9, 0.999, 1e-8);
    std::vector<NamedTensor> params = {{"w", Tensor::from({1, 2}, {1.5, -2.5}, true)}};
    params[0].t.ensure_grad();
    opt.step(params, 1e-2, 0.0);
    CHECK(params[0].t.value()[0] == 1.5);
    CHECK(params[0].t.value()[1] == -2.5);
  }
  {  // decoupled decay: zero grads shrink by (1 - lr wd) per step
    AdamW opt(0.9, 0.999, 1e-8);
    std::vector<NamedTensor> params = {{"w", Tensor::from({1, 1}, {2.0}, true)}};
    params[0].t.ensure_grad();
    opt.step(params, 0.1, 0.5);
    CHECK(params[0].t.value()[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
    opt.step(params, 0.1, 0.5);
    CHECK(params[0].t.value()[0] ==
          doctest::Approx(2.0 * (1.0 - 0.05) * (1.0 - 0.05)).epsilon(1e-12));
  }
  {  // hand-computed bias-corrected sequence, g = 1 both steps
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
    AdamW opt(b1, b2, eps);
    std::vector<NamedTensor> params = {{"w", Tensor::from({1, 1}, {1.0}, true)}};
    params[0].t.ensure_grad();
    params[0].t.grad()[0] = 1.0;
    opt.step(params, lr, 0.0);
    // step 1: m=0.1, v=0.001; m_hat=1, v_hat=1 -> x -= lr * 1/(1+eps)
    double x = 1.0 - lr * 1.0 / (1.0 + eps);
    CHECK(params[0].t.value()[0] == doctest::Approx(x).epsilon(1e-12));
    params[0].t.grad()[0] = 1.0;
    opt.step(params, lr, 0.0);
    double m2 = b1 * (1 - b1) + (1 - b1);          // = 0.19
    double v2 = b2 * (1 - b2) + (1 - b2);          // = 0.001999
    double mh = m2 / (1 - b1 * b1);                // bias-corrected
    double vh = v2 / (1 - b2 * b2);
    x -= lr * mh / (std::sqrt(vh) + eps);
    CHECK(params[0].t.value()[0] == doctest::Approx(x).epsilon(1e-10));
  }
  {  // non-finite gradient names the parameter
    AdamW opt(0.9, 0.999, 1e-8);
    std::vector<NamedTensor> params = {{"spiky", Tensor::from({1, 1}, {1.0}, true)}};
    params[0].t.ensure_grad();
    params[0].t.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    try {
      opt.step(params, 0.1, 0.0);
      FAIL("expected TrainingDivergenceError");
    } catch (const TrainingDivergenceError& e) {
      CHECK(std::string(e.what()).find("spiky") != std::string::npos);
    }
  }
}

TEST_CASE("config validation") {
  TrainConfig c = quick_config();
  c.warmup_steps = c.steps + 1;
  CHECK_THROWS_AS(c.validate(), InvalidConfigError);
  c = quick_config();
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), InvalidConfigError);
}

TEST_CASE("training determinism: bit-identical logs and checkpoints") {
  DatasetBundle data = generate(testutil::small_gen(2));
  TrainConfig cfg = quick_config();
  fs::path d1 = testutil::tmp_dir("train_rep1");
  fs::path d2 = testutil::tmp_dir("train_rep2");
  TrainResult r1 = run_training(data, cfg, d1);
  TrainResult r2 = run_training(data, cfg, d2);

  REQUIRE(r1.step_log.size() == r2.step_log.size());
  for (std::size_t i = 0; i < r1.step_log.size(); ++i) {
    CHECK(r1.step_log[i].loss_total == r2.step_log[i].loss_total);  // bitwise
    CHECK(r1.step_log[i].loss_cl == r2.step_log[i].loss_cl);
  }
  CHECK(testutil::slurp(d1 / "step_log.jsonl") == testutil::slurp(d2 / "step_log.jsonl"));
  CHECK(testutil::slurp(d1 / "probe_log.jsonl") == testutil::slurp(d2 / "probe_log.jsonl"));
  CHECK(testutil::slurp(d1 / "checkpoint_final.mcackpt") ==
        testutil::slurp(d2 / "checkpoint_final.mcackpt"));

  auto [params, step] = load_checkpoint(d1 / "checkpoint_final.mcackpt");
  CHECK(step == cfg.steps);
  auto [last, last_step] = load_checkpoint(d1 / "checkpoint_last.mcackpt");
  CHECK(last_step <= cfg.steps);
}

TEST_CASE("initial CL loss near ln(batch) at tau 1") {
  DatasetBundle data = generate(testutil::small_gen(3));
  TrainConfig cfg = quick_config(2);
  cfg.warmup_steps = 1;
  cfg.batch_size = 128;
  cfg.mca.tau = 1.0;
  TrainResult r = run_training(data, cfg);
  double expected = std::log(static_cast<double>(cfg.batch_size));
  // A freshly initialized encoder is not perfectly isotropic (nearby images map
  // to nearby embeddings), so the first-step CL sits a bit below ln(B).
  CHECK(std::abs(r.step_log[0].loss_cl - expected) <= 0.20 * expected);
}

TEST_CASE("fully unimodal dataset: MCP and MCR are zero every step") {
  GeneratorConfig g = testutil::small_gen(4);
  g.uni_fraction = 1.0;
  DatasetBundle data = generate(g);
  for (const Pair& p : data.train) CHECK_FALSE(p.query.is_composed());
  TrainConfig cfg = quick_config(20);
  TrainResult r = run_training(data, cfg);
  for (const StepRecord& s : r.step_log) {
    CHECK(s.loss_mcp == 0.0);
    CHECK(s.loss_mcr == 0.0);
    CHECK(s.loss_total == s.loss_cl);
  }
}

TEST_CASE("fully composed dataset at rho 0") {
  GeneratorConfig g = testutil::small_gen(5);
  g.uni_fraction = 0.0;
  DatasetBundle data = generate(g);
  for (const Pair& p : data.train) CHECK(p.query.is_composed());
}

TEST_CASE("smoothed CL decreases on a vanilla run") {
  DatasetBundle data = generate(testutil::small_gen(6));
  TrainConfig cfg = quick_config(600);
  cfg.warmup_steps = 60;
  cfg.mca.alpha = 0.0;
  cfg.mca.beta = 0.0;
  TrainResult r = run_training(data, cfg);
  const std::size_t window = 200;
  double prev = 1e300;
  for (std::size_t start = 0; start + window <= cfg.steps; start += window) {
    double mean = 0.0;
    for (std::size_t i = start; i < start + window; ++i) mean += r.step_log[i].loss_cl;
    mean /= window;
    CHECK(mean < prev);
    prev = mean;
  }
}
