#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mcalab/datagen.hpp"
#include "mcalab/model.hpp"
#include "mcalab/objectives.hpp"
#include "mcalab/rng.hpp"

namespace mcalab {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t warmup_steps = 200;
  double peak_learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 256;
  std::uint64_t seed = 1;
  std::size_t eval_every = 100;
  MCAConfig mca;
  EncoderConfig encoder;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_cl = 0.0;
  double loss_mcp = 0.0;
  double loss_mcr = 0.0;
  double wall_ms = 0.0;  // excluded from reproducibility comparisons
};

struct ProbeRecord {
  std::size_t step = 0;
  double ind_acc1 = 0.0;
  double ind_acc5 = 0.0;
  double ood_acc1 = 0.0;
  double ood_acc5 = 0.0;
};

// Linear ramp 0 -> peak over warmup_steps, then linear decay to 0 at steps.
double lr_at(std::size_t step, const TrainConfig& config);

// Decoupled-weight-decay Adam with bias correction. Parameters are updated
// in place; moment state is carried across steps.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps);

  void step(std::vector<NamedTensor>& params, double lr, double weight_decay);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Epoch-permutation batch sampler: without replacement within an epoch,
// reshuffled per epoch, deterministic for a given seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();

 private:
  void reshuffle();

  std::size_t n_, batch_;
  std::size_t cursor_ = 0;
  Rng rng_;
  std::vector<std::size_t> order_;
};

struct TrainResult {
  EncoderParams params;
  MixerParams mixer;
  std::vector<StepRecord> step_log;
  std::vector<ProbeRecord> probe_log;
};

// If out_dir is set, writes step_log.jsonl, probe_log.jsonl, periodic
// last-good checkpoints and a final checkpoint there. A non-finite loss
// aborts with TrainingDivergenceError, leaving the last-good checkpoint.
TrainResult run_training(const DatasetBundle& dataset, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace mcalab
