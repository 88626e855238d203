#include "mcalab/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mcalab/errors.hpp"
#include "mcalab/eval.hpp"

namespace mcalab {

void TrainConfig::validate() const {
  if (warmup_steps > steps) throw InvalidConfigError("warmup_steps must be <= steps");
  if (batch_size < 2) throw InvalidConfigError("batch_size must be >= 2");
  if (steps < 1) throw InvalidConfigError("steps must be >= 1");
  if (eval_every < 1) throw InvalidConfigError("eval_every must be >= 1");
  if (!(peak_learning_rate > 0.0)) throw InvalidConfigError("peak_learning_rate must be > 0");
  if (weight_decay < 0.0) throw InvalidConfigError("weight_decay must be >= 0");
  mca.validate();
  encoder.validate();
}

double lr_at(std::size_t step, const TrainConfig& config) {
  if (step > config.steps) throw ContractError("lr_at: step beyond configured steps");
  double peak = config.peak_learning_rate;
  if (config.warmup_steps > 0 && step <= config.warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  if (config.steps == config.warmup_steps) return peak;
  return peak * static_cast<double>(config.steps - step) /
         static_cast<double>(config.steps - config.warmup_steps);
}

AdamW::AdamW(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(std::vector<NamedTensor>& params, double lr, double weight_decay) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.t.size(), 0.0);
      v_.emplace_back(p.t.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("AdamW: parameter count changed");
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].t;
    p.ensure_grad();
    if (p.grad().size() != m_[i].size()) throw ContractError("AdamW: gradient shape changed");
    for (std::size_t j = 0; j < m_[i].size(); ++j) {
      double g = p.grad()[j];
      if (!std::isfinite(g))
        throw TrainingDivergenceError("non-finite gradient in parameter '" + params[i].name + "'");
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
      double m_hat = m_[i][j] / bc1;
      double v_hat = v_[i][j] / bc2;
      p.value()[j] -= lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay * p.value()[j]);
    }
  }
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : n_(dataset_size), batch_(batch_size), rng_(seed) {
  if (batch_ > n_) throw InvalidConfigError("batch_size exceeds dataset size");
  order_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = n_ - 1; i > 0; --i) {
    std::size_t j = rng_.below(i + 1);
    std::swap(order_[i], order_[j]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_ > n_) reshuffle();
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

namespace {

nlohmann::json step_record_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["loss_total"] = r.loss_total;
  j["loss_cl"] = r.loss_cl;
  j["loss_mcp"] = r.loss_mcp;
  j["loss_mcr"] = r.loss_mcr;
  // wall_ms stays in-memory only: log files must be bit-identical across
  // reruns of the same config + seed.
  return j;
}

nlohmann::json probe_record_json(const ProbeRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["ind_acc1"] = r.ind_acc1;
  j["ind_acc5"] = r.ind_acc5;
  j["ood_acc1"] = r.ood_acc1;
  j["ood_acc5"] = r.ood_acc5;
  return j;
}

}  // namespace

TrainResult run_training(const DatasetBundle& dataset, const TrainConfig& config,
                         const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  if (dataset.train.empty()) throw InvalidConfigError("run_training: empty train split");

  // One derived seed per consumer keeps variant runs byte-pairable: the
  // encoder initialization depends only on the master seed, never on the
  // MCA configuration.
  Rng master(config.seed);
  std::uint64_t enc_seed = master.fork();
  std::uint64_t mixer_seed = master.fork();
  std::uint64_t sampler_seed = master.fork();

  TrainResult result;
  result.params = init_encoder(config.encoder, enc_seed);
  result.mixer = init_mixer(config.mca.mixer, config.encoder.d_out, config.mca.mfb_factor,
                            mixer_seed);

  std::vector<NamedTensor> opt_params = result.params.params;
  // phi joins the optimizer only when the mixer has learnable parameters.
  for (const auto& p : result.mixer.params) opt_params.push_back(p);

  AdamW optimizer(config.beta1, config.beta2, config.adam_eps);
  BatchSampler sampler(dataset.train.size(), config.batch_size, sampler_seed);

  std::ofstream step_out, probe_out;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    step_out.open(*out_dir / "step_log.jsonl", std::ios::trunc);
    probe_out.open(*out_dir / "probe_log.jsonl", std::ios::trunc);
  }
  auto save_last_good = [&](std::size_t step) {
    if (out_dir) save_checkpoint(result.params, step, *out_dir / "checkpoint_last.mcackpt");
  };
  save_last_good(0);

  for (std::size_t step = 0; step < config.steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> idx = sampler.next();
    std::vector<Pair> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(dataset.train[i]);

    Tape tape;
    LossBreakdown breakdown;
    Tensor loss = total_loss(tape, result.params, result.mixer, batch, config.mca, &breakdown);
    if (!std::isfinite(breakdown.total))
      throw TrainingDivergenceError("non-finite loss at step " + std::to_string(step) +
                                    "; last-good checkpoint retained");

    for (auto& p : opt_params) {
      p.t.ensure_grad();
      p.t.zero_grad();
    }
    tape.backward(loss);
    double lr = lr_at(step, config);
    optimizer.step(opt_params, lr, config.weight_decay);

    StepRecord rec;
    rec.step = step;
    rec.lr = lr;
    rec.loss_total = breakdown.total;
    rec.loss_cl = breakdown.cl;
    rec.loss_mcp = breakdown.mcp;
    rec.loss_mcr = breakdown.mcr;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    result.step_log.push_back(rec);
    if (step_out.is_open()) step_out << step_record_json(rec).dump() << '\n';

    if ((step + 1) % config.eval_every == 0 || step + 1 == config.steps) {
      ProbeRecord probe;
      probe.step = step + 1;
      RetrievalReport ind = evaluate(result.params, dataset.ind_test, "ind");
      RetrievalReport ood = evaluate(result.params, dataset.ood_test, "ood");
      probe.ind_acc1 = ind.accuracy_at_1;
      probe.ind_acc5 = ind.accuracy_at_5;
      probe.ood_acc1 = ood.accuracy_at_1;
      probe.ood_acc5 = ood.accuracy_at_5;
      result.probe_log.push_back(probe);
      if (probe_out.is_open()) probe_out << probe_record_json(probe).dump() << '\n';
      save_last_good(step + 1);
    }
  }

  if (out_dir) save_checkpoint(result.params, config.steps, *out_dir / "checkpoint_final.mcackpt");
  return result;
}

}  // namespace mcalab
