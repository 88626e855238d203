#include <benchmark/benchmark.h>

#include "mcalab/datagen.hpp"
#include "mcalab/model.hpp"
#include "mcalab/objectives.hpp"
#include "mcalab/train.hpp"

namespace {

mcalab::GeneratorConfig small_gen() {
  mcalab::GeneratorConfig g;
  g.n_train = 1024;
  g.n_ind_test = 64;
  g.n_ood_test = 64;
  return g;
}

std::vector<mcalab::Item> make_batch(const mcalab::DatasetBundle& bundle, std::size_t n) {
  std::vector<mcalab::Item> items;
  for (std::size_t i = 0; i < n; ++i) items.push_back(bundle.train[i % bundle.train.size()].query);
  return items;
}

void BM_EncodeForward(benchmark::State& state) {
  mcalab::DatasetBundle bundle = mcalab::generate(small_gen());
  mcalab::EncoderConfig enc;
  mcalab::EncoderParams params = mcalab::init_encoder(enc, 1);
  std::vector<mcalab::Item> batch = make_batch(bundle, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    mcalab::Tape tape;
    benchmark::DoNotOptimize(mcalab::encode(tape, params, batch));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeForward)->Arg(64)->Arg(256);

void BM_TrainingStep(benchmark::State& state) {
  mcalab::DatasetBundle bundle = mcalab::generate(small_gen());
  mcalab::TrainConfig cfg;
  cfg.batch_size = static_cast<std::size_t>(state.range(0));
  mcalab::EncoderParams params = mcalab::init_encoder(cfg.encoder, 1);
  mcalab::MixerParams mixer =
      mcalab::init_mixer(cfg.mca.mixer, cfg.encoder.d_out, cfg.mca.mfb_factor, 2);
  std::vector<mcalab::Pair> batch(bundle.train.begin(), bundle.train.begin() + cfg.batch_size);
  mcalab::AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<mcalab::NamedTensor> all = params.params;
  for (auto& nt : mixer.params) all.push_back(nt);
  for (auto _ : state) {
    mcalab::Tape tape;
    for (auto& nt : all) nt.t.zero_grad();
    mcalab::Tensor loss = mcalab::total_loss(tape, params, mixer, batch, cfg.mca);
    tape.backward(loss);
    opt.step(all, 1e-3, cfg.weight_decay);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainingStep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Generate(benchmark::State& state) {
  mcalab::GeneratorConfig g = small_gen();
  g.n_train = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(mcalab::generate(g));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Generate)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
