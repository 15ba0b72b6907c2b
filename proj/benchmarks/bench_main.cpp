#include <benchmark/benchmark.h>

#include <filesystem>
#include <unistd.h>

#include "grok/ckpt.hpp"
#include "grok/linalg.hpp"
#include "grok/model.hpp"
#include "grok/rng.hpp"
#include "grok/train.hpp"

namespace {

grok::Mat random_mat(std::size_t r, std::size_t c, std::uint64_t seed) {
  grok::SplitMix64 rng(seed);
  grok::Mat m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_Matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const grok::Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(grok::matmul(a, b));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);

// Weight-delta shapes of the baseline and large models.
void BM_Svd(benchmark::State& st) {
  const grok::Mat a = random_mat(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)), 3);
  for (auto _ : st) benchmark::DoNotOptimize(grok::svd(a));
}
BENCHMARK(BM_Svd)->Args({128, 128})->Args({128, 256})->Args({256, 512})->Unit(benchmark::kMillisecond);

// Short, wide matrices: trajectory deltas and per-example gradient samples.
void BM_GramTopDirs(benchmark::State& st) {
  const grok::Mat a = random_mat(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)), 4);
  for (auto _ : st) benchmark::DoNotOptimize(grok::gram_top_dirs(a, 10));
}
BENCHMARK(BM_GramTopDirs)->Args({64, 65536})->Args({256, 65536})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& st) {
  const grok::ModelConfig cfg = grok::model_preset("baseline");
  const grok::Split data = grok::generate(cfg.P, 0);
  grok::ParamSet<float> params = grok::init_params(cfg, 0);
  grok::ParamSet<float> grads(cfg);
  grok::Engine<float> engine(cfg);
  grok::TrainConfig tc;
  grok::AdamW opt(tc, grok::decay_scale_for(params.layout(), true));
  const grok::Batch batch = grok::batch_of(data.train);
  for (auto _ : st) {
    engine.loss_and_grads(params, batch, grads);
    opt.step(params.values(), grads.values());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(data.train.size()));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->MinTime(2.0);

void BM_EvaluateF64(benchmark::State& st) {
  const grok::ModelConfig cfg = grok::model_preset("baseline");
  const grok::Split data = grok::generate(cfg.P, 0);
  const grok::ParamSet<double> params = grok::init_params(cfg, 0).cast<double>();
  grok::Engine<double> engine(cfg);
  const grok::Batch batch = grok::batch_of(data.test);
  for (auto _ : st) benchmark::DoNotOptimize(engine.evaluate(params, batch));
}
BENCHMARK(BM_EvaluateF64)->Unit(benchmark::kMillisecond);

void BM_CheckpointRoundTrip(benchmark::State& st) {
  const grok::ModelConfig cfg = grok::model_preset(st.range(0) == 0 ? "baseline" : "large");
  const grok::ParamSet<float> params = grok::init_params(cfg, 0);
  const auto path = std::filesystem::temp_directory_path() / ("grok-bench-" + std::to_string(::getpid()) + ".grkc");
  const grok::CheckpointMeta meta{cfg, 0, 0, 0};
  for (auto _ : st) {
    grok::save_checkpoint(path, params, meta);
    benchmark::DoNotOptimize(grok::load_checkpoint(path));
  }
  std::filesystem::remove(path);
  st.SetBytesProcessed(st.iterations() * static_cast<std::int64_t>(2 * params.size() * sizeof(float)));
}
BENCHMARK(BM_CheckpointRoundTrip)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
