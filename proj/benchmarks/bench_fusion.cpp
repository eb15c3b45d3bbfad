#include <benchmark/benchmark.h>

#include "mmfuse/dataset.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/optimizer.hpp"
#include "mmfuse/rng.hpp"

using namespace mmfuse;

namespace {

ModelBundle bench_bundle(FusionKind kind, std::size_t modalities, std::size_t in_dim,
                         std::size_t hidden, std::size_t embed) {
  std::vector<EncoderSpec> encoders(modalities,
                                    EncoderSpec{in_dim, {hidden}, embed, Activation::kRelu});
  std::vector<HeadSpec> heads;
  switch (kind) {
    case FusionKind::kAdd: heads.push_back({embed, {hidden}, 2, Activation::kRelu}); break;
    case FusionKind::kMul:
      heads.assign(modalities, HeadSpec{embed, {hidden}, 2, Activation::kRelu});
      break;
    case FusionKind::kMulMix:
      heads.assign((1ull << modalities) - 1, HeadSpec{embed, {hidden}, 2, Activation::kRelu});
      break;
    default: heads.push_back({embed, {hidden}, 2, Activation::kRelu}); break;
  }
  return init_bundle(kind, encoders, heads, 1);
}

MultimodalBatch bench_batch(std::size_t rows, std::size_t modalities, std::size_t dim) {
  Rng rng(2);
  MultimodalBatch batch;
  for (std::size_t m = 0; m < modalities; ++m) {
    Tensor t({rows, dim});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-2.0, 2.0);
    batch.modalities.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < rows; ++i) batch.labels.push_back(static_cast<int>(rng.index(2)));
  return batch;
}

void BM_TrainingStep(benchmark::State& state, FusionKind kind) {
  ModelBundle bundle = bench_bundle(kind, 3, 8, 16, 8);
  MultimodalBatch batch = bench_batch(100, 3, 8);
  FusionConfig config;
  config.kind = kind;
  config.beta = 0.5;
  OptimizerConfig opt;
  opt.learning_rate = 0.01;
  TrainState train_state;
  for (auto _ : state) {
    benchmark::DoNotOptimize(step(bundle, batch, config, opt, train_state));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * 100);
}

void BM_MulClassLosses(benchmark::State& state) {
  const std::size_t models = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<std::vector<double>> probs;
  for (std::size_t m = 0; m < models; ++m) {
    std::vector<double> p{rng.uniform(0.05, 0.95), 0.0};
    p[1] = 1.0 - p[0];
    probs.push_back(p);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(mul_class_losses(probs, 0.5));
  }
}

void BM_ForwardBackward(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0));
  ModelBundle bundle = bench_bundle(FusionKind::kMul, 2, 16, 32, 16);
  MultimodalBatch batch = bench_batch(rows, 2, 16);
  FusionConfig config;
  config.kind = FusionKind::kMul;
  for (auto _ : state) {
    bundle.zero_grads();
    Tape tape;
    Var loss = training_loss(tape, bundle, batch, config);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value().item());
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}

void BM_Auc(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    scores.push_back(rng.uniform());
    labels.push_back(static_cast<int>(rng.index(2)));
  }
  labels[0] = 0;
  labels[1] = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(auc(scores, labels));
  }
  state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}

void BM_EnumerateCandidates(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(enumerate_candidates(static_cast<std::size_t>(state.range(0))));
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_TrainingStep, add, FusionKind::kAdd);
BENCHMARK_CAPTURE(BM_TrainingStep, mul, FusionKind::kMul);
BENCHMARK_CAPTURE(BM_TrainingStep, mulmix, FusionKind::kMulMix);
BENCHMARK(BM_MulClassLosses)->Arg(2)->Arg(4);
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(256);
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);
BENCHMARK(BM_EnumerateCandidates)->Arg(4)->Arg(8);

BENCHMARK_MAIN();
