#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "lanistr/datagen.hpp"
#include "lanistr/model.hpp"
#include "lanistr/optimizer.hpp"
#include "lanistr/pipeline.hpp"
#include "lanistr/tensor.hpp"

using namespace lanistr;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = n(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({32, n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 32 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Tensor q = random_tensor({32, len, 64}, 1, true);
    Tensor k = random_tensor({32, len, 64}, 2, true);
    Tensor v = random_tensor({32, len, 64}, 3, true);
    backward(sum(multi_head_attention(q, k, v, 4)));
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(17)->Arg(48);

void BM_Sparsemax(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({256, width}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(sparsemax(x));
}
BENCHMARK(BM_Sparsemax)->Arg(16)->Arg(64);

void BM_PretrainStep(benchmark::State& state) {
  GenSpec spec;
  spec.n_samples = 32;
  const Dataset data = generate(spec);
  LanistrModel model(ModelConfig::desk(), 0);
  TrainConfig cfg;
  std::vector<const MultimodalSample*> batch;
  for (const auto& s : data.samples) batch.push_back(&s);
  AdamW opt(cfg.adamw);
  std::mt19937_64 rng(0);
  const ForwardContext ctx{true, &rng};
  std::uint64_t step = 0;
  for (auto _ : state) {
    model.parameters().zero_grad();
    const TotalLoss loss = pretraining_loss(model, batch, cfg, data.info.feature_std, step++, ctx);
    backward(loss.total);
    opt.step(model.parameters(), cfg.lr);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
