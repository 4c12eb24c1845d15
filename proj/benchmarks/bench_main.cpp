#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "vfseg/fusion.hpp"
#include "vfseg/metrics.hpp"
#include "vfseg/models/segmentation_model.hpp"
#include "vfseg/synthetic.hpp"
#include "vfseg/training.hpp"

using namespace vfseg;

namespace {

Corpus corpus_of(int n) {
  PhantomSpec spec;
  spec.shape = {32, 64, 64};
  Rng rng(1);
  Corpus c;
  for (int i = 0; i < n; ++i) {
    auto p = generate_phantom(spec, rng);
    p.volume.id = "b" + std::to_string(i);
    c.push_back(std::move(p.volume));
  }
  return c;
}

void BM_FusedBatch(benchmark::State& state) {
  const auto corpus = corpus_of(4);
  const auto params = FusionParams::scaled_to({16, 32, 32}, static_cast<int>(state.range(0)));
  uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(make_pretrain_batch(corpus, params, 4, ++seed));
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_FusedBatch)->Arg(1)->Arg(4)->Arg(16);

void BM_Assd(benchmark::State& state) {
  PhantomSpec spec;
  const int64_t s = state.range(0);
  spec.shape = {s, s, s};
  Rng rng(2);
  const auto a = generate_phantom(spec, rng).labels;
  const auto b = generate_phantom(spec, rng).labels;
  for (auto _ : state) benchmark::DoNotOptimize(assd(a, b, 1, a.spacing));
}
BENCHMARK(BM_Assd)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
  configure_determinism(true);
  const auto arch = state.range(0) == 0 ? Architecture::PctNet : Architecture::UNet3d;
  auto model = build_model(ModelConfig::reduced(arch), 3);
  model->eval();
  torch::NoGradGuard guard;
  const auto x = torch::rand({1, 1, 16, 32, 32});
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(x).probs);
  state.SetLabel(arch == Architecture::PctNet ? "pct" : "unet");
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
