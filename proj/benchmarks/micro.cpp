#include <benchmark/benchmark.h>

#include "mtscan/autodiff.hpp"
#include "mtscan/bi_scan.hpp"
#include "mtscan/model.hpp"
#include "mtscan/ms_scan.hpp"
#include "mtscan/ops.hpp"
#include "mtscan/ssm.hpp"

using namespace mtscan;

namespace {

void BM_SelectiveScan(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(1);
  const SSMParams p = SSMParams::init(16, 8, rng);
  const Tensor x = normal_tensor({len, 16}, 1.0, rng);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(selective_scan(x, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(len));
}
BENCHMARK(BM_SelectiveScan)->Arg(64)->Arg(256)->Arg(1024);

void BM_SelectiveScanBackward(benchmark::State& state) {
  Rng rng = make_rng(2);
  const SSMParams p = SSMParams::init(16, 8, rng);
  const Tensor x = normal_tensor({256, 16}, 1.0, rng, true);
  for (auto _ : state) benchmark::DoNotOptimize(backward(sum(selective_scan(x, p))));
}
BENCHMARK(BM_SelectiveScanBackward);

void BM_SS2D(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(3);
  const auto heads = init_ss2d_heads(16, 8, rng);
  const Tensor x = normal_tensor({16, hw, hw}, 1.0, rng);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(ss2d(x, heads));
}
BENCHMARK(BM_SS2D)->Arg(8)->Arg(16);

void BM_MultiScaleScan(benchmark::State& state) {
  Rng rng = make_rng(4);
  const auto cfg = ScaleConfig::make(32, {1, 4}, 8, state.range(0) != 0, rng);
  const Tensor x = normal_tensor({32, 16, 16}, 1.0, rng);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(multi_scale_scan(x, cfg));
}
BENCHMARK(BM_MultiScaleScan)->ArgName("dilated")->Arg(0)->Arg(1);

void BM_BiScan(benchmark::State& state) {
  const auto tasks = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(5);
  const auto block = BiScan::make(BiScanConfig{BiScanConfig::default_patterns()}, 16, 8, rng);
  TaskFeatureSet fs{{}, TaskOrder::identity(tasks)};
  for (std::size_t t = 0; t < tasks; ++t) fs.maps.push_back(normal_tensor({16, 8, 8}, 1.0, rng));
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(bi_scan(fs, block));
}
BENCHMARK(BM_BiScan)->DenseRange(2, 4);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig c;
  c.tasks = default_tasks(5);
  c.tasks.resize(static_cast<std::size_t>(state.range(0)));
  const Model m = Model::init(c, 0);
  Rng rng = make_rng(6);
  const Tensor img = uniform_tensor({3, 64, 64}, 0.0, 1.0, rng);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(img, m));
}
BENCHMARK(BM_ModelForward)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
