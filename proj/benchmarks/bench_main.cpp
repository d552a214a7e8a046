#include <benchmark/benchmark.h>

#include <random>

#include "iroam/crossdomain.hpp"
#include "iroam/detector.hpp"
#include "iroam/geometry.hpp"
#include "iroam/interaction.hpp"

using namespace iroam;

namespace {

nn::Tensor random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  nn::Tensor t({r, c});
  for (double& x : t.vec()) x = u(rng);
  return t;
}

void BM_Hungarian(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const nn::Tensor cost = random_matrix(50, k, 1);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian(cost).total_cost);
}
BENCHMARK(BM_Hungarian)->Arg(2)->Arg(8)->Arg(20)->Arg(50);

void BM_IouBev(benchmark::State& state) {
  Box3D a, b;
  a.dims = b.dims = {1.5, 1.8, 4.2};
  a.center = {0.0, -0.75, 20.0};
  b.center = {0.4, -0.75, 20.7};
  a.yaw = 1.4;
  b.yaw = 1.7;
  for (auto _ : state) benchmark::DoNotOptimize(iou_bev(a, b));
}
BENCHMARK(BM_IouBev);

void BM_Iou3d(benchmark::State& state) {
  Box3D a, b;
  a.dims = b.dims = {1.5, 1.8, 4.2};
  a.center = {0.0, -0.75, 20.0};
  b.center = {0.4, -0.6, 20.7};
  a.yaw = 1.4;
  b.yaw = 1.7;
  for (auto _ : state) benchmark::DoNotOptimize(iou_3d(a, b));
}
BENCHMARK(BM_Iou3d);

void BM_ContrastiveLoss(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  const nn::Tensor p = random_matrix(k, 64, 2), n = random_matrix(k, 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(contrastive_loss_value(p, n));
}
BENCHMARK(BM_ContrastiveLoss)->Arg(4)->Arg(16);

// One branch forward (and backward) at the default model size.
void BM_DetectorForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.image_width = static_cast<int>(state.range(0));
  cfg.image_height = static_cast<int>(state.range(1));
  Detector det(cfg, 4);
  const nn::Tensor image = random_matrix(3, cfg.image_height * cfg.image_width, 5);
  const bool backward = state.range(2) != 0;
  for (auto _ : state) {
    nn::Graph g;
    g.set_grad_enabled(backward);
    const nn::Var x = g.constant(image.reshaped({3, cfg.image_height, cfg.image_width}));
    const BranchOutput out = det.forward(g, x, Domain::Roadside);
    if (backward) g.backward(nn::sum(out.heads.depth));
    benchmark::DoNotOptimize(out.heads.depth.value().data());
  }
}
BENCHMARK(BM_DetectorForward)->Args({128, 96, 0})->Args({256, 160, 0})->Args({256, 160, 1})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
