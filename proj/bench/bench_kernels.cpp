#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "rapl/kernels.hpp"

namespace {

using namespace rapl::kernels;

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

template <auto Matmul>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const MatmulDims dims{n, n, n, false, false};
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Matmul(dims, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

// The encoder's first layer on a training batch.
Conv2dGeometry batch_geometry(std::size_t batch) { return {batch, 1, 16, 16, 16, 3, 2, 1}; }

template <auto Forward>
void BM_ConvForward(benchmark::State& state) {
  const Conv2dGeometry g = batch_geometry(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 3);
  const auto w = random_values(g.out_channels * g.in_channels * g.kernel * g.kernel, 4);
  const std::vector<double> bias(g.out_channels, 0.1);
  std::vector<double> out(g.batch * g.out_channels * g.out_h() * g.out_w());
  for (auto _ : state) {
    Forward(g, x, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto BackwardWeight>
void BM_ConvBackwardWeight(benchmark::State& state) {
  const Conv2dGeometry g = batch_geometry(static_cast<std::size_t>(state.range(0)));
  const auto x = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 5);
  const auto go = random_values(g.batch * g.out_channels * g.out_h() * g.out_w(), 6);
  std::vector<double> gw(g.out_channels * g.in_channels * g.kernel * g.kernel), gb(g.out_channels);
  for (auto _ : state) {
    BackwardWeight(g, go, x, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <auto Nearest>
void BM_NearestCentroid(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 20, d = 64;
  const auto points = random_values(n * d, 7), centroids = random_values(k * d, 8);
  std::vector<std::size_t> assignment(n);
  std::vector<double> dist2(n);
  for (auto _ : state) {
    Nearest(points, centroids, n, k, d, assignment, dist2);
    benchmark::DoNotOptimize(dist2.data());
  }
}

BENCHMARK(BM_Matmul<serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_ConvForward<serial::conv2d_forward>)->Name("conv2d_forward/serial")->Arg(24)->Arg(96);
BENCHMARK(BM_ConvForward<parallel::conv2d_forward>)->Name("conv2d_forward/parallel")->Arg(24)->Arg(96);
BENCHMARK(BM_ConvBackwardWeight<serial::conv2d_backward_weight>)->Name("conv2d_backward_weight/serial")->Arg(24)->Arg(96);
BENCHMARK(BM_ConvBackwardWeight<parallel::conv2d_backward_weight>)->Name("conv2d_backward_weight/parallel")->Arg(24)->Arg(96);
BENCHMARK(BM_NearestCentroid<serial::nearest_centroid>)->Name("nearest_centroid/serial")->Arg(400)->Arg(4000);
BENCHMARK(BM_NearestCentroid<parallel::nearest_centroid>)->Name("nearest_centroid/parallel")->Arg(400)->Arg(4000);

}  // namespace

BENCHMARK_MAIN();
