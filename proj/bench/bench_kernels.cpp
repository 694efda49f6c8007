#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "bayernet/kernels.hpp"
#include "bayernet/network.hpp"
#include "bayernet/ops.hpp"

using namespace bayernet;
namespace k = bayernet::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint32_t seed, float lo = -1.0f, float hi = 1.0f) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

k::Backend backend(const benchmark::State& state) {
  return state.range(0) == 0 ? k::Backend::Serial : k::Backend::OpenMP;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "omp"); }

// Args: backend, channels, size.
void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(1)), s = static_cast<int>(state.range(2));
  k::Conv2dDims d{c, s, s, c, 3, 1, 1};
  const auto in = random_vec(static_cast<std::size_t>(c) * s * s, 1);
  const auto w = random_vec(static_cast<std::size_t>(c) * c * 9, 2);
  const auto b = random_vec(static_cast<std::size_t>(c), 3);
  std::vector<float> out(static_cast<std::size_t>(c) * s * s);
  for (auto _ : state) {
    k::conv2d_forward(backend(state), d, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(1)), s = static_cast<int>(state.range(2));
  k::Conv2dDims d{c, s, s, c, 3, 1, 1};
  const auto in = random_vec(static_cast<std::size_t>(c) * s * s, 1);
  const auto w = random_vec(static_cast<std::size_t>(c) * c * 9, 2);
  const auto go = random_vec(static_cast<std::size_t>(c) * s * s, 3);
  std::vector<float> gi(in.size()), gw(w.size()), gb(static_cast<std::size_t>(c));
  for (auto _ : state) {
    k::conv2d_backward(backend(state), d, in, w, go, gi, gw, gb);
    benchmark::DoNotOptimize(gi.data());
  }
  label(state);
}

void BM_DeformForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(1)), s = static_cast<int>(state.range(2));
  k::DeformDims d{c, s, s, c};
  const auto in = random_vec(static_cast<std::size_t>(c) * s * s, 1);
  const auto w = random_vec(static_cast<std::size_t>(c) * c * 9, 2);
  const auto off = random_vec(static_cast<std::size_t>(18) * s * s, 3, -2.0f, 2.0f);
  std::vector<float> out(static_cast<std::size_t>(c) * s * s);
  for (auto _ : state) {
    k::deform_conv2d_forward(backend(state), d, in, w, off, out);
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_DeformBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(1)), s = static_cast<int>(state.range(2));
  k::DeformDims d{c, s, s, c};
  const auto in = random_vec(static_cast<std::size_t>(c) * s * s, 1);
  const auto w = random_vec(static_cast<std::size_t>(c) * c * 9, 2);
  const auto off = random_vec(static_cast<std::size_t>(18) * s * s, 3, -2.0f, 2.0f);
  const auto go = random_vec(static_cast<std::size_t>(c) * s * s, 4);
  std::vector<float> gi(in.size()), gw(w.size()), goff(off.size());
  for (auto _ : state) {
    k::deform_conv2d_backward(backend(state), d, in, w, off, go, gi, gw, goff);
    benchmark::DoNotOptimize(gi.data());
  }
  label(state);
}

void BM_Upsample(benchmark::State& state) {
  const int c = static_cast<int>(state.range(1)), s = static_cast<int>(state.range(2));
  const auto in = random_vec(static_cast<std::size_t>(c) * s * s, 1);
  std::vector<float> out(in.size() * 16);
  for (auto _ : state) {
    k::upsample_bilinear_forward(backend(state), c, s, s, 4, in, out);
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

void BM_MaxPool(benchmark::State& state) {
  const int c = static_cast<int>(state.range(1)), s = static_cast<int>(state.range(2));
  const auto in = random_vec(static_cast<std::size_t>(c) * s * s, 1);
  std::vector<float> out(in.size() / 4);
  std::vector<std::int32_t> arg(out.size());
  for (auto _ : state) {
    k::max_pool2_forward(backend(state), c, s, s, in, out, arg);
    benchmark::DoNotOptimize(out.data());
  }
  label(state);
}

// Args: backend, image size. Width multiplier 0.25, no gradients.
void BM_NetworkForward(benchmark::State& state) {
  const int s = static_cast<int>(state.range(1));
  NetworkConfig cfg;
  cfg.width_multiplier = 0.25f;
  const Network net(cfg, 1);
  const auto raster = Tensor::from({1, s, s}, random_vec(static_cast<std::size_t>(s) * s, 5, 0.0f, 1.0f));
  const auto previous = k::default_backend();
  k::set_default_backend(backend(state));
  NoGradScope no_grad;
  for (auto _ : state) {
    auto out = forward(net, raster);
    benchmark::DoNotOptimize(out.score.data().data());
  }
  k::set_default_backend(previous);
  label(state);
}

void kernel_args(benchmark::internal::Benchmark* b) {
  for (int be : {0, 1})
    for (auto [c, s] : {std::pair{16, 64}, std::pair{64, 32}}) b->Args({be, c, s});
  b->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_Conv2dForward)->Apply(kernel_args);
BENCHMARK(BM_Conv2dBackward)->Apply(kernel_args);
BENCHMARK(BM_DeformForward)->Apply(kernel_args);
BENCHMARK(BM_DeformBackward)->Apply(kernel_args);
BENCHMARK(BM_Upsample)->Apply(kernel_args);
BENCHMARK(BM_MaxPool)->Apply(kernel_args);
BENCHMARK(BM_NetworkForward)->ArgsProduct({{0, 1}, {64}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
