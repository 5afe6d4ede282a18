// Parallel kernels against the serial reference implementations.

#include <benchmark/benchmark.h>

#include <random>

#include "swwae/kernels.hpp"
#include "swwae/reference.hpp"
#include "swwae/tensor.hpp"

namespace {

swwae::Tensor random_tensor(swwae::Shape shape, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  swwae::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// batch, in, out, size, kernel
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({16, 1, 16, 32, 5})->Args({16, 16, 32, 32, 3})->Args({16, 32, 32, 16, 3});
}

void BM_ConvForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto i = static_cast<std::size_t>(state.range(1));
  const auto o = static_cast<std::size_t>(state.range(2));
  const auto s = static_cast<std::size_t>(state.range(3));
  const auto k = static_cast<std::size_t>(state.range(4));
  swwae::kernels::ConvGeometry g{n, i, o, s, s, k, (k - 1) / 2};
  auto x = random_tensor({n, i, s, s}, 1);
  auto w = random_tensor({o, i, k, k}, 2);
  auto bias = random_tensor({o}, 3);
  swwae::Tensor y({n, o, s, s});
  for (auto _ : state) {
    swwae::kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(
      static_cast<double>(n * o * s * s * i * k * k) * state.iterations(),
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_ConvForward)->Apply(conv_args);

void BM_ConvForwardReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto i = static_cast<std::size_t>(state.range(1));
  const auto o = static_cast<std::size_t>(state.range(2));
  const auto s = static_cast<std::size_t>(state.range(3));
  const auto k = static_cast<std::size_t>(state.range(4));
  auto x = random_tensor({n, i, s, s}, 1);
  auto w = random_tensor({o, i, k, k}, 2);
  auto bias = random_tensor({o}, 3);
  for (auto _ : state) {
    auto y = swwae::reference::conv2d(x, w, bias, (k - 1) / 2);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(
      static_cast<double>(n * o * s * s * i * k * k) * state.iterations(),
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_ConvForwardReference)->Apply(conv_args);

void BM_ConvBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto i = static_cast<std::size_t>(state.range(1));
  const auto o = static_cast<std::size_t>(state.range(2));
  const auto s = static_cast<std::size_t>(state.range(3));
  const auto k = static_cast<std::size_t>(state.range(4));
  swwae::kernels::ConvGeometry g{n, i, o, s, s, k, (k - 1) / 2};
  auto x = random_tensor({n, i, s, s}, 1);
  auto w = random_tensor({o, i, k, k}, 2);
  auto gy = random_tensor({n, o, s, s}, 3);
  swwae::Tensor gx(x.shape()), gw(w.shape()), gb({o});
  for (auto _ : state) {
    swwae::kernels::conv2d_backward(g, x.data(), w.data(), gy.data(), gx.data(), gw.data(),
                                    gb.data());
    benchmark::DoNotOptimize(gx.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(
      2.0 * static_cast<double>(n * o * s * s * i * k * k) * state.iterations(),
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_ConvBackward)->Apply(conv_args);

void BM_ConvBackwardReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto i = static_cast<std::size_t>(state.range(1));
  const auto o = static_cast<std::size_t>(state.range(2));
  const auto s = static_cast<std::size_t>(state.range(3));
  const auto k = static_cast<std::size_t>(state.range(4));
  auto x = random_tensor({n, i, s, s}, 1);
  auto w = random_tensor({o, i, k, k}, 2);
  auto gy = random_tensor({n, o, s, s}, 3);
  for (auto _ : state) {
    auto g = swwae::reference::conv2d_backward(x, w, (k - 1) / 2, gy);
    benchmark::DoNotOptimize(g.grad_x.data());
  }
  state.counters["MAC/s"] = benchmark::Counter(
      2.0 * static_cast<double>(n * o * s * s * i * k * k) * state.iterations(),
      benchmark::Counter::kIsRate);
}
BENCHMARK(BM_ConvBackwardReference)->Apply(conv_args);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1);
  auto b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(swwae::matmul(a, b).data());
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_MatmulReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor({n, n}, 1);
  auto b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(swwae::reference::matmul(a, b).data());
}
BENCHMARK(BM_MatmulReference)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
