#include <benchmark/benchmark.h>

#include "bnnfi/network.hpp"
#include "bnnfi/rng.hpp"
#include "bnnfi/tensor.hpp"

using namespace bnnfi;

namespace {

BitTensor random_bits(SplitMix64& rng, size_t n) {
  BitTensor t(Shape{uint32_t(n)});
  for (auto& w : t.words()) w = rng.next();
  if (n % 64) t.words().back() &= (uint64_t(1) << (n % 64)) - 1;
  return t;
}

void BM_XnorPopcountDot(benchmark::State& state) {
  SplitMix64 rng(1);
  const size_t n = size_t(state.range(0));
  const BitTensor a = random_bits(rng, n);
  const BitTensor b = random_bits(rng, n);
  for (auto _ : state) benchmark::DoNotOptimize(xnor_popcount_dot(a, b));
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(n));
}
BENCHMARK(BM_XnorPopcountDot)->Arg(256)->Arg(4096)->Arg(65536);

void BM_Q2Dot(benchmark::State& state) {
  SplitMix64 rng(2);
  const size_t n = size_t(state.range(0));
  Q2Tensor a(Shape{uint32_t(n)}), b(Shape{uint32_t(n)});
  for (size_t i = 0; i < n; ++i) {
    a.set_code(i, unsigned(rng.uniform_below(4)));
    b.set_code(i, unsigned(rng.uniform_below(4)));
  }
  for (auto _ : state) benchmark::DoNotOptimize(q2_dot(a, b));
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(n));
}
BENCHMARK(BM_Q2Dot)->Arg(256)->Arg(4096);

void randomize(NetworkTopology& net, uint64_t seed) {
  SplitMix64 rng(mix64(seed));
  for (LayerSpec& l : net.layers) {
    if (l.weights)
      for (auto& w : std::visit([](auto& t) { return t.words(); }, *l.weights))
        w = rng.next();
    if (l.thresholds)
      for (size_t i = 0; i < l.thresholds->elements(); ++i)
        (*l.thresholds)[i] = int32_t(rng.uniform_below(9)) - 4;
  }
  // Clear padding so the payload invariant holds.
  for (LayerSpec& l : net.layers) {
    if (!l.weights) continue;
    std::visit(
        [](auto& t) {
          const size_t bits = t.payload_bits();
          if (bits % 64) t.words().back() &= (uint64_t(1) << (bits % 64)) - 1;
        },
        *l.weights);
  }
  net.initialized = true;
}

void BM_ForwardLfc256(benchmark::State& state) {
  NetworkTopology net = build_lfc(256, Precision::W1A1);
  randomize(net, 3);
  SplitMix64 rng(4);
  IntTensor image(Shape{784});
  for (size_t i = 0; i < 784; ++i) image[i] = int32_t(rng.uniform_below(256));
  ActivationBuffer buffers = ActivationBuffer::for_network(net);
  ForwardScratch scratch;
  for (auto _ : state)
    benchmark::DoNotOptimize(forward(net, image, nullptr, buffers, &scratch).predicted_class);
}
BENCHMARK(BM_ForwardLfc256);

void BM_ForwardCnvMini(benchmark::State& state) {
  NetworkTopology net = build_cnv_plan(Precision::W1A1, 16, 128);
  randomize(net, 5);
  SplitMix64 rng(6);
  IntTensor image(Shape{3, 32, 32});
  for (size_t i = 0; i < image.elements(); ++i) image[i] = int32_t(rng.uniform_below(256));
  ActivationBuffer buffers = ActivationBuffer::for_network(net);
  ForwardScratch scratch;
  for (auto _ : state)
    benchmark::DoNotOptimize(forward(net, image, nullptr, buffers, &scratch).predicted_class);
}
BENCHMARK(BM_ForwardCnvMini);

}  // namespace

BENCHMARK_MAIN();
