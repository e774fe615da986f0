#include <benchmark/benchmark.h>

#include "race/exact_attention.hpp"
#include "race/race_attention.hpp"
#include "race/race_backward.hpp"
#include "race/rng.hpp"

namespace {

race::BasicMatrix<float> gaussian(race::SeededRng& rng, std::size_t rows, std::size_t cols) {
    race::BasicMatrix<float> m(rows, cols);
    for (float& x : m.data()) x = static_cast<float>(rng.normal());
    return m;
}

race::BasicAttnInputs<float> inputs(std::size_t n, std::size_t d) {
    race::SeededRng rng(race::splitmix64(n));
    return {gaussian(rng, n, d), gaussian(rng, n, d), gaussian(rng, n, d)};
}

race::SketchConfig sketch(bool causal) {
    race::SketchConfig cfg;
    cfg.P = 2;
    cfg.L = 2;
    cfg.causal = causal;
    return cfg;
}

void BM_RaceForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto inp = inputs(n, 64);
    const auto cfg = sketch(state.range(1) != 0);
    for (auto _ : state) benchmark::DoNotOptimize(race::race_attention(inp, cfg));
}

void BM_RaceForwardBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto inp = inputs(n, 64);
    race::SeededRng rng(7);
    const auto d_out = gaussian(rng, n, 64);
    const auto cfg = sketch(state.range(1) != 0);
    for (auto _ : state) {
        const auto fwd = race::race_attention(inp, cfg);
        benchmark::DoNotOptimize(race::race_attention_vjp(inp, cfg, d_out, fwd));
    }
}

void BM_SoftmaxForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto inp = inputs(n, 64);
    for (auto _ : state) benchmark::DoNotOptimize(race::softmax_attention(inp, state.range(1) != 0, 1));
}

}  // namespace

BENCHMARK(BM_RaceForward)->ArgsProduct({{1 << 12, 1 << 14, 1 << 16}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RaceForwardBackward)
    ->ArgsProduct({{1 << 12, 1 << 14, 1 << 16}, {0, 1}})
    ->Unit(benchmark::kMillisecond);
    ;
BENCHMARK(BM_SoftmaxForward)->ArgsProduct({{1 << 10, 1 << 11, 1 << 12}, {0}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
