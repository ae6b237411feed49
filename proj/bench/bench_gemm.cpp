// Serial reference vs OpenMP gemm at the sizes the agent actually uses.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "imnav/numcore/kernels.hpp"

namespace {

using imnav::nc::kernels::GemmArgs;

struct Operands {
    std::vector<float> a, b, c;
};

Operands make(int m, int k, int n) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> d;
    Operands o{std::vector<float>(m * k), std::vector<float>(k * n), std::vector<float>(m * n)};
    for (auto& x : o.a) x = d(rng);
    for (auto& x : o.b) x = d(rng);
    return o;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
    const int m = state.range(0), k = state.range(1), n = state.range(2);
    Operands o = make(m, k, n);
    GemmArgs<float> args{o.a.data(), o.b.data(), o.c.data(), m, k, n};
    for (auto _ : state) {
        if constexpr (Parallel) {
            imnav::nc::kernels::gemm(args);
        } else {
            imnav::nc::kernels::serial::gemm(args);
        }
        benchmark::DoNotOptimize(o.c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(m) * k * n);
}

void shapes(benchmark::internal::Benchmark* b) {
    b->Args({13, 32, 32})->Args({40, 32, 96})->Args({128, 128, 128})->Args({256, 256, 256});
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Apply(shapes);
BENCHMARK(BM_gemm<true>)->Name("gemm/openmp")->Apply(shapes);

BENCHMARK_MAIN();
