// Parallel conv kernels vs the serial reference loops.

#include <benchmark/benchmark.h>

#include "lsda/kernels.hpp"
#include "lsda/rng.hpp"

using namespace lsda;

namespace {

Tensor filled(const Shape& s, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(s);
    for (double& v : t.values()) v = normal(rng);
    return t;
}

// Desk-profile first block: 3 -> 16 channels, 32x32, stride 2.
struct Conv {
    Tensor x = filled({32, 3, 32, 32}, 1), w = filled({16, 3, 3, 3}, 2), b = filled({16}, 3);
};

void BM_ConvForward(benchmark::State& st) {
    Conv c;
    for (auto _ : st) benchmark::DoNotOptimize(kernels::conv2d_forward(c.x, c.w, c.b, 2, 1));
}

void BM_ConvForwardReference(benchmark::State& st) {
    Conv c;
    for (auto _ : st) benchmark::DoNotOptimize(reference::conv2d_forward(c.x, c.w, c.b, 2, 1));
}

void BM_ConvBackward(benchmark::State& st) {
    Conv c;
    const Tensor dy = filled({32, 16, 16, 16}, 4);
    for (auto _ : st) {
        Tensor dx(c.x.shape()), dw(c.w.shape()), db(c.b.shape());
        kernels::conv2d_backward(c.x, c.w, dy, 2, 1, &dx, &dw, &db);
        benchmark::DoNotOptimize(dw.data());
    }
}

void BM_ConvBackwardReference(benchmark::State& st) {
    Conv c;
    const Tensor dy = filled({32, 16, 16, 16}, 4);
    for (auto _ : st) {
        Tensor dx(c.x.shape()), dw(c.w.shape()), db(c.b.shape());
        reference::conv2d_backward(c.x, c.w, dy, 2, 1, &dx, &dw, &db);
        benchmark::DoNotOptimize(dw.data());
    }
}

}  // namespace

BENCHMARK(BM_ConvForward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
