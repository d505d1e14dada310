// Parallel kernels against their serial references, and the spectral route
// against the dense route on a full FBM-L forward pass.

#include "fbm/kernels.hpp"
#include "fbm/models.hpp"
#include "fbm/rng.hpp"
#include "fbm/tensor.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace {

using namespace fbm;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed)
{
    Pcg32 rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
}

template <bool Parallel>
void gemm(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::gemm_nn(n, n, n, a, b, c);
        } else {
            kernels::reference::gemm_nn(n, n, n, a, b, c);
        }
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <bool Parallel>
void fold(benchmark::State& state)
{
    // A trend-path patch at T = 336: 48 steps over 168 bins into a width-256 projection.
    const std::size_t T = 336, bins = T / 2, steps = 48, width = 256;
    const auto basis = random_vector(T * bins, 3), weight = random_vector(steps * bins * width, 4);
    std::vector<double> out(bins * width);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::fold_basis(basis, bins, 0, steps, 1, weight, width, out);
        } else {
            kernels::reference::fold_basis(basis, bins, 0, steps, 1, weight, width, out);
        }
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Parallel>
void rolling(benchmark::State& state)
{
    const std::size_t T = 336, L = 96, bins = T / 2;
    const auto basis = random_vector((T + L - 1) * bins, 5), weight = random_vector(T * bins, 6);
    std::vector<double> out(L * bins);
    for (auto _ : state) {
        if constexpr (Parallel) {
            kernels::rolling_fold(basis, bins, weight, T, L, out);
        } else {
            kernels::reference::rolling_fold(basis, bins, weight, T, L, out);
        }
        benchmark::DoNotOptimize(out.data());
    }
}

void route(benchmark::State& state)
{
    const std::size_t T = 336, L = 96, D = 7, batch = 32;
    models::ForecastModel m(models::default_spec(models::Variant::L, T, L, D), 1);
    m.set_route(state.range(0) == 0 ? blocks::Route::spectral : blocks::Route::dense);
    Pcg32 rng(7);
    Tensor X({batch, D, T});
    for (std::size_t i = 0; i < X.size(); ++i) X[i] = rng.uniform(-1, 1);
    for (auto _ : state) benchmark::DoNotOptimize(m.predict(X));
    state.SetLabel(state.range(0) == 0 ? "spectral" : "dense");
}

} // namespace

BENCHMARK(gemm<true>)->Name("gemm_nn/parallel")->Arg(128)->Arg(256);
BENCHMARK(gemm<false>)->Name("gemm_nn/reference")->Arg(128)->Arg(256);
BENCHMARK(fold<true>)->Name("fold_basis/parallel");
BENCHMARK(fold<false>)->Name("fold_basis/reference");
BENCHMARK(rolling<true>)->Name("rolling_fold/parallel");
BENCHMARK(rolling<false>)->Name("rolling_fold/reference");
BENCHMARK(route)->Name("fbm_l_predict")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
