#include <benchmark/benchmark.h>

#include "lpad/rbm.hpp"
#include "lpad/rng.hpp"

using namespace lpad;

namespace {

rbm::RbmParams make_params(std::int64_t K, std::int64_t L) {
    Rng rng(7);
    rbm::RbmParams p;
    p.W = Tensor(Shape{K, L});
    p.a = Tensor(Shape{K});
    p.b = Tensor(Shape{L});
    for (auto& v : p.W.data) v = 0.2 * rng.normal();
    for (auto& v : p.a.data) v = 0.1 * rng.normal();
    for (auto& v : p.b.data) v = 0.1 * rng.normal();
    return p;
}

void BM_pcd_update(benchmark::State& state) {
    const std::int64_t units = state.range(0);
    rbm::RbmParams p = make_params(units, units);
    rbm::RbmChains chains = rbm::RbmChains::zeros(500, units, units);
    Rng rng(9);
    for (auto _ : state) {
        rbm::pcd_update(chains, p, 20, rng);
        benchmark::DoNotOptimize(chains.v.data());
    }
}
BENCHMARK(BM_pcd_update)->Arg(8)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_exact_oracle(benchmark::State& state) {
    rbm::RbmParams p = make_params(8, 8);
    for (auto _ : state) {
        rbm::ExactOracle o = rbm::exact_oracle(p);
        benchmark::DoNotOptimize(o.log_z);
    }
}
BENCHMARK(BM_exact_oracle)->Unit(benchmark::kMillisecond);

}  // namespace
