#include <benchmark/benchmark.h>

#include "lpad/commands.hpp"
#include "lpad/rng.hpp"
#include "lpad/tape.hpp"

using namespace lpad;

namespace {

Tensor randn(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

void BM_conv1d_forward(benchmark::State& state) {
    Rng rng(1);
    const Tensor x = randn(Shape{128, 8, 64}, rng);
    const Tensor w = randn(Shape{8, 8, 5}, rng);
    const Tensor b = randn(Shape{8}, rng);
    for (auto _ : state) {
        diff::Tape t(diff::Mode::eval);
        diff::Var y = diff::conv1d(t, t.constant(x), t.constant(w), t.constant(b));
        benchmark::DoNotOptimize(t.val(y).data.data());
    }
}
BENCHMARK(BM_conv1d_forward);

void BM_conv1d_backward(benchmark::State& state) {
    Rng rng(2);
    const Tensor x = randn(Shape{128, 8, 64}, rng);
    const Tensor w = randn(Shape{8, 8, 5}, rng);
    const Tensor b = randn(Shape{8}, rng);
    for (auto _ : state) {
        diff::Tape t(diff::Mode::train);
        diff::Var vw = t.leaf(w);
        diff::Var y = diff::conv1d(t, t.constant(x), vw, t.leaf(b));
        t.backward(diff::sum(t, y));
        benchmark::DoNotOptimize(t.grad(vw).data.data());
    }
}
BENCHMARK(BM_conv1d_backward);

void BM_train_step(benchmark::State& state) {
    // one minibatch of the desk-scale benchmark profile
    cli::RunConfig cfg;
    cfg.seed_set = true;
    cfg.seed = 1;
    cfg.model = vae::PriorKind::gaussian;
    cfg.latent = 16;
    cfg.beta = 10;
    cfg.branches = {{8, 3}, {8, 5}};
    cfg.blocks = 2;
    vae::Model model(cli::make_model_spec(cfg, 7, 60));
    model.init_params(3);
    Rng rng(4);
    Tensor batch = randn(Shape{128, 7, 60}, rng);
    AdamConfig adam;
    std::uint64_t step = 0;
    for (auto _ : state) {
        Rng noise(100 + step++);
        std::unordered_map<std::string, Tensor> grads;
        vae::LossParts parts = model.beta_elbo_loss(batch, noise, {}, &grads);
        model.store().adam_step(grads, adam);
        benchmark::DoNotOptimize(parts.total);
    }
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

}  // namespace
