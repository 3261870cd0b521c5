#include <benchmark/benchmark.h>

#include <vector>

#include "iadccn/model.hpp"
#include "iadccn/ops.hpp"
#include "iadccn/training.hpp"

using namespace iadccn;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool grad = false) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return Tensor::from_vector(shape, v, grad);
}

// Args: channels in/out, spatial extent, algorithm (0 direct, 1 im2col).
void BM_Conv3x3(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    const auto previous = ops::conv_algorithm();
    ops::set_conv_algorithm(state.range(2) == 0 ? ops::ConvAlgorithm::direct : ops::ConvAlgorithm::im2col);
    Rng rng(1);
    const auto x = random_tensor({1, c, hw, hw}, rng);
    const auto w = random_tensor({c, c, 3, 3}, rng);
    const auto b = random_tensor({c}, rng);
    NoGradGuard no_grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ops::conv2d(x, w, b, 1, 1));
    }
    ops::set_conv_algorithm(previous);
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * hw * hw));
}
BENCHMARK(BM_Conv3x3)
    ->ArgNames({"C", "HW", "im2col"})
    ->ArgsProduct({{8, 32}, {32, 64}, {0, 1}})
    ->Unit(benchmark::kMicrosecond);

void BM_Forward(benchmark::State& state) {
    const auto hw = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    model::Model m{model::ModelConfig::desk(), {}};
    m.params = model::init_params(m.config, rng);
    data::Image img(hw, hw, 3, 0.5f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model::predict_density(m, img));
    }
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    Rng rng(3);
    model::ModelConfig cfg = model::ModelConfig::desk();
    model::ModelParams p = model::init_params(cfg, rng);
    train::TrainConfig tc;
    train::AdamState adam;
    const auto x = random_tensor({1, 3, 64, 64}, rng);
    const auto gt = random_tensor({1, 1, 16, 16}, rng);
    for (auto _ : state) {
        const auto out = model::forward(p, cfg, x);
        auto loss = train::density_loss(out.density, gt);
        loss.backward();
        train::adam_step(p, adam, tc);
        p.zero_grad();
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
