#include "jscc/channel.hpp"
#include "jscc/codec.hpp"
#include "jscc/config.hpp"
#include "jscc/swin.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace jscc;

// Swin block pair forward on a {batch * side * side, dim} token map.
void BM_SwinPairForward(benchmark::State& state) {
    const int batch = static_cast<int>(state.range(0));
    const int side = static_cast<int>(state.range(1));
    const int dim = static_cast<int>(state.range(2));
    nn::Rng rng(7);
    swin::SwinBlockPair pair(dim, 4, side, side, 8, 4, rng);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::vector<float> values(static_cast<std::size_t>(batch) * side * side * dim);
    for (auto& v : values) v = n(rng);
    const swin::FeatureMap x{ag::constant({batch * side * side, dim}, values), batch, side, side};
    ag::NoGradGuard no_grad;
    for (auto _ : state) {
        auto y = pair(x);
        benchmark::DoNotOptimize(y.tokens.value().data());
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_SwinPairForward)->Args({32, 16, 32})->Args({32, 8, 32})->Args({8, 16, 256})->Unit(benchmark::kMillisecond);

// End-to-end encode, channel and decode for the toy model.
void BM_ToyReconstruct(benchmark::State& state) {
    const ExperimentConfig cfg = toy_config();
    codec::JsccModel model(cfg, 1);
    const int batch = static_cast<int>(state.range(0));
    ImageBatch images{batch, 3, 32, 32, 1.0f, std::vector<float>(static_cast<std::size_t>(batch) * 3072)};
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& p : images.pixels) p = u(rng);
    const auto info = codec::make_side_info(cfg, cfg.grid.levels, 7.0);
    channel::NoiseStream noise(11);
    for (auto _ : state) {
        auto out = model.reconstruct(images, info, &noise);
        benchmark::DoNotOptimize(out.pixels.data());
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ToyReconstruct)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
