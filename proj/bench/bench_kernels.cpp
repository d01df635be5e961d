// Serial reference kernels against their OpenMP counterparts.
#include <benchmark/benchmark.h>

#include "dpo/data_ingest.hpp"
#include "dpo/forecast.hpp"
#include "dpo/spectral.hpp"

namespace {

const dpo::SyntheticMarket& market() {
    static const dpo::SyntheticMarket m = [] {
        dpo::RegimeMarketSpec spec;
        spec.S = 60;
        spec.C_true = 3;
        spec.seed = 1;
        return dpo::generate_regime_market(spec, 1500);
    }();
    return m;
}

const dpo::nn::Network& network() {
    static const dpo::nn::Network net = [] {
        dpo::nn::NetworkSpec spec;
        spec.H = 64;
        spec.Hp = 16;
        spec.taus = dpo::nn::default_taus(6);
        spec.psi1_hidden = {32, 32};
        spec.K = 16;
        spec.psi2_hidden = {32, 32};
        spec.Q = 16;
        return dpo::nn::Network(spec, 1);
    }();
    return net;
}

Eigen::MatrixXd windows() { return Eigen::MatrixXd::Random(64, 8192) * 0.01; }

void BM_RollingSerial(benchmark::State& st) {
    for (auto _ : st) benchmark::DoNotOptimize(dpo::spectral::serial::rolling_residuals(market().returns, {252, 5}));
}
void BM_RollingParallel(benchmark::State& st) {
    for (auto _ : st) benchmark::DoNotOptimize(dpo::spectral::rolling_residuals(market().returns, {252, 5}));
}
void BM_StabilitySerial(benchmark::State& st) {
    for (auto _ : st) benchmark::DoNotOptimize(dpo::spectral::serial::local_stability(market().returns, 252, {0, 3, 10}));
}
void BM_StabilityParallel(benchmark::State& st) {
    for (auto _ : st) benchmark::DoNotOptimize(dpo::spectral::local_stability(market().returns, 252, {0, 3, 10}));
}
void BM_PredictSerial(benchmark::State& st) {
    const auto X = windows();
    for (auto _ : st) benchmark::DoNotOptimize(dpo::forecast::serial::predict(network(), X));
}
void BM_PredictParallel(benchmark::State& st) {
    const auto X = windows();
    for (auto _ : st) benchmark::DoNotOptimize(dpo::forecast::predict(network(), X));
}

}  // namespace

BENCHMARK(BM_RollingSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RollingParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_StabilitySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StabilityParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_PredictSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PredictParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
