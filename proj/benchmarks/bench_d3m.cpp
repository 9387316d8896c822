#include <benchmark/benchmark.h>

#include "d3m/calibrator.hpp"
#include "d3m/datagen.hpp"
#include "d3m/oracle.hpp"
#include "d3m/trainer.hpp"

namespace {

d3m::TrainedModel bench_model() {
    d3m::Rng rng(57);
    auto ds = d3m::data::gen_blobs(512, 2, 4.0, rng);
    d3m::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 64;
    return d3m::train(cfg, ds, d3m::Rng(cfg.seed));
}

void BM_fe_forward(benchmark::State& state) {
    const auto model = bench_model();
    d3m::Rng rng(1);
    const d3m::nn::Vec x = {0.3, -1.2};
    for (auto _ : state) {
        benchmark::DoNotOptimize(d3m::posterior_at(model, x));
    }
}
BENCHMARK(BM_fe_forward);

void BM_elbo_grad(benchmark::State& state) {
    auto model = bench_model();
    d3m::Rng noise(2);
    d3m::ModelGrads grads{d3m::nn::zeros_like(model.fe), d3m::vbll::zeros_like(model.head)};
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            d3m::model_loss_grad(model, {0.3, -1.2}, 1, 8, noise, grads, true));
    }
}
BENCHMARK(BM_elbo_grad);

void BM_max_disagreement(benchmark::State& state) {
    const auto model = bench_model();
    d3m::Rng rng(3);
    auto batch = d3m::data::gen_shift({2, 4.0, 4.0}, d3m::data::ShiftKind::deteriorating, 0.0,
                                      static_cast<size_t>(state.range(0)), rng);
    d3m::CalibrationConfig cfg;
    cfg.batch_size = static_cast<size_t>(state.range(0));
    cfg.posterior_samples = 1000;
    for (auto _ : state) {
        benchmark::DoNotOptimize(d3m::max_disagreement(model, batch.inputs, cfg, d3m::Rng(9)));
    }
}
BENCHMARK(BM_max_disagreement)->Arg(50)->Arg(100);

void BM_oracle_calibrate(benchmark::State& state) {
    auto inst = d3m::oracle::regime1_instance();
    const auto hp = d3m::oracle::build_Hp(inst, d3m::oracle::kRegime1Eps);
    for (auto _ : state) {
        d3m::Rng rng(11);
        benchmark::DoNotOptimize(
            d3m::oracle::idealized_calibrate(inst, hp, 100, 200, rng));
    }
}
BENCHMARK(BM_oracle_calibrate);

} // namespace

BENCHMARK_MAIN();
