#include <benchmark/benchmark.h>

#include <vector>

#include "uaed/data.hpp"
#include "uaed/nn.hpp"
#include "uaed/objectives.hpp"
#include "uaed/random.hpp"
#include "uaed/theory.hpp"

namespace {

using namespace uaed;

data::Batch random_images(int n, data::ImageShape shape, Rng& rng) {
    data::Batch b;
    b.shape = shape;
    b.x.resize(n, shape.size());
    for (Eigen::Index i = 0; i < b.x.size(); ++i) {
        b.x.data()[i] = static_cast<float>(uniform_open(rng));
    }
    for (int i = 0; i < n; ++i) {
        b.labels.push_back(bernoulli(rng, 0.5) ? 1 : 0);
    }
    return b;
}

// One forward and backward pass of the desk-scale network on a 128-sample batch.
void BM_MlpStep(benchmark::State& state) {
    Rng rng(1);
    nn::Mlp<float> model({2 * 14 * 14, 256, 256, 1}, nn::Activation::relu, rng);
    const auto batch = random_images(128, {2, 14, 14}, rng);
    nn::Mlp<float>::Vector grad;
    for (auto _ : state) {
        const auto t = model.forward(batch.x);
        const Eigen::VectorXd d = objectives::env_risk_grad(t.logits.cast<double>(), batch.labels);
        grad.setZero(model.parameters().size());
        model.backward(t, d.cast<float>(), nullptr, grad);
        benchmark::DoNotOptimize(grad.data());
    }
    state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_MlpStep)->Unit(benchmark::kMicrosecond);

void BM_Rotate(benchmark::State& state) {
    Rng rng(2);
    const auto batch = random_images(128, {1, 14, 14}, rng);
    const double degrees = static_cast<double>(state.range(0));
    for (auto _ : state) {
        auto out = data::rotate_degrees(batch, degrees);
        benchmark::DoNotOptimize(out.x.data());
    }
    state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_Rotate)->Arg(45)->Arg(90)->Unit(benchmark::kMicrosecond);

void BM_EntropicDual(benchmark::State& state) {
    Rng rng(3);
    const auto instance = theory::random_instance(static_cast<std::size_t>(state.range(0)), rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(theory::entropic_dual(instance, 0.3));
    }
}
BENCHMARK(BM_EntropicDual)->Arg(2)->Arg(8);

void BM_WorstCaseKlBall(benchmark::State& state) {
    Rng rng(4);
    const auto instance = theory::random_instance(static_cast<std::size_t>(state.range(0)), rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(theory::worst_case_kl_ball(instance, 0.3));
    }
}
BENCHMARK(BM_WorstCaseKlBall)->Arg(2)->Arg(8);

void BM_CoralPenalty(benchmark::State& state) {
    Rng rng(5);
    std::vector<Eigen::MatrixXd> features;
    for (int e = 0; e < 3; ++e) {
        Eigen::MatrixXd f(128, 256);
        for (Eigen::Index i = 0; i < f.size(); ++i) {
            f.data()[i] = uniform_open(rng);
        }
        features.push_back(std::move(f));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(objectives::coral_penalty_grad(features));
    }
}
BENCHMARK(BM_CoralPenalty)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
