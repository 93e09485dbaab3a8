#include <random>

#include <benchmark/benchmark.h>

#include "gracelab/analysis.hpp"
#include "gracelab/corpus.hpp"
#include "gracelab/model.hpp"

using namespace gracelab;

namespace {

std::vector<corpus::TokenSequence> random_batch(std::uint32_t vocab, std::size_t n, std::size_t len) {
    std::mt19937_64 rng(1);
    std::vector<corpus::TokenSequence> out(n);
    for (auto& s : out) {
        for (std::size_t i = 0; i < len; ++i) {
            s.tokens.push_back(2 + static_cast<corpus::TokenId>(rng() % (vocab - 2)));
        }
    }
    return out;
}

void BM_ForwardBackward(benchmark::State& state) {
    const auto dim = static_cast<std::uint32_t>(state.range(0));
    const auto m = model::init_model({128, dim, 2, 2, 64, 1});
    const auto batch = random_batch(128, 16, 48);
    for (auto _ : state) {
        benchmark::DoNotOptimize(model::loss_and_gradient(m, batch));
    }
    state.SetItemsProcessed(state.iterations() * 16 * 48);
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Perplexity(benchmark::State& state) {
    const auto m = model::init_model({128, 32, 2, 2, 64, 1});
    corpus::DocumentSet docs{"x", random_batch(128, 64, 48)};
    for (auto _ : state) {
        benchmark::DoNotOptimize(model::perplexity(m, docs));
    }
}
BENCHMARK(BM_Perplexity)->Unit(benchmark::kMillisecond);

void BM_Pearson(benchmark::State& state) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    std::vector<double> x(static_cast<std::size_t>(state.range(0))), y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = g(rng);
        y[i] = g(rng);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(analysis::pearson(x, y));
    }
}
BENCHMARK(BM_Pearson)->Arg(19)->Arg(1024);

void BM_Cluster(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    analysis::CorrelationMatrix c;
    c.r.assign(n, std::vector<std::optional<double>>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        c.labels.push_back("c" + std::to_string(i));
        for (std::size_t k = i + 1; k < n; ++k) {
            c.r[i][k] = c.r[k][i] = u(rng);
        }
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(analysis::hierarchical_cluster(c));
    }
}
BENCHMARK(BM_Cluster)->Arg(8)->Arg(32)->Arg(128);

void BM_Randomize(benchmark::State& state) {
    const auto seq = random_batch(128, 1, 512).front();
    std::uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(corpus::randomize_text(seq, {4, ++seed}));
    }
}
BENCHMARK(BM_Randomize);

}  // namespace
BENCHMARK_MAIN();
