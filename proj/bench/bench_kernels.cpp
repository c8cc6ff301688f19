// Serial reference vs OpenMP kernels, and the per-item corpus loop.
//
//   ./convis_bench --benchmark_filter=combine

#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <spdlog/spdlog.h>

#include "convis/harness.hpp"
#include "convis/kernels.hpp"

using namespace convis;

namespace {

struct Rows {
  std::vector<double> orig, out;
  std::vector<std::vector<double>> gens;
  std::vector<std::span<const double>> views;

  Rows(std::size_t vocab, std::size_t n) : orig(vocab), out(vocab), gens(n, std::vector<double>(vocab)) {
    std::mt19937_64 gen(vocab * 31 + n);
    std::normal_distribution<double> d(0.0, 3.0);
    for (auto& x : orig) x = d(gen);
    for (auto& g : gens) {
      for (auto& x : g) x = d(gen);
      views.emplace_back(g);
    }
  }
};

template <auto Kernel>
void combine(benchmark::State& state) {
  Rows r(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) {
    Kernel(r.orig, r.views, 1.0, r.out);
    benchmark::DoNotOptimize(r.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void softmax(benchmark::State& state) {
  Rows r(static_cast<std::size_t>(state.range(0)), 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Kernel(r.orig, 1.0, r.out));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <auto Kernel>
void mean_rows(benchmark::State& state) {
  Rows r(static_cast<std::size_t>(state.range(0)), 8);
  for (auto _ : state) {
    Kernel(r.views, r.out);
    benchmark::DoNotOptimize(r.out.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

// 32k is a typical MLLM vocabulary; 256k is a large one.
#define VOCABS ->Arg(1 << 10)->Arg(1 << 15)->Arg(1 << 18)

BENCHMARK(combine<kernels::serial::contrastive_combine>) VOCABS;
BENCHMARK(combine<kernels::parallel::contrastive_combine>) VOCABS;
BENCHMARK(softmax<kernels::serial::softmax>) VOCABS;
BENCHMARK(softmax<kernels::parallel::softmax>) VOCABS;
BENCHMARK(mean_rows<kernels::serial::mean_rows>) VOCABS;
BENCHMARK(mean_rows<kernels::parallel::mean_rows>) VOCABS;

// Captioning a testbed corpus with ConVis, items serial vs OpenMP.
void corpus(benchmark::State& state) {
  spdlog::set_level(spdlog::level::off);
  auto engine = make_engine(BackendConfig{});
  RngStream rng(3);
  const auto items = testbed::make_corpus(engine.testbed->world(), 200, rng);
  MethodSpec spec;
  spec.method = Method::convis;
  spec.convis = ConvisConfig::for_task(TaskKind::captioning);
  for (auto _ : state) {
    auto out = run_chair_testbed(engine, items, kDefaultCaptionPrompt, spec, state.range(0) != 0);
    benchmark::DoNotOptimize(out.chair->chair_s);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(items.size()));
}
BENCHMARK(corpus)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
