#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "icl/evaluation.hpp"

namespace {

std::vector<std::string> sentences(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const auto len = 10 + rng() % 20;
    for (std::size_t j = 0; j < len; ++j) s += std::string(j ? " " : "") + "t" + std::to_string(rng() % 200);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

static void BM_CorpusBleu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto hyp = sentences(n, 5);
  const auto ref = sentences(n, 6);
  for (auto _ : state) benchmark::DoNotOptimize(icl::eval::corpus_bleu(hyp, ref));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CorpusBleu)->Arg(100)->Arg(1000);

static void BM_TokenF1(benchmark::State& state) {
  const auto s = sentences(2, 7);
  for (auto _ : state) benchmark::DoNotOptimize(icl::eval::f1_token(s[0], s[1]));
}
BENCHMARK(BM_TokenF1);

BENCHMARK_MAIN();
