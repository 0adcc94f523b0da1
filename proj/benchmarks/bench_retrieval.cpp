#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "icl/retrieval.hpp"

using namespace icl::retrieval;

namespace {

std::vector<Document> make_corpus(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Document> docs;
  docs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string text;
    const auto len = 8 + rng() % 24;
    for (std::size_t j = 0; j < len; ++j) text += "w" + std::to_string(rng() % vocab) + " ";
    docs.push_back({"d" + std::to_string(i), std::move(text)});
  }
  return docs;
}

}  // namespace

static void BM_Bm25Build(benchmark::State& state) {
  const auto docs = make_corpus(static_cast<std::size_t>(state.range(0)), 5000, 1);
  for (auto _ : state) benchmark::DoNotOptimize(Bm25Index::build(docs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Bm25Build)->Arg(1000)->Arg(10000);

static void BM_Bm25ScoreAll(benchmark::State& state) {
  const auto docs = make_corpus(static_cast<std::size_t>(state.range(0)), 5000, 2);
  const auto index = Bm25Index::build(docs);
  const std::vector<std::string> query = {"w1", "w17", "w256", "w999", "w3000", "w42"};
  for (auto _ : state) benchmark::DoNotOptimize(index.score_all(query));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Bm25ScoreAll)->Arg(1000)->Arg(10000);

static void BM_Tokenize(benchmark::State& state) {
  const std::string text = "The quick brown fox, jumping over the lazy dog; naïve café déjà-vu 42 times!";
  for (auto _ : state) benchmark::DoNotOptimize(tokenize(text));
}
BENCHMARK(BM_Tokenize);

BENCHMARK_MAIN();
