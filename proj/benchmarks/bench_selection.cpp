#include <benchmark/benchmark.h>

#include <map>
#include <random>
#include <string>
#include <vector>

#include "icl/selection.hpp"

using namespace icl;
using namespace icl::selection;

namespace {

const corpus::TaskTemplate& tmpl() {
  static const corpus::TaskTemplate t("Input: {text} Type:{answer}", "Input: {text} Type:",
                                      corpus::Verbalizations{{"a", " a"}, {"b", " b"}});
  return t;
}

corpus::Example example(const std::string& id, std::mt19937_64& rng) {
  std::string text;
  for (int j = 0; j < 12; ++j) text += std::string(j ? " " : "") + "w" + std::to_string(rng() % 50);
  return corpus::Example{id, {{"text", text}}, rng() % 2 ? "a" : "b"};
}

CandidateSet candidates(int k, std::mt19937_64& rng) {
  CandidateSet set{"t", {}, k};
  for (int r = 0; r < k; ++r) {
    auto ex = example("c" + std::to_string(r), rng);
    auto demo = corpus::render_demo(tmpl(), ex);
    set.candidates.push_back({std::move(ex), std::move(demo), r, 1.0 / (r + 1)});
  }
  return set;
}

lm::UnigramBackend model() {
  std::map<std::string, double> vocab;
  for (int i = 0; i < 50; ++i) vocab["w" + std::to_string(i)] = 0.9 / 50;
  for (const char* w : {"Input:", "Type:", "a", "b"}) vocab[w] = 0.025;
  return lm::UnigramBackend(vocab, 0.5);
}

}  // namespace

static void BM_ScoreCandidates(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto set = candidates(static_cast<int>(state.range(0)), rng);
  const auto test = example("t", rng);
  const auto lm = model();
  const ScoringContext ctx{lm, tmpl()};
  for (auto _ : state) benchmark::DoNotOptimize(score_candidates(ctx, set, test, ValidationPolicy::nearest));
}
BENCHMARK(BM_ScoreCandidates)->Arg(10)->Arg(30)->Arg(100);

static void BM_RankDva(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto set = candidates(static_cast<int>(state.range(0)), rng);
  const auto lm = model();
  const auto validated = score_candidates({lm, tmpl()}, set, example("t", rng), ValidationPolicy::nearest);
  SelectionConfig cfg;
  cfg.k = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(rank_dva(validated, cfg, "t"));
}
BENCHMARK(BM_RankDva)->Arg(30)->Arg(300);

BENCHMARK_MAIN();
