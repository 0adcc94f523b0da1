#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/backend.hpp"
#include "icl/corpus.hpp"
#include "icl/evaluation.hpp"
#include "icl/retrieval.hpp"
#include "icl/selection.hpp"

namespace icl {

struct Prediction {
  std::string test_id;
  std::string predicted;
  std::optional<std::string> gold;
  std::optional<bool> correct;  // classification only
  std::map<std::string, double> metric_values;
};

struct Failure {
  std::string test_id;
  std::string error;
};

struct Report {
  std::string dataset;
  std::string strategy;
  nlohmann::ordered_json config;
  std::vector<Prediction> predictions;  // non-failed instances, test-split order
  std::map<std::string, double> aggregates;
  std::vector<Failure> failures;
  std::uint64_t seed = 0;
  std::vector<nlohmann::ordered_json> traces;  // one per non-failed instance

  nlohmann::ordered_json to_json() const;
  void write(const std::filesystem::path& path) const;
  void write_trace(const std::filesystem::path& path) const;
};

nlohmann::ordered_json to_json(const selection::SelectionConfig& cfg);

// Similarity providers available to a run. `retriever` serves dva, cone and
// oracle; the bm25 and topk baselines always use their own provider.
struct Providers {
  std::shared_ptr<const retrieval::SimilarityProvider> retriever;
  std::shared_ptr<const retrieval::SimilarityProvider> bm25;
  std::shared_ptr<const retrieval::SimilarityProvider> dense;
};

struct InstanceSelection {
  std::string test_id;
  std::vector<std::string> demos;  // prompt order
  nlohmann::ordered_json trace;
  std::optional<std::string> error;  // set when the instance was quarantined
};

// Runs selection and evaluation over a dataset's test split.
//
// Retrieval results and the lambda-independent D.Va quantities (validation
// example, l_v, epsilon per candidate) are memoized per test instance, so
// repeated runs that differ only in lambda, n_shot or ordering make no new
// selection-phase model calls. Instances run on up to `concurrency` threads;
// results are assembled in test-split order, so output never depends on
// scheduling.
class ExperimentRunner {
 public:
  ExperimentRunner(const corpus::Dataset& data, std::shared_ptr<const lm::LogProbBackend> backend,
                   Providers providers, int concurrency = 1);
  ~ExperimentRunner();

  Report run(const selection::SelectionConfig& cfg, int max_new_tokens = 64);

  // Selection only, for the given test ids (all when empty).
  std::vector<InstanceSelection> select(const selection::SelectionConfig& cfg,
                                        const std::vector<std::string>& test_ids = {});

  // Model calls made while selecting demonstrations / while predicting.
  std::uint64_t selection_calls() const;
  std::uint64_t prediction_calls() const;

 private:
  class CallCounter;

  InstanceSelection select_instance(const selection::SelectionConfig& cfg, std::size_t test_index);
  const retrieval::SimilarityProvider& provider_for(selection::Strategy s) const;
  std::vector<retrieval::Scored> retrieve(const retrieval::SimilarityProvider& provider, std::size_t test_index, int k);
  const selection::ValidatedCandidates& validated(const selection::SelectionConfig& cfg, std::size_t test_index,
                                                  const selection::CandidateSet& set);
  void check_config(const selection::SelectionConfig& cfg) const;
  template <typename Fn>
  void parallel_for(std::size_t n, Fn&& fn) const;

  const corpus::Dataset& data_;
  std::shared_ptr<const lm::LogProbBackend> backend_;
  std::unique_ptr<CallCounter> selection_backend_;
  std::unique_ptr<CallCounter> prediction_backend_;
  Providers providers_;
  int concurrency_;
  selection::ExampleIndex train_index_;

  std::mutex cache_mu_;
  // (provider, k) -> per-test retrieval results.
  std::map<std::pair<std::string, int>, std::vector<std::optional<std::vector<retrieval::Scored>>>> retrieval_cache_;
  // (provider, k, policy, normalization, seed) -> per-test validated candidates.
  std::map<std::tuple<std::string, int, int, int, std::uint64_t>,
           std::vector<std::optional<selection::ValidatedCandidates>>>
      score_cache_;
};

}  // namespace icl
