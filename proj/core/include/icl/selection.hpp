#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "icl/backend.hpp"
#include "icl/corpus.hpp"
#include "icl/retrieval.hpp"

namespace icl::selection {

enum class Strategy { random, bm25, topk, cone, dva, oracle };
enum class Ordering { descending, ascending, shuffled };
enum class ValidationPolicy { nearest, random, furthest };
enum class Normalization { sum, per_token };

std::string_view to_string(Strategy s);
std::string_view to_string(Ordering o);
std::string_view to_string(ValidationPolicy p);
std::string_view to_string(Normalization n);
Strategy parse_strategy(std::string_view text);
Ordering parse_ordering(std::string_view text);  // "random" is accepted for shuffled
ValidationPolicy parse_validation_policy(std::string_view text);
Normalization parse_normalization(std::string_view text);

struct SelectionConfig {
  Strategy strategy = Strategy::dva;
  int k = 30;
  int n_shot = 8;
  double lambda = 0.6;
  Ordering ordering = Ordering::descending;
  ValidationPolicy validation = ValidationPolicy::nearest;
  Normalization normalization = Normalization::sum;
  std::uint64_t seed = 0;

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

// Deterministic per-instance seed derived from the run seed, the test id and a purpose tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view test_id, std::string_view purpose);

struct Candidate {
  corpus::Example example;
  std::string demo_text;
  int retrieval_rank = 0;  // 0 = most similar
  double retrieval_similarity = 0.0;

  const std::string& id() const { return example.id; }
};

struct CandidateSet {
  std::string test_id;
  std::vector<Candidate> candidates;  // ordered by retrieval_rank
  int k = 0;
};

// id -> example over a split, for turning retrieval hits back into examples.
class ExampleIndex {
 public:
  explicit ExampleIndex(std::span<const corpus::Example> examples);
  const corpus::Example& at(std::string_view id) const;  // throws DataError

 private:
  std::unordered_map<std::string_view, const corpus::Example*> by_id_;
};

CandidateSet make_candidate_set(const corpus::Example& test, std::span<const retrieval::Scored> retrieved,
                                const ExampleIndex& train, const corpus::TaskTemplate& tmpl, int k);

struct ValidationSplit {
  Candidate validation;
  std::vector<Candidate> remaining;  // original order, validation removed
};

// nearest -> rank 0, furthest -> last rank, random -> uniform draw seeded by (seed, test_id).
ValidationSplit split_validation(const CandidateSet& set, ValidationPolicy policy, std::uint64_t seed = 0);

// What the scoring equations need from a model: a backend, the template that
// renders contexts, and whether log-likelihoods are raw sums or per-token means.
struct ScoringContext {
  const lm::LogProbBackend& backend;
  const corpus::TaskTemplate& tmpl;
  Normalization normalization = Normalization::sum;
};

// log P(continuation | context) under the context's normalization.
double log_likelihood(const ScoringContext& ctx, std::string_view context, std::string_view continuation);

// L_v = -log P(y_v | d, x_v). An empty validation answer yields 0 and appends a warning.
double validation_loss(const ScoringContext& ctx, const Candidate& d, const corpus::Example& validation,
                       std::vector<std::string>* warnings = nullptr);

// L_t = -log P(y_t | d, x_t); needs a labeled test example.
double test_loss(const ScoringContext& ctx, const Candidate& d, const corpus::Example& test);

// epsilon = log P(x_v | d) - log P(x_t | d). Negative when the model prefers the test input.
double calibration_remainder(const ScoringContext& ctx, const Candidate& d, const corpus::Example& test,
                             const corpus::Example& validation);

double epsilon_from_logprobs(double logp_test, double logp_validation);

// (1 - lambda) * l_v + lambda * epsilon. Throws ConfigError unless 0 <= lambda <= 1.
double dva_score(double l_v, double epsilon, double lambda);

// Bradley-Terry preference of the model for the test input over the
// validation input given d. The log-odds are kept alongside the
// probabilities so the remainder stays finite when one side rounds to 0.
struct Preference {
  double test = 0.5;        // P(x_v < x_t | d)
  double validation = 0.5;  // 1 - test, computed independently
  double log_odds = 0.0;    // log(test / validation)

  // -log(p / (1 - p)).
  double calibration_remainder() const;
};

Preference preference_from_logprobs(double logp_test, double logp_validation);

// Always uses unnormalized sums.
Preference bt_preference(const lm::LogProbBackend& backend, const corpus::TaskTemplate& tmpl, const Candidate& d,
                         const corpus::Example& test, const corpus::Example& validation);

struct ScoredCandidate {
  Candidate candidate;
  double l_v = 0.0;
  double epsilon = 0.0;
  double score = 0.0;
  std::optional<int> selected_rank;  // position in the final prompt, 0 = first
};

// The lambda-independent part of a D.Va run: one validation example and
// (l_v, epsilon) for every remaining candidate, in retrieval order.
struct ValidatedCandidates {
  Candidate validation;
  std::vector<ScoredCandidate> scored;
  std::vector<std::string> warnings;
};

ValidatedCandidates score_candidates(const ScoringContext& ctx, const CandidateSet& set,
                                     const corpus::Example& test, ValidationPolicy policy, std::uint64_t seed = 0);

struct DvaSelection {
  Candidate validation;
  std::vector<ScoredCandidate> scored;  // retrieval order; chosen entries carry selected_rank
  std::vector<std::size_t> prompt_order;  // indices into scored, in prompt order
  std::vector<std::string> warnings;

  std::vector<ScoredCandidate> prompt() const;
};

// Applies the score with cfg.lambda, keeps the n_shot smallest (ties by
// retrieval rank) and orders them per cfg.ordering. No backend calls.
DvaSelection rank_dva(ValidatedCandidates validated, const SelectionConfig& cfg, std::string_view test_id);

DvaSelection select_dva(const ScoringContext& ctx, const CandidateSet& set, const corpus::Example& test,
                        const SelectionConfig& cfg);

// Orders a best-first selection for the prompt. descending puts the best
// demonstration last (nearest the query), ascending puts it first.
std::vector<std::size_t> prompt_order(std::size_t count, Ordering ordering, std::uint64_t seed,
                                      std::string_view test_id);

template <typename T>
std::vector<T> apply_order(const std::vector<T>& best_first, const std::vector<std::size_t>& order) {
  std::vector<T> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(best_first[i]);
  return out;
}

struct ConeSelection {
  std::vector<ScoredCandidate> scored;  // score = -log P(x_t | d); l_v and epsilon unused
  std::vector<std::size_t> best_first;  // indices into scored
};

// Scores every candidate by the model's negative log-likelihood of the test input.
ConeSelection select_cone(const ScoringContext& ctx, const CandidateSet& set, const corpus::Example& test,
                          int n_shot);

// n_shot uniform draws without replacement from the pool, excluding the test id.
std::vector<Candidate> select_random(std::span<const corpus::Example> pool, const corpus::Example& test,
                                     const corpus::TaskTemplate& tmpl, int n_shot, std::uint64_t seed);

// Prompt-ordered demonstrations for random, bm25, topk and cone. `ctx` may be
// null for strategies that never consult the model.
std::vector<Candidate> select_baseline(const ScoringContext* ctx, const CandidateSet& set,
                                       const corpus::Example& test, std::span<const corpus::Example> pool,
                                       const SelectionConfig& cfg);

struct OracleScore {
  Candidate candidate;
  double l_t = 0.0;
};

// Candidates ranked by L_t ascending (ties by retrieval rank), top n.
std::vector<OracleScore> oracle_select(const ScoringContext& ctx, const CandidateSet& set,
                                       const corpus::Example& test, int n);

}  // namespace icl::selection
