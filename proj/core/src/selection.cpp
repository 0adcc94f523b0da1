#include "icl/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "icl/error.hpp"

namespace icl::selection {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Unbiased draw from [0, n) that depends only on the engine's output stream.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

// Indices of `scores` sorted ascending, ties by retrieval rank.
template <typename RankOf>
std::vector<std::size_t> argsort(const std::vector<double>& scores, RankOf rank_of) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return rank_of(a) < rank_of(b);
  });
  return idx;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string demo_prefix(const ScoringContext& ctx, const Candidate& d) {
  return d.demo_text + ctx.tmpl.demo_separator();
}

void require_candidates(std::size_t have, std::size_t need, std::string_view test_id, const char* what) {
  if (have < need) {
    throw DataError(std::string(what) + ": test '" + std::string(test_id) + "' has " + std::to_string(have) +
                    " candidate(s), needs " + std::to_string(need));
  }
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::bm25: return "bm25";
    case Strategy::topk: return "topk";
    case Strategy::cone: return "cone";
    case Strategy::dva: return "dva";
    case Strategy::oracle: return "oracle";
  }
  return "?";
}

std::string_view to_string(Ordering o) {
  switch (o) {
    case Ordering::descending: return "descending";
    case Ordering::ascending: return "ascending";
    case Ordering::shuffled: return "shuffled";
  }
  return "?";
}

std::string_view to_string(ValidationPolicy p) {
  switch (p) {
    case ValidationPolicy::nearest: return "nearest";
    case ValidationPolicy::random: return "random";
    case ValidationPolicy::furthest: return "furthest";
  }
  return "?";
}

std::string_view to_string(Normalization n) { return n == Normalization::sum ? "sum" : "per_token"; }

Strategy parse_strategy(std::string_view t) {
  for (auto s : {Strategy::random, Strategy::bm25, Strategy::topk, Strategy::cone, Strategy::dva, Strategy::oracle}) {
    if (to_string(s) == t) return s;
  }
  throw ConfigError("unknown strategy '" + std::string(t) + "'");
}

Ordering parse_ordering(std::string_view t) {
  if (t == "random") return Ordering::shuffled;
  for (auto o : {Ordering::descending, Ordering::ascending, Ordering::shuffled}) {
    if (to_string(o) == t) return o;
  }
  throw ConfigError("unknown ordering '" + std::string(t) + "'");
}

ValidationPolicy parse_validation_policy(std::string_view t) {
  for (auto p : {ValidationPolicy::nearest, ValidationPolicy::random, ValidationPolicy::furthest}) {
    if (to_string(p) == t) return p;
  }
  throw ConfigError("unknown validation policy '" + std::string(t) + "'");
}

Normalization parse_normalization(std::string_view t) {
  if (t == "sum") return Normalization::sum;
  if (t == "per_token" || t == "per-token" || t == "mean") return Normalization::per_token;
  throw ConfigError("unknown normalization '" + std::string(t) + "'");
}

void SelectionConfig::validate() const {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (n_shot < 0) throw ConfigError("n_shot must be non-negative");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (strategy == Strategy::dva && n_shot > k - 1) {
    throw ConfigError("dva needs n_shot <= k - 1 (one candidate is held out for validation)");
  }
  if ((strategy == Strategy::bm25 || strategy == Strategy::topk || strategy == Strategy::cone ||
       strategy == Strategy::oracle) &&
      n_shot > k) {
    throw ConfigError("n_shot must not exceed k");
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view test_id, std::string_view purpose) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001B3ULL;
    }
    h ^= 0xFF;
    h *= 0x100000001B3ULL;
  };
  mix(test_id);
  mix(purpose);
  return splitmix64(seed ^ splitmix64(h));
}

ExampleIndex::ExampleIndex(std::span<const corpus::Example> examples) {
  for (const auto& ex : examples) by_id_.emplace(ex.id, &ex);
}

const corpus::Example& ExampleIndex::at(std::string_view id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw DataError("unknown example id '" + std::string(id) + "'");
  return *it->second;
}

CandidateSet make_candidate_set(const corpus::Example& test, std::span<const retrieval::Scored> retrieved,
                                const ExampleIndex& train, const corpus::TaskTemplate& tmpl, int k) {
  CandidateSet set;
  set.test_id = test.id;
  set.k = k;
  const std::size_t n = std::min(retrieved.size(), static_cast<std::size_t>(std::max(k, 0)));
  set.candidates.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& ex = train.at(retrieved[r].id);
    set.candidates.push_back({ex, corpus::render_demo(tmpl, ex), static_cast<int>(r), retrieved[r].similarity});
  }
  return set;
}

ValidationSplit split_validation(const CandidateSet& set, ValidationPolicy policy, std::uint64_t seed) {
  require_candidates(set.candidates.size(), 2, set.test_id, "split_validation");
  std::size_t pick = 0;
  switch (policy) {
    case ValidationPolicy::nearest: pick = 0; break;
    case ValidationPolicy::furthest: pick = set.candidates.size() - 1; break;
    case ValidationPolicy::random: {
      std::mt19937_64 rng(derive_seed(seed, set.test_id, "validation"));
      pick = uniform_index(rng, set.candidates.size());
      break;
    }
  }
  ValidationSplit split{set.candidates[pick], {}};
  split.remaining.reserve(set.candidates.size() - 1);
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    if (i != pick) split.remaining.push_back(set.candidates[i]);
  }
  return split;
}

double log_likelihood(const ScoringContext& ctx, std::string_view context, std::string_view continuation) {
  const auto lp = ctx.backend.conditional_logprob(context, continuation);
  return ctx.normalization == Normalization::sum ? lp.total : lp.mean();
}

double validation_loss(const ScoringContext& ctx, const Candidate& d, const corpus::Example& validation,
                       std::vector<std::string>* warnings) {
  if (!validation.label) throw DataError("validation example '" + validation.id + "' has no label");
  const auto q = corpus::render_query(ctx.tmpl, validation);
  if (q.answer.empty()) {
    if (warnings) warnings->push_back("validation example '" + validation.id + "' renders an empty answer");
    return 0.0;
  }
  return -log_likelihood(ctx, demo_prefix(ctx, d) + q.context, q.answer);
}

double test_loss(const ScoringContext& ctx, const Candidate& d, const corpus::Example& test) {
  if (!test.label) throw DataError("test example '" + test.id + "' has no label; the oracle needs ground truth");
  const auto q = corpus::render_query(ctx.tmpl, test);
  return -log_likelihood(ctx, demo_prefix(ctx, d) + q.context, q.answer);
}

double epsilon_from_logprobs(double logp_test, double logp_validation) { return logp_validation - logp_test; }

double calibration_remainder(const ScoringContext& ctx, const Candidate& d, const corpus::Example& test,
                             const corpus::Example& validation) {
  const std::string prefix = demo_prefix(ctx, d);
  const double logp_test = log_likelihood(ctx, prefix, corpus::render_query(ctx.tmpl, test).context);
  const double logp_validation = log_likelihood(ctx, prefix, corpus::render_query(ctx.tmpl, validation).context);
  return epsilon_from_logprobs(logp_test, logp_validation);
}

double dva_score(double l_v, double epsilon, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  return (1.0 - lambda) * l_v + lambda * epsilon;
}

double Preference::calibration_remainder() const { return -log_odds; }

Preference preference_from_logprobs(double logp_test, double logp_validation) {
  // P(x_t|d) / (P(x_t|d) + P(x_v|d)) == sigmoid(log P(x_t|d) - log P(x_v|d)).
  const double diff = logp_test - logp_validation;
  return {sigmoid(diff), sigmoid(-diff), diff};
}

Preference bt_preference(const lm::LogProbBackend& backend, const corpus::TaskTemplate& tmpl, const Candidate& d,
                         const corpus::Example& test, const corpus::Example& validation) {
  const ScoringContext ctx{backend, tmpl, Normalization::sum};
  const std::string prefix = demo_prefix(ctx, d);
  const double logp_test = log_likelihood(ctx, prefix, corpus::render_query(tmpl, test).context);
  const double logp_validation = log_likelihood(ctx, prefix, corpus::render_query(tmpl, validation).context);
  return preference_from_logprobs(logp_test, logp_validation);
}

ValidatedCandidates score_candidates(const ScoringContext& ctx, const CandidateSet& set,
                                     const corpus::Example& test, ValidationPolicy policy, std::uint64_t seed) {
  auto split = split_validation(set, policy, seed);
  ValidatedCandidates out{std::move(split.validation), {}, {}};
  const auto& v = out.validation.example;
  out.scored.reserve(split.remaining.size());
  for (auto& d : split.remaining) {
    ScoredCandidate s;
    s.l_v = validation_loss(ctx, d, v, &out.warnings);
    s.epsilon = calibration_remainder(ctx, d, test, v);
    s.candidate = std::move(d);
    out.scored.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> prompt_order(std::size_t count, Ordering ordering, std::uint64_t seed,
                                      std::string_view test_id) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  switch (ordering) {
    case Ordering::ascending: break;
    case Ordering::descending: std::reverse(order.begin(), order.end()); break;
    case Ordering::shuffled: {
      std::mt19937_64 rng(derive_seed(seed, test_id, "order"));
      for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
      break;
    }
  }
  return order;
}

DvaSelection rank_dva(ValidatedCandidates validated, const SelectionConfig& cfg, std::string_view test_id) {
  require_candidates(validated.scored.size(), static_cast<std::size_t>(cfg.n_shot), test_id, "select_dva");
  DvaSelection out{std::move(validated.validation), std::move(validated.scored), {}, std::move(validated.warnings)};
  std::vector<double> scores;
  scores.reserve(out.scored.size());
  for (auto& s : out.scored) {
    s.score = dva_score(s.l_v, s.epsilon, cfg.lambda);
    s.selected_rank.reset();
    scores.push_back(s.score);
  }
  auto best = argsort(scores, [&](std::size_t i) { return out.scored[i].candidate.retrieval_rank; });
  best.resize(static_cast<std::size_t>(cfg.n_shot));
  const auto order = prompt_order(best.size(), cfg.ordering, cfg.seed, test_id);
  out.prompt_order = apply_order(best, order);
  for (std::size_t pos = 0; pos < out.prompt_order.size(); ++pos) {
    out.scored[out.prompt_order[pos]].selected_rank = static_cast<int>(pos);
  }
  return out;
}

std::vector<ScoredCandidate> DvaSelection::prompt() const {
  std::vector<ScoredCandidate> out;
  out.reserve(prompt_order.size());
  for (auto i : prompt_order) out.push_back(scored[i]);
  return out;
}

DvaSelection select_dva(const ScoringContext& ctx, const CandidateSet& set, const corpus::Example& test,
                        const SelectionConfig& cfg) {
  require_candidates(set.candidates.size(), static_cast<std::size_t>(cfg.n_shot) + 1, set.test_id, "select_dva");
  return rank_dva(score_candidates(ctx, set, test, cfg.validation, cfg.seed), cfg, set.test_id);
}

ConeSelection select_cone(const ScoringContext& ctx, const CandidateSet& set, const corpus::Example& test,
                          int n_shot) {
  require_candidates(set.candidates.size(), static_cast<std::size_t>(n_shot), set.test_id, "select_cone");
  const std::string query = corpus::render_query(ctx.tmpl, test).context;
  ConeSelection out;
  std::vector<double> scores;
  for (const auto& d : set.candidates) {
    ScoredCandidate s;
    s.candidate = d;
    s.score = -log_likelihood(ctx, demo_prefix(ctx, d), query);
    scores.push_back(s.score);
    out.scored.push_back(std::move(s));
  }
  out.best_first = argsort(scores, [&](std::size_t i) { return out.scored[i].candidate.retrieval_rank; });
  out.best_first.resize(static_cast<std::size_t>(n_shot));
  return out;
}

std::vector<Candidate> select_random(std::span<const corpus::Example> pool, const corpus::Example& test,
                                     const corpus::TaskTemplate& tmpl, int n_shot, std::uint64_t seed) {
  std::size_t eligible = 0;
  for (const auto& ex : pool) eligible += ex.id != test.id;
  require_candidates(eligible, static_cast<std::size_t>(n_shot), test.id, "select_random");

  std::mt19937_64 rng(derive_seed(seed, test.id, "random"));
  std::set<std::size_t> taken;
  std::vector<Candidate> out;
  while (out.size() < static_cast<std::size_t>(n_shot)) {
    const std::size_t i = uniform_index(rng, pool.size());
    if (pool[i].id == test.id || !taken.insert(i).second) continue;
    out.push_back({pool[i], corpus::render_demo(tmpl, pool[i]), static_cast<int>(out.size()), 0.0});
  }
  return out;
}

std::vector<Candidate> select_baseline(const ScoringContext* ctx, const CandidateSet& set,
                                       const corpus::Example& test, std::span<const corpus::Example> pool,
                                       const SelectionConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.n_shot);
  std::vector<Candidate> best_first;
  switch (cfg.strategy) {
    case Strategy::random:
      if (ctx == nullptr) throw ConfigError("random selection needs the task template");
      best_first = select_random(pool, test, ctx->tmpl, cfg.n_shot, cfg.seed);
      break;
    case Strategy::bm25:
    case Strategy::topk:
      require_candidates(set.candidates.size(), n, set.test_id, "select_baseline");
      best_first.assign(set.candidates.begin(), set.candidates.begin() + static_cast<std::ptrdiff_t>(n));
      break;
    case Strategy::cone: {
      if (ctx == nullptr) throw ConfigError("cone selection needs a backend");
      const auto cone = select_cone(*ctx, set, test, cfg.n_shot);
      for (auto i : cone.best_first) best_first.push_back(cone.scored[i].candidate);
      break;
    }
    case Strategy::dva:
    case Strategy::oracle:
      throw ConfigError("select_baseline does not handle strategy '" + std::string(to_string(cfg.strategy)) + "'");
  }
  return apply_order(best_first, prompt_order(best_first.size(), cfg.ordering, cfg.seed, test.id));
}

std::vector<OracleScore> oracle_select(const ScoringContext& ctx, const CandidateSet& set,
                                       const corpus::Example& test, int n) {
  if (!test.label) throw DataError("oracle_select: test example '" + test.id + "' has no label");
  std::vector<OracleScore> all;
  std::vector<double> losses;
  for (const auto& d : set.candidates) {
    all.push_back({d, test_loss(ctx, d, test)});
    losses.push_back(all.back().l_t);
  }
  const auto order = argsort(losses, [&](std::size_t i) { return all[i].candidate.retrieval_rank; });
  std::vector<OracleScore> out;
  for (std::size_t i = 0; i < order.size() && out.size() < static_cast<std::size_t>(std::max(n, 0)); ++i) {
    out.push_back(all[order[i]]);
  }
  return out;
}

}  // namespace icl::selection
