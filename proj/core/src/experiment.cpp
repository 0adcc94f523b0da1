#include "icl/experiment.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <thread>

#include "icl/error.hpp"

namespace icl {

using selection::Strategy;

// Pass-through backend that counts the calls one phase of a run makes.
class ExperimentRunner::CallCounter final : public lm::LogProbBackend {
 public:
  explicit CallCounter(const lm::LogProbBackend& inner) : inner_(inner) {}
  std::string name() const override { return inner_.name(); }

 protected:
  lm::TokenLogProbs do_logprob(std::string_view context, std::string_view continuation) const override {
    return inner_.conditional_logprob(context, continuation);
  }
  std::string do_generate(std::string_view prompt, int max_tokens,
                          std::span<const std::string> stop) const override {
    return inner_.generate(prompt, max_tokens, stop);
  }

 private:
  const lm::LogProbBackend& inner_;
};

namespace {

nlohmann::ordered_json nullable(const std::optional<std::string>& s) {
  return s ? nlohmann::ordered_json(*s) : nlohmann::ordered_json(nullptr);
}

nlohmann::ordered_json ids_of(const std::vector<selection::Candidate>& demos) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : demos) arr.push_back(d.id());
  return arr;
}

std::vector<std::string> texts_of(const std::vector<selection::Candidate>& demos) {
  std::vector<std::string> out;
  for (const auto& d : demos) out.push_back(d.demo_text);
  return out;
}

nlohmann::ordered_json base_trace(const std::string& test_id, const selection::SelectionConfig& cfg) {
  nlohmann::ordered_json t;
  t["test_id"] = test_id;
  t["strategy"] = selection::to_string(cfg.strategy);
  t["lambda"] = cfg.strategy == Strategy::dva ? nlohmann::ordered_json(cfg.lambda) : nlohmann::ordered_json(nullptr);
  t["validation_id"] = nullptr;
  t["scored"] = nlohmann::ordered_json::array();
  t["selected"] = nlohmann::ordered_json::array();
  return t;
}

}  // namespace

nlohmann::ordered_json to_json(const selection::SelectionConfig& cfg) {
  nlohmann::ordered_json j;
  j["strategy"] = selection::to_string(cfg.strategy);
  j["k"] = cfg.k;
  j["n_shot"] = cfg.n_shot;
  j["lambda"] = cfg.lambda;
  j["ordering"] = selection::to_string(cfg.ordering);
  j["validation"] = selection::to_string(cfg.validation);
  j["normalization"] = selection::to_string(cfg.normalization);
  j["seed"] = cfg.seed;
  return j;
}

nlohmann::ordered_json Report::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["strategy"] = strategy;
  j["seed"] = seed;
  j["config"] = config;
  nlohmann::ordered_json agg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : aggregates) agg[k] = v;
  j["aggregates"] = std::move(agg);
  j["instances"] = predictions.size() + failures.size();
  auto failed = nlohmann::ordered_json::array();
  auto details = nlohmann::ordered_json::array();
  for (const auto& f : failures) {
    failed.push_back(f.test_id);
    details.push_back({{"test_id", f.test_id}, {"error", f.error}});
  }
  j["failures"] = std::move(failed);
  j["failure_details"] = std::move(details);
  auto per = nlohmann::ordered_json::array();
  for (const auto& p : predictions) {
    nlohmann::ordered_json e;
    e["test_id"] = p.test_id;
    e["predicted"] = p.predicted;
    e["gold"] = nullable(p.gold);
    e["correct"] = p.correct ? nlohmann::ordered_json(*p.correct) : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json m = nlohmann::ordered_json::object();
    for (const auto& [k, v] : p.metric_values) m[k] = v;
    e["metrics"] = std::move(m);
    per.push_back(std::move(e));
  }
  j["per_instance"] = std::move(per);
  return j;
}

void Report::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void Report::write_trace(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : traces) out << t.dump() << '\n';
}

ExperimentRunner::ExperimentRunner(const corpus::Dataset& data, std::shared_ptr<const lm::LogProbBackend> backend,
                                   Providers providers, int concurrency)
    : data_(data),
      backend_(std::move(backend)),
      providers_(std::move(providers)),
      concurrency_(std::max(1, concurrency)),
      train_index_(data.train) {
  if (backend_) {
    selection_backend_ = std::make_unique<CallCounter>(*backend_);
    prediction_backend_ = std::make_unique<CallCounter>(*backend_);
  }
}

ExperimentRunner::~ExperimentRunner() = default;

std::uint64_t ExperimentRunner::selection_calls() const {
  return selection_backend_ ? selection_backend_->calls() : 0;
}

std::uint64_t ExperimentRunner::prediction_calls() const {
  return prediction_backend_ ? prediction_backend_->calls() : 0;
}

template <typename Fn>
void ExperimentRunner::parallel_for(std::size_t n, Fn&& fn) const {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(concurrency_), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!first_error) first_error = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (first_error) std::rethrow_exception(first_error);
}

const retrieval::SimilarityProvider& ExperimentRunner::provider_for(Strategy s) const {
  const auto& p = s == Strategy::bm25 ? providers_.bm25 : s == Strategy::topk ? providers_.dense : providers_.retriever;
  if (!p) throw ConfigError("strategy '" + std::string(selection::to_string(s)) + "' needs a retriever");
  return *p;
}

void ExperimentRunner::check_config(const selection::SelectionConfig& cfg) const {
  cfg.validate();
  if (cfg.n_shot == 0 || cfg.strategy == Strategy::random) return;
  provider_for(cfg.strategy);
  if ((cfg.strategy == Strategy::dva || cfg.strategy == Strategy::cone || cfg.strategy == Strategy::oracle) &&
      !backend_) {
    throw ConfigError("strategy '" + std::string(selection::to_string(cfg.strategy)) + "' needs a model backend");
  }
}

std::vector<retrieval::Scored> ExperimentRunner::retrieve(const retrieval::SimilarityProvider& provider,
                                                          std::size_t test_index, int k) {
  std::optional<std::vector<retrieval::Scored>>* slot = nullptr;
  {
    std::lock_guard lock(cache_mu_);
    auto& per_test = retrieval_cache_[{std::string(provider.name()), k}];
    if (per_test.empty()) per_test.resize(data_.test.size());
    slot = &per_test[test_index];
  }
  if (!*slot) *slot = retrieval::retrieve_top_k(provider, data_.test[test_index], static_cast<std::size_t>(k));
  return **slot;
}

const selection::ValidatedCandidates& ExperimentRunner::validated(const selection::SelectionConfig& cfg,
                                                                  std::size_t test_index,
                                                                  const selection::CandidateSet& set) {
  const std::uint64_t seed_key = cfg.validation == selection::ValidationPolicy::random ? cfg.seed : 0;
  std::optional<selection::ValidatedCandidates>* slot = nullptr;
  {
    std::lock_guard lock(cache_mu_);
    auto& per_test = score_cache_[{std::string(provider_for(cfg.strategy).name()), cfg.k,
                                   static_cast<int>(cfg.validation), static_cast<int>(cfg.normalization), seed_key}];
    if (per_test.empty()) per_test.resize(data_.test.size());
    slot = &per_test[test_index];
  }
  if (!*slot) {
    const selection::ScoringContext ctx{*selection_backend_, data_.tmpl, cfg.normalization};
    *slot = selection::score_candidates(ctx, set, data_.test[test_index], cfg.validation, cfg.seed);
  }
  return **slot;
}

InstanceSelection ExperimentRunner::select_instance(const selection::SelectionConfig& cfg, std::size_t test_index) {
  const auto& test = data_.test[test_index];
  InstanceSelection out{test.id, {}, base_trace(test.id, cfg), std::nullopt};
  if (cfg.n_shot == 0) return out;

  if (cfg.strategy == Strategy::random) {
    auto demos = selection::select_random(data_.train, test, data_.tmpl, cfg.n_shot, cfg.seed);
    demos = selection::apply_order(demos, selection::prompt_order(demos.size(), cfg.ordering, cfg.seed, test.id));
    out.trace["selected"] = ids_of(demos);
    out.demos = texts_of(demos);
    return out;
  }

  const auto& provider = provider_for(cfg.strategy);
  const auto retrieved = retrieve(provider, test_index, cfg.k);
  const auto set = selection::make_candidate_set(test, retrieved, train_index_, data_.tmpl, cfg.k);

  switch (cfg.strategy) {
    case Strategy::dva: {
      const auto picked = selection::rank_dva(validated(cfg, test_index, set), cfg, test.id);
      out.trace["validation_id"] = picked.validation.id();
      for (const auto& s : picked.scored) {
        nlohmann::ordered_json e;
        e["id"] = s.candidate.id();
        e["l_v"] = s.l_v;
        e["epsilon"] = s.epsilon;
        e["score"] = s.score;
        e["retrieval_rank"] = s.candidate.retrieval_rank;
        out.trace["scored"].push_back(std::move(e));
      }
      for (const auto& s : picked.prompt()) {
        out.trace["selected"].push_back(s.candidate.id());
        out.demos.push_back(s.candidate.demo_text);
      }
      if (!picked.warnings.empty()) out.trace["warnings"] = picked.warnings;
      break;
    }
    case Strategy::cone: {
      const selection::ScoringContext ctx{*selection_backend_, data_.tmpl, cfg.normalization};
      const auto cone = selection::select_cone(ctx, set, test, cfg.n_shot);
      for (const auto& s : cone.scored) {
        out.trace["scored"].push_back(
            {{"id", s.candidate.id()}, {"score", s.score}, {"retrieval_rank", s.candidate.retrieval_rank}});
      }
      std::vector<selection::Candidate> best;
      for (auto i : cone.best_first) best.push_back(cone.scored[i].candidate);
      const auto demos = selection::apply_order(best, selection::prompt_order(best.size(), cfg.ordering, cfg.seed, test.id));
      out.trace["selected"] = ids_of(demos);
      out.demos = texts_of(demos);
      break;
    }
    case Strategy::oracle: {
      const selection::ScoringContext ctx{*selection_backend_, data_.tmpl, cfg.normalization};
      const auto ranked = selection::oracle_select(ctx, set, test, static_cast<int>(set.candidates.size()));
      std::vector<selection::Candidate> best;
      for (const auto& r : ranked) {
        out.trace["scored"].push_back(
            {{"id", r.candidate.id()}, {"l_t", r.l_t}, {"retrieval_rank", r.candidate.retrieval_rank}});
        if (best.size() < static_cast<std::size_t>(cfg.n_shot)) best.push_back(r.candidate);
      }
      if (best.size() < static_cast<std::size_t>(cfg.n_shot)) {
        throw DataError("oracle: test '" + test.id + "' has too few candidates");
      }
      const auto demos = selection::apply_order(best, selection::prompt_order(best.size(), cfg.ordering, cfg.seed, test.id));
      out.trace["selected"] = ids_of(demos);
      out.demos = texts_of(demos);
      break;
    }
    case Strategy::bm25:
    case Strategy::topk: {
      for (const auto& c : set.candidates) {
        out.trace["scored"].push_back(
            {{"id", c.id()}, {"similarity", c.retrieval_similarity}, {"retrieval_rank", c.retrieval_rank}});
      }
      const auto demos = selection::select_baseline(nullptr, set, test, data_.train, cfg);
      out.trace["selected"] = ids_of(demos);
      out.demos = texts_of(demos);
      break;
    }
    case Strategy::random: break;
  }
  return out;
}

std::vector<InstanceSelection> ExperimentRunner::select(const selection::SelectionConfig& cfg,
                                                        const std::vector<std::string>& test_ids) {
  check_config(cfg);
  std::vector<std::size_t> indices;
  if (test_ids.empty()) {
    for (std::size_t i = 0; i < data_.test.size(); ++i) indices.push_back(i);
  } else {
    for (const auto& id : test_ids) {
      std::size_t i = 0;
      while (i < data_.test.size() && data_.test[i].id != id) ++i;
      if (i == data_.test.size()) throw ConfigError("unknown test id '" + id + "'");
      indices.push_back(i);
    }
  }
  std::vector<InstanceSelection> out(indices.size());
  parallel_for(indices.size(), [&](std::size_t j) {
    try {
      out[j] = select_instance(cfg, indices[j]);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      out[j] = {data_.test[indices[j]].id, {}, {}, e.what()};
    }
  });
  return out;
}

Report ExperimentRunner::run(const selection::SelectionConfig& cfg, int max_new_tokens) {
  check_config(cfg);
  if (!backend_) throw ConfigError("evaluation needs a model backend");
  if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be at least 1");

  struct Outcome {
    std::optional<Prediction> prediction;
    nlohmann::ordered_json trace;
    std::optional<Failure> failure;
  };
  std::vector<Outcome> outcomes(data_.test.size());
  const std::vector<std::string> stop = {data_.tmpl.demo_separator()};

  parallel_for(data_.test.size(), [&](std::size_t i) {
    const auto& test = data_.test[i];
    try {
      auto sel = select_instance(cfg, i);
      const auto prompt = eval::assemble_prompt(sel.demos, test, data_.tmpl);
      Prediction p;
      p.test_id = test.id;
      p.gold = test.label;
      if (data_.task_kind == corpus::TaskKind::classification) {
        p.predicted = eval::classify(*prediction_backend_, prompt, corpus::answer_options(data_.tmpl, test));
        if (p.gold) {
          p.correct = p.predicted == *p.gold;
          p.metric_values["accuracy"] = *p.correct ? 1.0 : 0.0;
        }
      } else {
        p.predicted = prediction_backend_->generate(prompt.full_text, max_new_tokens, stop);
        if (p.gold) {
          p.metric_values["exact_match"] = eval::exact_match(p.predicted, *p.gold);
          p.metric_values["f1"] = eval::f1_token(p.predicted, *p.gold);
        }
      }
      outcomes[i].prediction = std::move(p);
      outcomes[i].trace = std::move(sel.trace);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      outcomes[i].failure = Failure{test.id, e.what()};
    }
  });

  Report report;
  report.dataset = data_.name;
  report.strategy = std::string(selection::to_string(cfg.strategy));
  report.seed = cfg.seed;
  report.config = to_json(cfg);
  report.config["dataset"] = data_.name;
  report.config["backend"] = backend_->name();
  report.config["retriever"] =
      providers_.retriever ? nlohmann::ordered_json(std::string(providers_.retriever->name())) : nlohmann::ordered_json(nullptr);
  report.config["max_new_tokens"] = max_new_tokens;

  std::map<std::string, double> sums;
  std::size_t labeled = 0;
  std::vector<std::string> preds, golds;
  for (auto& o : outcomes) {
    if (o.failure) {
      report.failures.push_back(std::move(*o.failure));
      continue;
    }
    auto& p = *o.prediction;
    if (p.gold) {
      ++labeled;
      for (const auto& [k, v] : p.metric_values) sums[k] += v;
      if (data_.task_kind == corpus::TaskKind::generation) {
        preds.push_back(p.predicted);
        golds.push_back(*p.gold);
      }
    }
    report.predictions.push_back(std::move(p));
    report.traces.push_back(std::move(o.trace));
  }
  if (labeled > 0) {
    for (const auto& [k, v] : sums) report.aggregates[k] = v / static_cast<double>(labeled);
    if (!preds.empty()) report.aggregates["bleu"] = eval::corpus_bleu(preds, golds);
  }
  return report;
}

}  // namespace icl
