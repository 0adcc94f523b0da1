// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "icl/backend.hpp"
#include "icl/cli.hpp"
#include "icl/error.hpp"
#include "icl/evaluation.hpp"
#include "icl/experiment.hpp"
#include "icl/retrieval.hpp"
#include "icl/selection.hpp"
#include "support.hpp"

using namespace icl;
namespace sel = icl::selection;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

sel::Candidate candidate(const corpus::TaskTemplate& tmpl, const corpus::Example& ex, int rank) {
  return sel::Candidate{ex, corpus::render_demo(tmpl, ex), rank, 1.0 / (1 + rank)};
}

// Calibration remainder from the two context log-probabilities equals the
// Bradley-Terry log-odds computed through a backend.
Outcome eq3_matches_bt() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> logp(-60.0, -0.01);
  const corpus::TaskTemplate tmpl("Q: {q} A:{answer}", "Q: {q} A:", corpus::Verbalizations{{"y", " y"}, {"n", " n"}});
  const auto d = candidate(tmpl, testing::make_example("d", {{"q", "demo"}}, "y"), 1);
  const auto test = testing::make_example("t", {{"q", "test"}});
  const auto val = testing::make_example("v", {{"q", "valid"}}, "n");
  const std::string prefix = d.demo_text + tmpl.demo_separator();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double lt = logp(rng), lv = logp(rng);
    lm::MockBackend mock;
    mock.add_logprob(prefix, "Q: test A:", {lt});
    mock.add_logprob(prefix, "Q: valid A:", {lv});
    const sel::ScoringContext ctx{mock, tmpl, sel::Normalization::sum};
    const double eps = sel::calibration_remainder(ctx, d, test, val);
    const auto pref = sel::bt_preference(mock, tmpl, d, test, val);
    // p and 1 - p as reported by the preference; 1 - p is kept separately because
    // subtracting p from 1 cancels catastrophically once the log-odds grow large.
    worst = std::max(worst, std::abs(eps - -std::log(pref.test / pref.validation)));
    if (std::abs(lt - lv) < 10) worst = std::max(worst, std::abs(eps - -std::log(pref.test / (1.0 - pref.test))));
  }
  return {worst < 1e-9, "max |diff| " + fmt(worst) + " over 1000 pairs"};
}

// Builds a 30-candidate instance served entirely by a mock table.
struct MockInstance {
  corpus::TaskTemplate tmpl{"Q: {q} A:{answer}", "Q: {q} A:", corpus::Verbalizations{{"y", " y"}, {"n", " n"}}};
  corpus::Example test = testing::make_example("test", {{"q", "what now"}});
  sel::CandidateSet set;
  lm::MockBackend mock;
  std::vector<double> l_v, eps;  // per remaining candidate, retrieval order
};

MockInstance mock_instance(std::uint64_t seed, int k) {
  MockInstance m;
  std::mt19937_64 rng(seed);
  // Coarse values so ties occur and the rank tie-break is exercised.
  auto coarse = [&](double lo, double hi) {
    return std::round(std::uniform_real_distribution<double>(lo, hi)(rng) * 2.0) / 2.0;
  };
  m.set.test_id = m.test.id;
  m.set.k = k;
  for (int r = 0; r < k; ++r) {
    const auto ex = testing::make_example("c" + std::to_string(r), {{"q", "question " + std::to_string(r)}},
                                          r % 3 == 0 ? "n" : "y");
    m.set.candidates.push_back(candidate(m.tmpl, ex, r));
  }
  const auto& v = m.set.candidates.front().example;
  const auto vq = corpus::render_query(m.tmpl, v);
  const auto tq = corpus::render_query(m.tmpl, m.test);
  for (int r = 1; r < k; ++r) {
    const auto& d = m.set.candidates[static_cast<std::size_t>(r)];
    const std::string prefix = d.demo_text + m.tmpl.demo_separator();
    const double lv = coarse(0.5, 6.0);
    const double lt_ctx = -coarse(2.0, 9.0), lv_ctx = -coarse(2.0, 9.0);
    m.mock.add_logprob(prefix + vq.context, vq.answer, {-lv});
    m.mock.add_logprob(prefix, tq.context, {lt_ctx});
    m.mock.add_logprob(prefix, vq.context, {lv_ctx});
    m.l_v.push_back(lv);
    m.eps.push_back(lv_ctx - lt_ctx);
  }
  return m;
}

// Indices of the n smallest values, ties by position (= retrieval rank).
std::vector<std::size_t> n_smallest(const std::vector<double>& v, std::size_t n) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  idx.resize(std::min(n, idx.size()));
  return idx;
}

Outcome eq4_boundaries() {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto m = mock_instance(seed, 30);
    const sel::ScoringContext ctx{m.mock, m.tmpl, sel::Normalization::sum};
    for (double lambda : {0.0, 1.0}) {
      sel::SelectionConfig cfg;
      cfg.lambda = lambda;
      const auto picked = sel::select_dva(ctx, m.set, m.test, cfg);
      const auto expect = n_smallest(lambda == 0.0 ? m.l_v : m.eps, 8);
      const auto prompt = picked.prompt();
      if (prompt.size() != expect.size()) return {false, "wrong selection size"};
      // Descending order puts the best demonstration last.
      for (std::size_t i = 0; i < expect.size(); ++i) {
        const auto& want = m.set.candidates[expect[i] + 1].id();
        if (prompt[prompt.size() - 1 - i].candidate.id() != want) {
          return {false, "seed " + std::to_string(seed) + " lambda " + fmt(lambda) + ": position " +
                             std::to_string(i) + " is " + prompt[prompt.size() - 1 - i].candidate.id() +
                             ", expected " + want};
        }
      }
      ++checked;
    }
  }
  return {true, std::to_string(checked) + " selections match argsort (set and order)"};
}

Outcome eq5_minimal_n() {
  std::size_t instances = 0, ok = 0;
  for (int k : {10, 30, 50}) {
    const auto task = testing::make_toy_task(5 + static_cast<std::uint64_t>(k), 300, 60);
    auto backend = std::make_shared<lm::UnigramBackend>(task.backend());
    Providers providers;
    providers.retriever = std::make_shared<retrieval::Bm25Provider>(retrieval::Bm25Provider::over(task.data.train));
    ExperimentRunner runner(task.data, backend, providers);
    sel::SelectionConfig cfg;
    cfg.k = k;
    cfg.n_shot = std::min(8, k - 1);
    for (const auto& s : runner.select(cfg)) {
      ++instances;
      if (s.error) continue;
      std::vector<double> scores;
      std::vector<std::string> ids;
      for (const auto& row : s.trace["scored"]) {
        scores.push_back(row["score"].get<double>());
        ids.push_back(row["id"].get<std::string>());
      }
      std::set<std::string> expect;
      for (auto i : n_smallest(scores, static_cast<std::size_t>(cfg.n_shot))) expect.insert(ids[i]);
      std::set<std::string> got;
      for (const auto& id : s.trace["selected"]) got.insert(id.get<std::string>());
      if (got == expect) ++ok;
    }
  }
  return {ok == instances, std::to_string(ok) + "/" + std::to_string(instances) + " instances select the n smallest"};
}

Outcome eq1_oracle() {
  const corpus::TaskTemplate tmpl("Input: {text} Output: {answer}", "Input: {text} Output:", std::nullopt);
  int hits = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    const int vocab_size = 20 + static_cast<int>(rng() % 40);
    std::vector<std::string> words;
    for (int i = 0; i < vocab_size; ++i) words.push_back("w" + std::to_string(i));
    std::map<std::string, double> vocab;
    for (const auto& w : {"Input:", "Output:"}) vocab[w] = 1.0;
    for (const auto& w : words) vocab[w] = 1.0 + static_cast<double>(rng() % 5);
    double z = 0;
    for (const auto& [w, p] : vocab) z += p;
    for (auto& [w, p] : vocab) p /= z;
    const double alpha = 0.2 + 0.6 * static_cast<double>(rng() % 100) / 100.0;
    lm::UnigramBackend model(vocab, alpha);

    const std::string answer = words[0];
    auto sentence = [&](int len, bool with_answer) {
      std::vector<std::string> toks;
      for (int i = 0; i < len; ++i) toks.push_back(words[1 + rng() % (words.size() - 1)]);
      if (with_answer) toks[rng() % toks.size()] = answer;
      std::string s;
      for (const auto& t : toks) s += (s.empty() ? "" : " ") + t;
      return s;
    };
    const int k = 5 + static_cast<int>(rng() % 26);
    const int special = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
    const auto test = testing::make_example("t", {{"text", sentence(6, false)}}, answer);
    sel::CandidateSet set{"t", {}, k};
    for (int r = 0; r < k; ++r) {
      const auto ex = testing::make_example("d" + std::to_string(r), {{"text", sentence(3 + rng() % 8, r == special)}},
                                            words[1 + rng() % (words.size() - 1)]);
      set.candidates.push_back(candidate(tmpl, ex, r));
    }

    // Closed form of the cache model for the one-token answer.
    auto p_answer = [&](const sel::Candidate& d) {
      const auto hist = testing::split_words(d.demo_text + "\n" + corpus::render_query(tmpl, test).context);
      const double count = static_cast<double>(std::count(hist.begin(), hist.end(), answer));
      return (1 - alpha) * vocab.at(answer) + alpha * count / static_cast<double>(hist.size());
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < set.candidates.size(); ++i) {
      if (p_answer(set.candidates[i]) > p_answer(set.candidates[best])) best = i;
    }
    const sel::ScoringContext ctx{model, tmpl, sel::Normalization::sum};
    const auto ranked = sel::oracle_select(ctx, set, test, 1);
    if (best == static_cast<std::size_t>(special) && ranked.front().candidate.id() == set.candidates[best].id()) ++hits;
  }
  return {hits == 100, std::to_string(hits) + "/100 constructions rank the planted demonstration first"};
}

Outcome bm25_oracle() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  int topk_mismatch = 0, corpora = 0;
  for (; corpora < 50; ++corpora) {
    const int n_docs = 1 + static_cast<int>(rng() % 200);
    const int vocab = 5 + static_cast<int>(rng() % 60);
    auto word = [&] { return "t" + std::string(1, static_cast<char>('a' + rng() % 26)) + std::to_string(rng() % vocab); };
    std::vector<corpus::Example> pool;
    std::vector<std::vector<std::string>> docs;
    for (int i = 0; i < n_docs; ++i) {
      std::vector<std::string> toks;
      const int len = 1 + static_cast<int>(rng() % 25);
      for (int j = 0; j < len; ++j) toks.push_back(word());
      std::string text;
      for (const auto& t : toks) text += (text.empty() ? "" : " ") + t;
      char id[16];
      std::snprintf(id, sizeof id, "d%03d", i);
      pool.push_back(testing::make_example(id, {{"text", text}}, "x"));
      docs.push_back(toks);
    }
    const auto provider = retrieval::Bm25Provider::over(pool);
    for (int q = 0; q < 5; ++q) {
      std::vector<std::string> query;
      const int len = 1 + static_cast<int>(rng() % 6);
      for (int j = 0; j < len; ++j) query.push_back(j > 0 && rng() % 4 == 0 ? query.front() : word());
      std::string text;
      for (const auto& t : query) text += (text.empty() ? "" : " ") + t;
      const auto qex = testing::make_example("query", {{"text", text}});
      const auto ref = testing::bm25_reference(docs, query);
      const auto got = provider.score_all(qex);
      for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - got[i].similarity));

      const std::size_t k = std::min<std::size_t>(10, pool.size());
      std::vector<std::size_t> order(ref.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) {
        return ref[a] != ref[b] ? ref[a] > ref[b] : pool[a].id < pool[b].id;
      });
      std::set<std::string> want, have;
      for (std::size_t i = 0; i < k; ++i) want.insert(pool[order[i]].id);
      for (const auto& s : retrieval::retrieve_top_k(provider, qex, k)) have.insert(s.id);
      if (want != have) ++topk_mismatch;
    }
  }
  return {worst < 1e-6 && topk_mismatch == 0, "max |diff| " + fmt(worst) + ", top-k mismatches " +
                                                  std::to_string(topk_mismatch) + " over " +
                                                  std::to_string(corpora) + " corpora"};
}

Outcome chain_rule_and_protocol() {
  std::mt19937_64 rng(3);
  std::map<std::string, double> vocab;
  for (int i = 0; i < 30; ++i) vocab["v" + std::to_string(i)] = 1.0 / 30;
  double worst = 0.0;
  for (double alpha : {0.0, 0.3, 0.7}) {
    lm::UnigramBackend model(vocab, alpha);
    for (int trial = 0; trial < 200; ++trial) {
      auto phrase = [&](int len) {
        std::string s;
        for (int i = 0; i < len; ++i) s += " v" + std::to_string(rng() % 30);
        return s;
      };
      const auto c = phrase(static_cast<int>(rng() % 6)), s1 = phrase(1 + rng() % 5), s2 = phrase(1 + rng() % 5);
      const double whole = model.conditional_logprob(c, s1 + s2).total;
      const double split = model.conditional_logprob(c, s1).total + model.conditional_logprob(c + s1, s2).total;
      worst = std::max(worst, std::abs(whole - split));
    }
  }

  bool mock_rejects = false;
  lm::MockBackend mock;
  mock.add_logprob("ctx", " a b", {-0.5, -0.25}, {"a"});
  try {
    mock.conditional_logprob("ctx", " a b");
  } catch (const ProtocolError&) {
    mock_rejects = true;
  }

  bool http_rejects = false;
  httplib::Server server;
  server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"model":"fake","ok":true})", "application/json");
  });
  server.Post("/v1/logprob", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"tokens":["a","b"],"logprobs":[-0.5],"total":-0.5})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  try {
    lm::HttpOptions opts;
    opts.base_url = "http://127.0.0.1:" + std::to_string(port);
    opts.retries = 0;
    lm::HttpBackend http(opts);
    http.conditional_logprob("ctx", " a b");
  } catch (const ProtocolError&) {
    http_rejects = true;
  } catch (const std::exception&) {
  }
  server.stop();
  th.join();

  return {worst <= 1e-12 && mock_rejects && http_rejects,
          "max |chain diff| " + fmt(worst) + "; mock rejects mismatch: " + (mock_rejects ? "yes" : "no") +
              "; http rejects mismatch: " + (http_rejects ? "yes" : "no")};
}

Outcome toy_end_to_end() {
  const auto task = testing::make_toy_task(2024, 400, 200);
  auto backend = std::make_shared<lm::UnigramBackend>(task.backend());
  Providers providers;
  providers.retriever = std::make_shared<retrieval::Bm25Provider>(retrieval::Bm25Provider::over(task.data.train));
  ExperimentRunner runner(task.data, backend, providers);
  std::map<std::string, double> acc;
  for (auto s : {sel::Strategy::oracle, sel::Strategy::dva, sel::Strategy::random}) {
    sel::SelectionConfig cfg;
    cfg.strategy = s;
    cfg.seed = 1;
    const auto report = runner.run(cfg);
    if (!report.failures.empty()) return {false, std::string(sel::to_string(s)) + " had failures"};
    acc[std::string(sel::to_string(s))] = report.aggregates.at("accuracy");
  }
  const bool pass =
      acc["oracle"] >= acc["dva"] && acc["dva"] >= acc["random"] && acc["dva"] - acc["random"] >= 0.10;
  return {pass, "oracle " + fmt(acc["oracle"]) + ", dva " + fmt(acc["dva"]) + ", random " + fmt(acc["random"])};
}

Outcome lambda_sweep_cost() {
  const auto task = testing::make_toy_task(9, 300, 100);
  auto backend = std::make_shared<lm::UnigramBackend>(task.backend());
  Providers providers;
  providers.retriever = std::make_shared<retrieval::Bm25Provider>(retrieval::Bm25Provider::over(task.data.train));

  ExperimentRunner single(task.data, backend, providers);
  single.run(sel::SelectionConfig{});
  const auto one_run = single.selection_calls();

  ExperimentRunner sweep(task.data, backend, providers);
  for (int i = 0; i <= 10; ++i) {
    sel::SelectionConfig cfg;
    cfg.lambda = i / 10.0;
    sweep.run(cfg);
  }
  return {one_run > 0 && sweep.selection_calls() == one_run,
          "one run " + std::to_string(one_run) + " selection calls, 11-value sweep " +
              std::to_string(sweep.selection_calls())};
}

Outcome determinism() {
  testing::TempDir dir;
  const auto task = testing::make_toy_task(31, 200, 60);
  corpus::write_split(dir / "train.jsonl", task.data.train);
  corpus::write_split(dir / "test.jsonl", task.data.test);
  testing::write_file(dir / "template.json", task.data.tmpl.to_json().dump(2));
  nlohmann::json desc = {{"name", "toy"},
                         {"task_kind", "classification"},
                         {"template", "template.json"},
                         {"labels", task.data.labels},
                         {"splits", {{"train", "train.jsonl"}, {"test", "test.jsonl"}}}};
  testing::write_file(dir / "dataset.json", desc.dump(2));
  nlohmann::json model = {{"vocab", task.vocab}, {"cache_weight", task.cache_weight}};
  testing::write_file(dir / "model.json", model.dump());

  auto run = [&](const std::string& out) {
    std::ostringstream o, e;
    return cli::run_cli({"eval", "--dataset", (dir / "dataset.json").string(), "--backend",
                         "unigram:" + (dir / "model.json").string(), "--seed", "7", "--validation", "random",
                         "--concurrency", "3", "--out", (dir / out).string()},
                        o, e);
  };
  if (run("a") != 0 || run("b") != 0) return {false, "eval exited nonzero"};
  for (const auto* f : {"report-seed7.json", "trace-seed7.jsonl", "summary.json"}) {
    const auto a = testing::read_file(dir / "a" / f), b = testing::read_file(dir / "b" / f);
    if (a.empty() || a != b) return {false, std::string(f) + " differs between runs"};
  }
  return {true, "report, trace and summary byte-identical"};
}

Outcome metric_oracles() {
  const double f1 = eval::f1_token("a b", "b c");
  const double em = eval::exact_match("The Cat!", "cat");
  const std::vector<std::string> hyps = {"the cat sat on the mat",
                                         "a quick brown fox jumps over the dog",
                                         "i like green eggs and ham",
                                         "the the the the",
                                         "we went to the market yesterday",
                                         "it is raining in the city today",
                                         "she reads a book every night",
                                         "hello world",
                                         "this is a small test corpus",
                                         "the model predicts the next word"};
  const std::vector<std::string> refs = {"the cat sat on the red mat",
                                         "the quick brown fox jumps over the lazy dog",
                                         "i do not like green eggs and ham",
                                         "the cat is here",
                                         "we went to the market on monday",
                                         "it is raining heavily in the city",
                                         "she reads a book before bed every night",
                                         "hello there world",
                                         "this is a tiny test corpus for bleu",
                                         "the model predicts the next token"};
  // Reference values from sacrebleu 2.6.0 (tokenize="none", smooth_method="none").
  const double bleu = eval::corpus_bleu(hyps, refs);
  const double bleu3 = eval::corpus_bleu(std::span(hyps).first(3), std::span(refs).first(3));
  const bool pass = std::abs(f1 - 0.5) < 1e-12 && em == 1.0 && std::abs(bleu - 51.54202985458694) < 1e-4 &&
                    std::abs(bleu3 - 62.06402575370138) < 1e-4;
  return {pass, "F1 " + fmt(f1) + ", EM " + fmt(em) + ", BLEU " + fmt(bleu) + " / " + fmt(bleu3)};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"calibration remainder equals Bradley-Terry log-odds", 1.0, eq3_matches_bt},
      {"lambda 0 / 1 select by validation loss / calibration remainder", 1.0, eq4_boundaries},
      {"selected demonstrations have the n smallest scores", 0.0, eq5_minimal_n},
      {"oracle ranks the planted best demonstration first", 5.0, eq1_oracle},
      {"BM25 matches brute-force Okapi reference", 10.0, bm25_oracle},
      {"backend chain rule and protocol conformance", 0.0, chain_rule_and_protocol},
      {"toy task accuracy oracle >= dva >= random, dva - random >= 10 points", 30.0, toy_end_to_end},
      {"lambda sweep reuses selection-phase model calls", 0.0, lambda_sweep_cost},
      {"eval is byte-deterministic for a fixed seed", 0.0, determinism},
      {"EM / F1 / BLEU match reference values", 0.0, metric_oracles},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += "; exceeded " + fmt(c.budget_s) + " s budget";
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " (" << o.detail << "; " << fmt(secs) << " s)\n";
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << '\n';
  return failed == 0 ? 0 : 1;
}
