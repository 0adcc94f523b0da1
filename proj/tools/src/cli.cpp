#include "icl/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "icl/corpus.hpp"
#include "icl/error.hpp"
#include "icl/retrieval.hpp"

namespace icl::cli {

namespace fs = std::filesystem;
using selection::Strategy;

namespace {

constexpr std::string_view kMockPrefix = "mock:";
constexpr std::string_view kUnigramPrefix = "unigram:";
constexpr std::string_view kHttpPrefix = "http:";
constexpr std::string_view kEmbeddingsPrefix = "embeddings:";

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::optional<fs::path> embeddings_path(const RunConfig& cfg) {
  if (starts_with(cfg.retriever, kEmbeddingsPrefix)) return fs::path(cfg.retriever.substr(kEmbeddingsPrefix.size()));
  return cfg.embeddings;
}

bool needs_model(const selection::SelectionConfig& s) {
  return s.n_shot > 0 && (s.strategy == Strategy::dva || s.strategy == Strategy::cone || s.strategy == Strategy::oracle);
}

bool needs_retrieval(const selection::SelectionConfig& s) { return s.n_shot > 0 && s.strategy != Strategy::random; }

void require_file(const fs::path& p, std::string_view what) {
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

struct Session {
  corpus::Dataset data;
  std::shared_ptr<const lm::LogProbBackend> backend;
  Providers providers;
};

std::shared_ptr<const retrieval::SimilarityProvider> load_bm25(const RunConfig& cfg, const corpus::Dataset& data) {
  const fs::path artifact = bm25_artifact(cfg, data.name);
  if (fs::is_regular_file(artifact)) {
    std::ifstream in(artifact);
    auto index = std::make_shared<const retrieval::Bm25Index>(
        retrieval::Bm25Index::from_json(nlohmann::json::parse(in)));
    bool matches = index->ids().size() == data.train.size();
    for (std::size_t i = 0; matches && i < data.train.size(); ++i) matches = index->ids()[i] == data.train[i].id;
    if (matches) {
      spdlog::info("using BM25 index {}", artifact.string());
      return std::make_shared<retrieval::Bm25Provider>(index);
    }
    spdlog::warn("BM25 index {} is stale; rebuilding in memory", artifact.string());
  }
  return std::make_shared<retrieval::Bm25Provider>(retrieval::Bm25Provider::over(data.train));
}

std::shared_ptr<const retrieval::SimilarityProvider> load_dense(const fs::path& path, const corpus::Dataset& data) {
  auto store = std::make_shared<const retrieval::EmbeddingStore>(retrieval::EmbeddingStore::load(path));
  std::vector<std::string> pool;
  for (const auto& ex : data.train) pool.push_back(ex.id);
  return std::make_shared<retrieval::EmbeddingProvider>(store, std::move(pool));
}

Session open_session(const RunConfig& cfg, const selection::SelectionConfig& probe, bool need_backend) {
  Session s{corpus::load_dataset(cfg.dataset), nullptr, {}};
  if (needs_retrieval(probe)) {
    const auto dense_path = embeddings_path(cfg);
    if (dense_path) s.providers.dense = load_dense(*dense_path, s.data);
    if (cfg.retriever == "bm25" || probe.strategy == Strategy::bm25) s.providers.bm25 = load_bm25(cfg, s.data);
    s.providers.retriever = cfg.retriever == "bm25" ? s.providers.bm25 : s.providers.dense;
  }
  if (need_backend) {
    if (cfg.backend.empty()) throw ConfigError("this run needs --backend");
    s.backend = make_backend(cfg);
  }
  return s;
}

std::vector<std::uint64_t> seeds_of(const RunConfig& cfg) {
  return cfg.seeds.empty() ? std::vector<std::uint64_t>{cfg.selection.seed} : cfg.seeds;
}

void print_explain(std::ostream& out, const InstanceSelection& sel) {
  const auto& t = sel.trace;
  out << "test " << sel.test_id;
  if (t.contains("validation_id") && !t["validation_id"].is_null()) {
    out << "  validation " << t["validation_id"].get<std::string>();
  }
  if (t.contains("lambda") && !t["lambda"].is_null()) out << "  lambda " << t["lambda"].get<double>();
  out << '\n';
  if (sel.error) {
    out << "  error: " << *sel.error << '\n';
    return;
  }
  std::map<std::string, std::size_t> position;
  const auto& selected = t["selected"];
  for (std::size_t i = 0; i < selected.size(); ++i) position[selected[i].get<std::string>()] = i;
  if (t["scored"].empty()) {
    for (const auto& id : selected) out << "  " << id.get<std::string>() << '\n';
    return;
  }
  std::vector<std::string> columns;
  for (const auto& [key, _] : t["scored"][0].items()) {
    if (key != "id" && key != "retrieval_rank") columns.push_back(key);
  }
  out << "  " << std::left << std::setw(5) << "rank" << std::setw(20) << "id";
  for (const auto& c : columns) out << std::right << std::setw(12) << c;
  out << std::right << std::setw(8) << "prompt" << '\n';
  for (const auto& row : t["scored"]) {
    const auto id = row["id"].get<std::string>();
    out << "  " << std::left << std::setw(5) << row["retrieval_rank"].get<int>() << std::setw(20) << id << std::right;
    for (const auto& c : columns) out << std::setw(12) << format_number(row[c].get<double>());
    const auto it = position.find(id);
    out << std::setw(8) << (it == position.end() ? std::string("-") : std::to_string(it->second)) << '\n';
  }
}

// Keeps log output on the caller's error stream for the duration of one invocation.
class LogScope {
 public:
  LogScope(std::ostream& err, spdlog::level::level_enum level) {
    auto logger = std::make_shared<spdlog::logger>("icl", std::make_shared<spdlog::sinks::ostream_sink_mt>(err, true));
    logger->set_pattern("[%l] %v");
    logger->set_level(level);
    spdlog::set_default_logger(std::move(logger));
  }
  ~LogScope() {
    spdlog::set_default_logger(
        std::make_shared<spdlog::logger>("icl", std::make_shared<spdlog::sinks::stderr_color_sink_mt>()));
  }
  LogScope(const LogScope&) = delete;
  LogScope& operator=(const LogScope&) = delete;
};

}  // namespace

void RunConfig::validate() const {
  require_file(dataset, "dataset descriptor");
  selection.validate();
  if (concurrency < 1) throw ConfigError("--concurrency must be at least 1");
  if (max_new_tokens < 1) throw ConfigError("--max-new-tokens must be at least 1");
  if (timeout_s <= 0) throw ConfigError("--timeout must be positive");
  if (retries < 0) throw ConfigError("--retries must be non-negative");
  if (retriever != "bm25" && retriever != "none" && !starts_with(retriever, kEmbeddingsPrefix)) {
    throw ConfigError("unknown retriever '" + retriever + "' (expected bm25, none or embeddings:PATH)");
  }
  if (const auto p = embeddings_path(*this)) require_file(*p, "embeddings file");
  if (starts_with(backend, kMockPrefix)) require_file(backend.substr(kMockPrefix.size()), "mock table");
  if (starts_with(backend, kUnigramPrefix)) require_file(backend.substr(kUnigramPrefix.size()), "unigram model");
  if (!backend.empty() && !starts_with(backend, kMockPrefix) && !starts_with(backend, kUnigramPrefix) &&
      backend != "http" && !starts_with(backend, kHttpPrefix)) {
    throw ConfigError("unknown backend '" + backend + "' (expected mock:PATH, unigram:PATH, http:URL or http)");
  }
  if (needs_retrieval(selection)) {
    if (retriever == "none" && selection.strategy != Strategy::bm25 && selection.strategy != Strategy::topk) {
      throw ConfigError("strategy '" + std::string(selection::to_string(selection.strategy)) + "' needs a retriever");
    }
    if (selection.strategy == Strategy::topk && !embeddings_path(*this)) {
      throw ConfigError("topk needs --embeddings or --retriever embeddings:PATH");
    }
  }
}

fs::path RunConfig::resolved_cache_dir() const {
  if (cache_dir) return *cache_dir;
  if (const char* env = std::getenv("ICL_CACHE_DIR"); env && *env) return env;
  return ".icl-cache";
}

fs::path bm25_artifact(const RunConfig& cfg, const std::string& dataset_name) {
  return cfg.resolved_cache_dir() / (dataset_name + ".bm25.json");
}

std::shared_ptr<const lm::LogProbBackend> make_backend(const RunConfig& cfg) {
  const std::string& spec = cfg.backend;
  if (starts_with(spec, kMockPrefix)) {
    return std::make_shared<lm::MockBackend>(lm::MockBackend::load(spec.substr(kMockPrefix.size())));
  }
  if (starts_with(spec, kUnigramPrefix)) {
    return std::make_shared<lm::UnigramBackend>(lm::UnigramBackend::load(spec.substr(kUnigramPrefix.size())));
  }
  if (spec == "http" || starts_with(spec, kHttpPrefix)) {
    lm::HttpOptions opts;
    if (spec == "http") {
      const char* env = std::getenv("ICL_BACKEND_URL");
      if (!env || !*env) throw ConfigError("--backend http needs ICL_BACKEND_URL to be set");
      opts.base_url = env;
    } else {
      opts.base_url = spec.substr(kHttpPrefix.size());
      if (opts.base_url.empty()) throw ConfigError("--backend http: needs a URL");
    }
    opts.model = cfg.model;
    opts.timeout = std::chrono::milliseconds(static_cast<long>(cfg.timeout_s * 1000.0));
    opts.retries = cfg.retries;
    opts.max_in_flight = std::max(4, cfg.concurrency);
    auto http = std::make_shared<lm::HttpBackend>(opts);
    http->check_health();
    return std::make_shared<lm::CachingBackend>(std::move(http));
  }
  throw ConfigError("unknown backend '" + spec + "'");
}

int cmd_index(const RunConfig& cfg, std::ostream& out) {
  const auto data = corpus::load_dataset(cfg.dataset);
  std::vector<retrieval::Document> docs;
  for (const auto& ex : data.train) docs.push_back({ex.id, retrieval::example_text(ex)});
  const auto index = retrieval::Bm25Index::build(docs);
  const fs::path bm25_path = bm25_artifact(cfg, data.name);
  write_text(bm25_path, index.to_json().dump() + "\n");
  out << "wrote " << bm25_path.string() << '\n';

  if (const auto emb = embeddings_path(cfg)) {
    const auto store = retrieval::EmbeddingStore::load(*emb);
    for (const auto* split : {&data.train, &data.test}) {
      for (const auto& ex : *split) {
        if (!store.contains(ex.id)) throw DataError(emb->string() + " has no embedding for '" + ex.id + "'");
      }
    }
    const fs::path emb_path = cfg.resolved_cache_dir() / (data.name + ".emb");
    fs::create_directories(emb_path.parent_path());
    store.save_binary(emb_path);
    out << "wrote " << emb_path.string() << '\n';
  }
  return kOk;
}

int cmd_select(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.all && cfg.test_ids.empty()) throw ConfigError("select needs --test-id or --all");
  auto s = open_session(cfg, cfg.selection, needs_model(cfg.selection));
  ExperimentRunner runner(s.data, s.backend, s.providers, cfg.concurrency);
  const auto selections = runner.select(cfg.selection, cfg.all ? std::vector<std::string>{} : cfg.test_ids);
  spdlog::info("selection made {} backend calls", runner.selection_calls());

  std::string jsonl;
  std::size_t failed = 0;
  for (const auto& sel : selections) {
    if (sel.error) {
      ++failed;
      spdlog::warn("test '{}' quarantined: {}", sel.test_id, *sel.error);
      jsonl += nlohmann::ordered_json{{"test_id", sel.test_id}, {"error", *sel.error}}.dump() + "\n";
    } else {
      jsonl += sel.trace.dump() + "\n";
    }
    if (cfg.explain) print_explain(out, sel);
  }
  if (!cfg.out.empty()) write_text(cfg.out / "selection.jsonl", jsonl);
  if (!cfg.explain) out << jsonl;
  return !selections.empty() && failed == selections.size() ? kAllFailed : kOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  if (cfg.out.empty()) throw ConfigError("eval needs --out");
  auto s = open_session(cfg, cfg.selection, true);
  ExperimentRunner runner(s.data, s.backend, s.providers, cfg.concurrency);
  const auto seeds = seeds_of(cfg);

  std::map<std::string, double> sums;
  std::size_t succeeded = 0;
  nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
  for (const auto seed : seeds) {
    auto sel = cfg.selection;
    sel.seed = seed;
    const auto report = runner.run(sel, cfg.max_new_tokens);
    fs::create_directories(cfg.out);
    report.write(cfg.out / ("report-seed" + std::to_string(seed) + ".json"));
    report.write_trace(cfg.out / ("trace-seed" + std::to_string(seed) + ".jsonl"));
    succeeded += report.predictions.size();
    for (const auto& f : report.failures) spdlog::warn("seed {}: test '{}' quarantined: {}", seed, f.test_id, f.error);

    nlohmann::ordered_json agg = nlohmann::ordered_json::object();
    out << "seed " << seed << ':';
    for (const auto& [k, v] : report.aggregates) {
      agg[k] = v;
      sums[k] += v;
      out << ' ' << k << '=' << format_number(v);
    }
    out << " failures=" << report.failures.size() << '\n';
    per_seed.push_back({{"seed", seed}, {"aggregates", agg}, {"failures", report.failures.size()}});
  }

  nlohmann::ordered_json mean = nlohmann::ordered_json::object();
  out << "mean:";
  for (const auto& [k, v] : sums) {
    mean[k] = v / static_cast<double>(seeds.size());
    out << ' ' << k << '=' << format_number(mean[k].get<double>());
  }
  out << '\n';
  nlohmann::ordered_json summary;
  summary["dataset"] = s.data.name;
  summary["strategy"] = selection::to_string(cfg.selection.strategy);
  summary["seeds"] = seeds;
  summary["per_seed"] = std::move(per_seed);
  summary["mean"] = std::move(mean);
  write_text(cfg.out / "summary.json", summary.dump(2) + "\n");
  return succeeded == 0 && !s.data.test.empty() ? kAllFailed : kOk;
}

int cmd_sweep(const RunConfig& cfg, const std::string& axis, std::vector<std::string> values, std::ostream& out) {
  static const std::map<std::string, std::vector<std::string>> defaults = {
      {"lambda", {"0.0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0"}},
      {"k", {"5", "10", "20", "30"}},
      {"n_shot", {"1", "2", "4", "8"}},
      {"ordering", {"ascending", "shuffled", "descending"}},
      {"validation_policy", {"nearest", "random", "furthest"}},
  };
  const auto grid = defaults.find(axis);
  if (grid == defaults.end()) {
    throw ConfigError("unknown sweep axis '" + axis + "' (expected lambda, k, n_shot, ordering or validation_policy)");
  }
  if (values.empty()) values = grid->second;

  auto parse_int = [](const std::string& v) {
    std::size_t used = 0;
    int x = 0;
    try {
      x = std::stoi(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size()) throw ConfigError("sweep value '" + v + "' is not an integer");
    return x;
  };
  std::vector<selection::SelectionConfig> configs;
  for (const auto& v : values) {
    auto sel = cfg.selection;
    if (axis == "lambda") {
      std::size_t used = 0;
      try {
        sel.lambda = std::stod(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != v.size()) throw ConfigError("sweep value '" + v + "' is not a number");
    } else if (axis == "k") {
      sel.k = parse_int(v);
    } else if (axis == "n_shot") {
      sel.n_shot = parse_int(v);
    } else if (axis == "ordering") {
      sel.ordering = selection::parse_ordering(v);
    } else {
      sel.validation = selection::parse_validation_policy(v);
    }
    sel.validate();
    configs.push_back(sel);
  }

  auto probe = cfg.selection;
  for (const auto& c : configs) {
    if (needs_retrieval(c)) probe = c;
  }
  auto s = open_session(cfg, probe, true);
  ExperimentRunner runner(s.data, s.backend, s.providers, cfg.concurrency);
  const auto seeds = seeds_of(cfg);

  struct Row {
    std::string value;
    std::map<std::string, double> metrics;
    std::size_t failures = 0;
    std::uint64_t selection_calls = 0;
    std::uint64_t prediction_calls = 0;
  };
  std::vector<Row> rows;
  std::set<std::string> metric_names;
  std::size_t succeeded = 0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    Row row{values[i], {}, 0, 0, 0};
    const auto sel_before = runner.selection_calls();
    const auto pred_before = runner.prediction_calls();
    for (const auto seed : seeds) {
      auto sel = configs[i];
      sel.seed = seed;
      const auto report = runner.run(sel, cfg.max_new_tokens);
      succeeded += report.predictions.size();
      row.failures += report.failures.size();
      for (const auto& [k, v] : report.aggregates) {
        row.metrics[k] += v / static_cast<double>(seeds.size());
        metric_names.insert(k);
      }
    }
    row.selection_calls = runner.selection_calls() - sel_before;
    row.prediction_calls = runner.prediction_calls() - pred_before;
    rows.push_back(std::move(row));
  }

  std::ostringstream csv;
  csv << axis;
  for (const auto& m : metric_names) csv << ',' << m;
  csv << ",failures,selection_calls,prediction_calls\n";
  for (const auto& r : rows) {
    csv << r.value;
    for (const auto& m : metric_names) {
      const auto it = r.metrics.find(m);
      csv << ',' << (it == r.metrics.end() ? std::string() : format_number(it->second));
    }
    csv << ',' << r.failures << ',' << r.selection_calls << ',' << r.prediction_calls << '\n';
  }
  if (!cfg.out.empty()) write_text(cfg.out / "sweep.csv", csv.str());
  out << csv.str();
  return succeeded == 0 && !s.data.test.empty() ? kAllFailed : kOk;
}

namespace {

struct Parsed {
  RunConfig cfg;
  std::string strategy = "dva";
  std::string ordering = "descending";
  std::string validation = "nearest";
  std::string normalization = "sum";
  std::string dataset;
  std::string out;
  std::string embeddings;
  std::string cache_dir;
  std::string axis;
  std::vector<std::string> values;
  std::string config_file;
  bool verbose = false;
};

// Fills options the command line left unset from a TOML/INI file. Keys are
// long option names, either at top level or under a [subcommand] section.
void apply_config_file(CLI::App& sub, const std::string& path) {
  require_file(path, "config file");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path);
  } catch (const CLI::Error& e) {
    throw ConfigError("config file " + quote_for_error(path) + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub.get_name())) continue;
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    auto* opt = sub.get_option_no_throw("--" + name);
    if (opt == nullptr || name == "config") {
      throw ConfigError("config file " + quote_for_error(path) + ": unknown option '" + item.name + "'");
    }
    if (opt->count() > 0) continue;
    try {
      for (const auto& v : item.inputs) opt->add_result(v);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config file " + quote_for_error(path) + ": " + item.name + ": " + e.what());
    }
  }
}

void add_shared(CLI::App* sub, Parsed& p) {
  auto& c = p.cfg;
  sub->add_option("--config", p.config_file, "TOML/INI file with option defaults; flags override it");
  sub->add_option("--dataset", p.dataset, "Dataset descriptor (JSON)");
  sub->add_option("--retriever", c.retriever, "bm25, none or embeddings:PATH")->capture_default_str();
  sub->add_option("--embeddings", p.embeddings, "Embedding store for the topk baseline");
  sub->add_option("--backend", c.backend, "mock:PATH, unigram:PATH, http:URL or http (uses ICL_BACKEND_URL)");
  sub->add_option("--model", c.model, "Model name sent to an http backend")->capture_default_str();
  sub->add_option("--timeout", c.timeout_s, "Per-request timeout in seconds")->capture_default_str();
  sub->add_option("--retries", c.retries, "Retries per http request")->capture_default_str();
  sub->add_option("--strategy", p.strategy, "random, bm25, topk, cone, dva or oracle")->capture_default_str();
  sub->add_option("--lambda", c.selection.lambda, "Weight of the calibration remainder")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sub->add_option("--k", c.selection.k, "Retrieved candidates per test input")->capture_default_str();
  sub->add_option("--n,--n-shot", c.selection.n_shot, "Demonstrations in the prompt")->capture_default_str();
  sub->add_option("--ordering", p.ordering, "descending, ascending or shuffled")->capture_default_str();
  sub->add_option("--validation", p.validation, "nearest, random or furthest")->capture_default_str();
  sub->add_option("--normalization", p.normalization, "sum or per_token")->capture_default_str();
  sub->add_option("--seed", c.selection.seed, "Random seed")->capture_default_str();
  sub->add_option("--seeds", c.seeds, "Comma-separated seeds")->delimiter(',');
  sub->add_option("--out", p.out, "Output directory");
  sub->add_option("--cache-dir", p.cache_dir, "Index artifact directory (default $ICL_CACHE_DIR or .icl-cache)");
  sub->add_option("--concurrency", c.concurrency, "Worker threads")->capture_default_str();
  sub->add_option("--max-new-tokens", c.max_new_tokens, "Generation budget")->capture_default_str();
  sub->add_flag("-v,--verbose", p.verbose, "Log progress to stderr");
}

void finish(Parsed& p, CLI::App& sub) {
  if (!p.config_file.empty()) apply_config_file(sub, p.config_file);
  auto& c = p.cfg;
  if (p.dataset.empty()) throw ConfigError("--dataset is required");
  c.dataset = p.dataset;
  if (sub.get_option("--n")->count() == 0) {
    if (const auto n = corpus::DatasetDescriptor::load(c.dataset).n_shot) c.selection.n_shot = *n;
  }
  c.out = p.out;
  if (!p.embeddings.empty()) c.embeddings = p.embeddings;
  if (!p.cache_dir.empty()) c.cache_dir = p.cache_dir;
  c.selection.strategy = selection::parse_strategy(p.strategy);
  c.selection.ordering = selection::parse_ordering(p.ordering);
  c.selection.validation = selection::parse_validation_policy(p.validation);
  c.selection.normalization = selection::parse_normalization(p.normalization);
  c.validate();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"In-context demonstration selection", "icl"};
  app.require_subcommand(1);
  Parsed p;

  auto* index = app.add_subcommand("index", "Build retrieval artifacts for a dataset");
  auto* select = app.add_subcommand("select", "Select demonstrations and print traces");
  auto* eval = app.add_subcommand("eval", "Select, predict and score a dataset");
  auto* sweep = app.add_subcommand("sweep", "Evaluate over a grid of one setting");
  for (auto* sub : {index, select, eval, sweep}) add_shared(sub, p);
  select->add_option("--test-id", p.cfg.test_ids, "Test example to select for (repeatable)");
  select->add_flag("--all", p.cfg.all, "Select for every test example");
  select->add_flag("--explain", p.cfg.explain, "Print the per-candidate score table");
  sweep->add_option("--axis", p.axis, "lambda, k, n_shot, ordering or validation_policy")->required();
  sweep->add_option("--values", p.values, "Comma-separated values (default grid per axis)")->delimiter(',');

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  LogScope logs(err, p.verbose ? spdlog::level::info : spdlog::level::warn);
  try {
    auto* sub = app.get_subcommands().front();
    finish(p, *sub);
    if (index->parsed()) return cmd_index(p.cfg, out);
    if (select->parsed()) return cmd_select(p.cfg, out);
    if (eval->parsed()) return cmd_eval(p.cfg, out);
    return cmd_sweep(p.cfg, p.axis, p.values, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const BackendError& e) {
    err << "error: backend unreachable: " << e.what() << '\n';
    return kBackendUnreachable;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace icl::cli
