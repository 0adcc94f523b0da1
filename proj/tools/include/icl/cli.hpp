#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icl/backend.hpp"
#include "icl/experiment.hpp"
#include "icl/selection.hpp"

namespace icl::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kBackendUnreachable = 3,
  kAllFailed = 4,
};

struct RunConfig {
  std::filesystem::path dataset;
  std::string retriever = "bm25";  // bm25 | embeddings:PATH
  std::optional<std::filesystem::path> embeddings;  // dense store for the topk baseline
  std::string backend;  // mock:PATH | unigram:PATH | http:URL | http
  std::string model = "default";
  double timeout_s = 30.0;
  int retries = 3;
  selection::SelectionConfig selection;
  std::vector<std::uint64_t> seeds;  // empty -> {selection.seed}
  std::filesystem::path out;
  std::optional<std::filesystem::path> cache_dir;  // defaults to $ICL_CACHE_DIR, then .icl-cache
  int concurrency = 1;
  int max_new_tokens = 64;
  bool explain = false;
  std::vector<std::string> test_ids;
  bool all = false;

  // Throws ConfigError for out-of-range values or missing paths.
  void validate() const;
  std::filesystem::path resolved_cache_dir() const;
};

// Parses a backend spec; "http" alone reads ICL_BACKEND_URL.
std::shared_ptr<const lm::LogProbBackend> make_backend(const RunConfig& cfg);

// Path of the BM25 artifact cmd_index writes for a dataset.
std::filesystem::path bm25_artifact(const RunConfig& cfg, const std::string& dataset_name);

int cmd_index(const RunConfig& cfg, std::ostream& out);
int cmd_select(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const RunConfig& cfg, std::ostream& out);
// axis: lambda | k | n_shot | ordering | validation_policy. Empty values use the axis default grid.
int cmd_sweep(const RunConfig& cfg, const std::string& axis, std::vector<std::string> values, std::ostream& out);

// Entry point shared by the binary and the tests; returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace icl::cli
