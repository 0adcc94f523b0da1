#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace icl::lm {

// Per-token natural-log probabilities of a continuation.
struct TokenLogProbs {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;
  double total = 0.0;

  // Builds from per-token values; total is their left-to-right sum.
  static TokenLogProbs from(std::vector<std::string> tokens, std::vector<double> logprobs);

  // Throws ProtocolError unless |tokens| == |logprobs|, every value is finite
  // and <= 0, and total equals the sum within 1e-9.
  void validate() const;
  // Mean log-probability per token; 0 for an empty continuation.
  double mean() const;
};

// Capability P(continuation | context) plus greedy generation.
//
// Public calls go through this class so every backend shares the same
// contract: empty continuations short-circuit to an empty result, responses
// are validated, generation is truncated at the first stop sequence, and
// calls that reach the implementation are counted.
class LogProbBackend {
 public:
  LogProbBackend() = default;
  // Copies start with fresh call counters.
  LogProbBackend(const LogProbBackend&) {}
  LogProbBackend& operator=(const LogProbBackend&) { return *this; }
  virtual ~LogProbBackend() = default;

  virtual std::string name() const = 0;

  TokenLogProbs conditional_logprob(std::string_view context, std::string_view continuation) const;
  std::string generate(std::string_view prompt, int max_tokens, std::span<const std::string> stop = {}) const;

  std::uint64_t logprob_calls() const { return logprob_calls_.load(); }
  std::uint64_t generate_calls() const { return generate_calls_.load(); }
  std::uint64_t calls() const { return logprob_calls() + generate_calls(); }

 protected:
  virtual TokenLogProbs do_logprob(std::string_view context, std::string_view continuation) const = 0;
  virtual std::string do_generate(std::string_view prompt, int max_tokens,
                                  std::span<const std::string> stop) const = 0;

 private:
  mutable std::atomic<std::uint64_t> logprob_calls_{0};
  mutable std::atomic<std::uint64_t> generate_calls_{0};
};

// Cuts `text` at the earliest occurrence of any stop sequence.
std::string truncate_at_stop(std::string text, std::span<const std::string> stop);

// Table-driven backend for tests. A lookup miss throws MockMiss, which pins
// the exact set of model calls an algorithm is allowed to make.
class MockBackend final : public LogProbBackend {
 public:
  struct Entry {
    std::vector<std::string> tokens;  // may be empty; synthesized as "#0", "#1", ...
    std::vector<double> logprobs;
  };

  explicit MockBackend(std::string name = "mock") : name_(std::move(name)) {}

  // {"name": str, "logprob": [{"context", "continuation", "logprobs": [...], "tokens"?: [...]}],
  //  "generate": [{"prompt", "text"}]}
  static MockBackend load(const std::filesystem::path& path);

  void add_logprob(std::string context, std::string continuation, std::vector<double> logprobs,
                   std::vector<std::string> tokens = {});
  void add_generation(std::string prompt, std::string text);
  std::size_t table_size() const { return logprob_table_.size(); }

  std::string name() const override { return name_; }

 protected:
  TokenLogProbs do_logprob(std::string_view context, std::string_view continuation) const override;
  std::string do_generate(std::string_view prompt, int max_tokens,
                          std::span<const std::string> stop) const override;

 private:
  std::string name_;
  std::map<std::pair<std::string, std::string>, Entry, std::less<>> logprob_table_;
  std::map<std::string, std::string, std::less<>> generate_table_;
};

// Deterministic toy language model over whitespace tokens.
//
// With cache_weight == 0 this is a plain unigram model: the log-probability of
// a continuation is the sum of ln p(token), independent of the context. A
// positive cache_weight mixes in a cache component,
//   p(w | history) = (1 - a) * p(w) + a * count(w, history) / |history|,
// where the history is the context tokens followed by the continuation
// tokens already scored. That gives a context-sensitive but fully
// hand-computable model for end-to-end tests.
class UnigramBackend final : public LogProbBackend {
 public:
  UnigramBackend(std::map<std::string, double> vocab, double cache_weight = 0.0,
                 std::string name = "unigram");

  // {"name"?: str, "vocab": {token: prob}, "cache_weight"?: float}
  static UnigramBackend load(const std::filesystem::path& path);

  std::string name() const override { return name_; }
  double cache_weight() const { return cache_weight_; }
  double probability(const std::string& token) const;  // throws TokenizerRejection for OOV

 protected:
  TokenLogProbs do_logprob(std::string_view context, std::string_view continuation) const override;
  std::string do_generate(std::string_view prompt, int max_tokens,
                          std::span<const std::string> stop) const override;

 private:
  double conditional(const std::string& token, const std::unordered_map<std::string, std::size_t>& counts,
                     std::size_t history) const;

  std::map<std::string, double> vocab_;
  double cache_weight_;
  std::string name_;
};

// Bounded LRU over (backend name, context, continuation). Thread-safe; the
// wrapped backend only sees cache misses.
class CachingBackend final : public LogProbBackend {
 public:
  CachingBackend(std::shared_ptr<const LogProbBackend> inner, std::size_t capacity = 1 << 16);

  std::string name() const override { return inner_->name(); }
  const LogProbBackend& inner() const { return *inner_; }
  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }

 protected:
  TokenLogProbs do_logprob(std::string_view context, std::string_view continuation) const override;
  std::string do_generate(std::string_view prompt, int max_tokens,
                          std::span<const std::string> stop) const override;

 private:
  using Key = std::string;  // name \x1f context \x1f continuation, length-prefixed
  std::shared_ptr<const LogProbBackend> inner_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  mutable std::list<std::pair<Key, TokenLogProbs>> lru_;
  mutable std::unordered_map<Key, std::list<std::pair<Key, TokenLogProbs>>::iterator> index_;
  mutable std::atomic<std::uint64_t> hits_{0};
  mutable std::atomic<std::uint64_t> misses_{0};
};

struct HttpOptions {
  std::string base_url;  // e.g. "http://127.0.0.1:8080"
  std::string model = "default";
  std::chrono::milliseconds timeout{30000};
  int retries = 3;  // extra attempts after the first
  std::chrono::milliseconds backoff{200};  // doubled after every failed attempt
  int max_in_flight = 4;
};

// Client for the JSON wire protocol:
//   POST /v1/logprob  {"model","context","continuation"} -> {"tokens","logprobs","total"}
//   POST /v1/generate {"model","prompt","max_tokens","stop"} -> {"text"}
//   GET  /v1/health -> {"model","ok"}
// Transport failures and 5xx responses are retried with exponential backoff;
// 400 maps to ProtocolError and 422 to TokenizerRejection without retrying.
class HttpBackend final : public LogProbBackend {
 public:
  explicit HttpBackend(HttpOptions options);
  ~HttpBackend() override;

  std::string name() const override { return "http:" + options_.model; }
  // Throws TransportError if the server is unreachable or reports not ok.
  void check_health() const;
  std::uint64_t retries_used() const { return retries_used_.load(); }
  const HttpOptions& options() const { return options_; }

 protected:
  TokenLogProbs do_logprob(std::string_view context, std::string_view continuation) const override;
  std::string do_generate(std::string_view prompt, int max_tokens,
                          std::span<const std::string> stop) const override;

 private:
  struct Limiter;
  std::string post(const std::string& path, const std::string& body) const;

  HttpOptions options_;
  std::unique_ptr<Limiter> limiter_;
  mutable std::atomic<std::uint64_t> retries_used_{0};
};

}  // namespace icl::lm
