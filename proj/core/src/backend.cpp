#include "icl/backend.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"

namespace icl::lm {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open backend file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

constexpr std::string_view kUnknownToken = "<unk>";

}  // namespace

TokenLogProbs TokenLogProbs::from(std::vector<std::string> tokens, std::vector<double> logprobs) {
  TokenLogProbs out;
  out.tokens = std::move(tokens);
  out.logprobs = std::move(logprobs);
  for (double lp : out.logprobs) out.total += lp;
  return out;
}

void TokenLogProbs::validate() const {
  if (tokens.size() != logprobs.size()) {
    throw ProtocolError("token/logprob length mismatch (" + std::to_string(tokens.size()) + " tokens, " +
                        std::to_string(logprobs.size()) + " logprobs)");
  }
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!std::isfinite(lp) || lp > 0.0) {
      throw ProtocolError("token log-probability out of range: " + std::to_string(lp));
    }
    sum += lp;
  }
  if (std::abs(sum - total) > 1e-9) {
    throw ProtocolError("total " + std::to_string(total) + " differs from the sum of token log-probabilities");
  }
}

double TokenLogProbs::mean() const {
  return logprobs.empty() ? 0.0 : total / static_cast<double>(logprobs.size());
}

std::string truncate_at_stop(std::string text, std::span<const std::string> stop) {
  std::size_t cut = text.size();
  for (const auto& s : stop) {
    if (s.empty()) continue;
    if (const auto pos = text.find(s); pos != std::string::npos) cut = std::min(cut, pos);
  }
  text.resize(cut);
  return text;
}

TokenLogProbs LogProbBackend::conditional_logprob(std::string_view context, std::string_view continuation) const {
  if (continuation.empty()) return {};
  ++logprob_calls_;
  TokenLogProbs out = do_logprob(context, continuation);
  out.validate();
  return out;
}

std::string LogProbBackend::generate(std::string_view prompt, int max_tokens,
                                     std::span<const std::string> stop) const {
  if (max_tokens < 1) throw ConfigError("generate: max_tokens must be at least 1");
  ++generate_calls_;
  return truncate_at_stop(do_generate(prompt, max_tokens, stop), stop);
}

// --- MockBackend ------------------------------------------------------------

MockBackend MockBackend::load(const std::filesystem::path& path) {
  const auto j = read_json(path);
  MockBackend mock(j.value("name", std::string("mock")));
  try {
    for (const auto& e : j.value("logprob", nlohmann::json::array())) {
      mock.add_logprob(e.at("context").get<std::string>(), e.at("continuation").get<std::string>(),
                       e.at("logprobs").get<std::vector<double>>(),
                       e.value("tokens", std::vector<std::string>{}));
    }
    for (const auto& e : j.value("generate", nlohmann::json::array())) {
      mock.add_generation(e.at("prompt").get<std::string>(), e.at("text").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid mock table: " + e.what());
  }
  return mock;
}

void MockBackend::add_logprob(std::string context, std::string continuation, std::vector<double> logprobs,
                              std::vector<std::string> tokens) {
  logprob_table_[{std::move(context), std::move(continuation)}] = Entry{std::move(tokens), std::move(logprobs)};
}

void MockBackend::add_generation(std::string prompt, std::string text) {
  generate_table_[std::move(prompt)] = std::move(text);
}

TokenLogProbs MockBackend::do_logprob(std::string_view context, std::string_view continuation) const {
  const auto it = logprob_table_.find(std::pair<std::string, std::string>(context, continuation));
  if (it == logprob_table_.end()) {
    throw MockMiss("mock table has no entry for context " + quote_for_error(std::string(context)) + " continuation " +
                   quote_for_error(std::string(continuation)));
  }
  auto tokens = it->second.tokens;
  if (tokens.empty()) {
    for (std::size_t i = 0; i < it->second.logprobs.size(); ++i) tokens.push_back("#" + std::to_string(i));
  }
  return TokenLogProbs::from(std::move(tokens), it->second.logprobs);
}

std::string MockBackend::do_generate(std::string_view prompt, int, std::span<const std::string>) const {
  const auto it = generate_table_.find(prompt);
  if (it == generate_table_.end()) {
    throw MockMiss("mock table has no generation for prompt " + quote_for_error(std::string(prompt)));
  }
  return it->second;
}

// --- UnigramBackend ---------------------------------------------------------

UnigramBackend::UnigramBackend(std::map<std::string, double> vocab, double cache_weight, std::string name)
    : vocab_(std::move(vocab)), cache_weight_(cache_weight), name_(std::move(name)) {
  if (vocab_.empty()) throw ConfigError("unigram vocabulary is empty");
  double sum = 0.0;
  for (const auto& [token, p] : vocab_) {
    if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("unigram probability of '" + token + "' must be > 0");
    if (token.empty() || std::any_of(token.begin(), token.end(), is_space)) {
      throw ConfigError("unigram token " + quote_for_error(token) + " must be non-empty and contain no whitespace");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("unigram probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
  if (!(cache_weight_ >= 0.0 && cache_weight_ < 1.0)) {
    throw ConfigError("unigram cache_weight must lie in [0, 1)");
  }
}

UnigramBackend UnigramBackend::load(const std::filesystem::path& path) {
  const auto j = read_json(path);
  try {
    return UnigramBackend(j.at("vocab").get<std::map<std::string, double>>(), j.value("cache_weight", 0.0),
                          j.value("name", std::string("unigram")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid unigram model: " + e.what());
  }
}

double UnigramBackend::probability(const std::string& token) const {
  if (const auto it = vocab_.find(token); it != vocab_.end()) return it->second;
  if (const auto it = vocab_.find(std::string(kUnknownToken)); it != vocab_.end()) return it->second;
  throw TokenizerRejection("token " + quote_for_error(token) + " is not in the unigram vocabulary");
}

double UnigramBackend::conditional(const std::string& token,
                                   const std::unordered_map<std::string, std::size_t>& counts,
                                   std::size_t history) const {
  const double base = probability(token);
  if (cache_weight_ == 0.0 || history == 0) return base;
  const auto it = counts.find(token);
  const double seen = it == counts.end() ? 0.0 : static_cast<double>(it->second);
  return (1.0 - cache_weight_) * base + cache_weight_ * seen / static_cast<double>(history);
}

TokenLogProbs UnigramBackend::do_logprob(std::string_view context, std::string_view continuation) const {
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t history = 0;
  if (cache_weight_ > 0.0) {
    for (auto& t : split_whitespace(context)) {
      ++counts[t];
      ++history;
    }
  }
  auto tokens = split_whitespace(continuation);
  std::vector<double> logprobs;
  logprobs.reserve(tokens.size());
  for (const auto& t : tokens) {
    logprobs.push_back(std::log(conditional(t, counts, history)));
    if (cache_weight_ > 0.0) {
      ++counts[t];
      ++history;
    }
  }
  return TokenLogProbs::from(std::move(tokens), std::move(logprobs));
}

std::string UnigramBackend::do_generate(std::string_view prompt, int max_tokens,
                                        std::span<const std::string>) const {
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t history = 0;
  for (auto& t : split_whitespace(prompt)) {
    ++counts[t];
    ++history;
  }
  std::string out;
  for (int i = 0; i < max_tokens; ++i) {
    const std::string* best = nullptr;
    double best_p = -1.0;
    for (const auto& [token, _] : vocab_) {
      if (token == kUnknownToken) continue;
      const double p = conditional(token, counts, history);
      if (p > best_p) {
        best_p = p;
        best = &token;
      }
    }
    if (best == nullptr) break;
    if (!out.empty()) out += ' ';
    out += *best;
    ++counts[*best];
    ++history;
  }
  return out;
}

// --- CachingBackend ---------------------------------------------------------

CachingBackend::CachingBackend(std::shared_ptr<const LogProbBackend> inner, std::size_t capacity)
    : inner_(std::move(inner)), capacity_(capacity) {
  if (!inner_) throw ConfigError("CachingBackend needs a backend to wrap");
  if (capacity_ == 0) throw ConfigError("CachingBackend capacity must be positive");
}

TokenLogProbs CachingBackend::do_logprob(std::string_view context, std::string_view continuation) const {
  const std::string name = inner_->name();
  Key key;
  key.reserve(name.size() + context.size() + continuation.size() + 32);
  for (std::string_view part : {std::string_view(name), context, continuation}) {
    key += std::to_string(part.size());
    key += ':';
    key += part;
  }
  {
    std::lock_guard lock(mu_);
    if (const auto it = index_.find(key); it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      ++hits_;
      return it->second->second;
    }
  }
  // Computed outside the lock so concurrent misses on different keys overlap.
  TokenLogProbs value = inner_->conditional_logprob(context, continuation);
  ++misses_;
  std::lock_guard lock(mu_);
  if (index_.find(key) == index_.end()) {
    lru_.emplace_front(key, value);
    index_.emplace(std::move(key), lru_.begin());
    if (lru_.size() > capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
  }
  return value;
}

std::string CachingBackend::do_generate(std::string_view prompt, int max_tokens,
                                        std::span<const std::string> stop) const {
  return inner_->generate(prompt, max_tokens, stop);
}

}  // namespace icl::lm
