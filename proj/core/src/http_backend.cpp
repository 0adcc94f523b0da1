#include <semaphore>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "icl/backend.hpp"
#include "icl/error.hpp"

namespace icl::lm {

struct HttpBackend::Limiter {
  explicit Limiter(int n) : slots(n) {}
  std::counting_semaphore<4096> slots;
};

namespace {

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<4096>& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<4096>& s_;
};

std::string error_message(const std::string& body) {
  try {
    const auto j = nlohmann::json::parse(body);
    if (j.contains("error")) return j.at("error").get<std::string>();
  } catch (const nlohmann::json::exception&) {
  }
  return body;
}

nlohmann::json parse_body(const std::string& body, const char* endpoint) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string(endpoint) + ": response is not JSON: " + e.what());
  }
}

}  // namespace

HttpBackend::HttpBackend(HttpOptions options)
    : options_(std::move(options)), limiter_(std::make_unique<Limiter>(std::max(1, options_.max_in_flight))) {
  if (options_.base_url.empty()) throw ConfigError("http backend needs a base URL");
  if (options_.retries < 0) throw ConfigError("http backend retries must be >= 0");
  if (options_.max_in_flight < 1 || options_.max_in_flight > 4096) {
    throw ConfigError("http backend max_in_flight must lie in [1, 4096]");
  }
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::post(const std::string& path, const std::string& body) const {
  auto delay = options_.backoff;
  std::string last_failure;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) {
      ++retries_used_;
      spdlog::warn("{} {}: retry {}/{} after {}ms ({})", options_.base_url, path, attempt, options_.retries,
                   delay.count(), last_failure);
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Result res;
    {
      SlotGuard slot(limiter_->slots);
      httplib::Client client(options_.base_url);
      client.set_connection_timeout(options_.timeout);
      client.set_read_timeout(options_.timeout);
      client.set_write_timeout(options_.timeout);
      res = path == "/v1/health" ? client.Get(path) : client.Post(path, body, "application/json");
    }
    if (!res) {
      last_failure = "transport: " + httplib::to_string(res.error());
      continue;
    }
    const int status = res->status;
    if (status >= 200 && status < 300) return res->body;
    if (status == 400) throw ProtocolError(path + ": server rejected the request: " + error_message(res->body));
    if (status == 422) throw TokenizerRejection(path + ": " + error_message(res->body));
    if (status >= 500) {
      last_failure = "status " + std::to_string(status) + ": " + error_message(res->body);
      continue;
    }
    throw BackendError(path + ": unexpected status " + std::to_string(status) + ": " + error_message(res->body));
  }
  throw TransportError(options_.base_url + path + " failed after " + std::to_string(options_.retries + 1) +
                       " attempt(s): " + last_failure);
}

void HttpBackend::check_health() const {
  const auto j = parse_body(post("/v1/health", ""), "/v1/health");
  if (!j.is_object() || !j.value("ok", false)) {
    throw TransportError(options_.base_url + " reports the model is not ready");
  }
}

TokenLogProbs HttpBackend::do_logprob(std::string_view context, std::string_view continuation) const {
  const nlohmann::json request = {
      {"model", options_.model}, {"context", context}, {"continuation", continuation}};
  const auto j = parse_body(post("/v1/logprob", request.dump()), "/v1/logprob");
  std::vector<std::string> tokens;
  std::vector<double> logprobs;
  double reported_total = 0.0;
  try {
    tokens = j.at("tokens").get<std::vector<std::string>>();
    logprobs = j.at("logprobs").get<std::vector<double>>();
    reported_total = j.at("total").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("/v1/logprob: response violates the schema: ") + e.what());
  }
  if (tokens.size() != logprobs.size()) {
    throw ProtocolError("/v1/logprob: " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(logprobs.size()) + " logprobs");
  }
  auto out = TokenLogProbs::from(std::move(tokens), std::move(logprobs));
  // Servers may accumulate in lower precision; the client keeps its own exact sum.
  if (std::abs(out.total - reported_total) > 1e-6 * std::max(1.0, std::abs(out.total))) {
    throw ProtocolError("/v1/logprob: reported total " + std::to_string(reported_total) +
                        " disagrees with the token log-probabilities");
  }
  return out;
}

std::string HttpBackend::do_generate(std::string_view prompt, int max_tokens,
                                     std::span<const std::string> stop) const {
  const nlohmann::json request = {{"model", options_.model},
                                  {"prompt", prompt},
                                  {"max_tokens", max_tokens},
                                  {"stop", std::vector<std::string>(stop.begin(), stop.end())}};
  const auto j = parse_body(post("/v1/generate", request.dump()), "/v1/generate");
  try {
    return j.at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("/v1/generate: response violates the schema: ") + e.what());
  }
}

}  // namespace icl::lm
