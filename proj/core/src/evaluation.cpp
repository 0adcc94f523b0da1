#include "icl/evaluation.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "icl/error.hpp"

namespace icl::eval {

namespace {

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

using Ngram = std::string;  // tokens joined by a unit separator

std::map<Ngram, int> count_ngrams(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<Ngram, int> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    Ngram g = tokens[i];
    for (std::size_t j = 1; j < n; ++j) {
      g += '\x1f';
      g += tokens[i + j];
    }
    ++counts[g];
  }
  return counts;
}

}  // namespace

Prompt assemble_prompt(std::span<const std::string> demos, const corpus::Example& test,
                       const corpus::TaskTemplate& tmpl) {
  Prompt p;
  p.demos.assign(demos.begin(), demos.end());
  p.query_context = corpus::render_query(tmpl, test).context;
  const auto& sep = tmpl.demo_separator();
  for (const auto& d : p.demos) {
    p.full_text += d;
    p.full_text += sep;
  }
  p.full_text += p.query_context;
  return p;
}

std::string classify(const lm::LogProbBackend& backend, const Prompt& prompt, const corpus::Verbalizations& verbs,
                     std::vector<LabelScore>* scores) {
  if (verbs.size() < 2) throw ConfigError("classify needs at least two verbalizations");
  std::size_t best = 0;
  double best_nll = 0.0;
  for (std::size_t i = 0; i < verbs.size(); ++i) {
    const double nll = -backend.conditional_logprob(prompt.full_text, verbs[i].second).total;
    if (scores) scores->push_back({verbs[i].first, nll});
    if (i == 0 || nll < best_nll) {
      best = i;
      best_nll = nll;
    }
  }
  return verbs[best].first;
}

std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    lowered += static_cast<char>(std::tolower(u));
  }
  std::string out;
  for (const auto& tok : split_ws(lowered)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

double exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 1.0 : 0.0;
}

double f1_token(std::string_view prediction, std::string_view gold) {
  const auto pred = split_ws(normalize_answer(prediction));
  const auto ref = split_ws(normalize_answer(gold));
  if (pred.empty() || ref.empty()) return pred.empty() && ref.empty() ? 1.0 : 0.0;
  std::map<std::string, int> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  int common = 0;
  for (const auto& t : pred) {
    if (auto it = ref_counts.find(t); it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

double corpus_bleu(std::span<const std::string> predictions, std::span<const std::string> golds) {
  if (predictions.size() != golds.size()) {
    throw ConfigError("corpus_bleu: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(golds.size()) + " references");
  }
  if (predictions.empty()) throw ConfigError("corpus_bleu: empty corpus");

  constexpr std::size_t kOrder = 4;
  std::array<long, kOrder> matched{}, total{};
  long hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const auto hyp = split_ws(predictions[s]);
    const auto ref = split_ws(golds[s]);
    hyp_len += static_cast<long>(hyp.size());
    ref_len += static_cast<long>(ref.size());
    for (std::size_t n = 1; n <= kOrder; ++n) {
      const auto h = count_ngrams(hyp, n);
      const auto r = count_ngrams(ref, n);
      for (const auto& [g, c] : h) {
        total[n - 1] += c;
        if (auto it = r.find(g); it != r.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision = 0.0;
  for (std::size_t n = 0; n < kOrder; ++n) {
    if (matched[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n])) / kOrder;
  }
  const double brevity = hyp_len < ref_len ? 1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len) : 0.0;
  return 100.0 * std::exp(log_precision + brevity);
}

}  // namespace icl::eval
