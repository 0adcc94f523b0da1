#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icl/backend.hpp"
#include "icl/corpus.hpp"

namespace icl::eval {

struct Prompt {
  std::vector<std::string> demos;
  std::string query_context;
  // join(demos, sep) + sep + query_context, or just query_context with no demos.
  std::string full_text;
};

Prompt assemble_prompt(std::span<const std::string> demos, const corpus::Example& test,
                       const corpus::TaskTemplate& tmpl);

struct LabelScore {
  std::string label;
  double nll = 0.0;
};

// Label whose answer continuation has the lowest negative log-likelihood
// after the prompt (unnormalized). Ties go to the earliest declared label.
// `scores`, when given, receives every label's NLL in declaration order.
std::string classify(const lm::LogProbBackend& backend, const Prompt& prompt, const corpus::Verbalizations& verbs,
                     std::vector<LabelScore>* scores = nullptr);

// SQuAD normalization: lowercase, drop punctuation, drop a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);
double exact_match(std::string_view prediction, std::string_view gold);
double f1_token(std::string_view prediction, std::string_view gold);

// Corpus BLEU-4 (x100) over whitespace tokens: clipped n-gram precisions,
// uniform weights, brevity penalty, no smoothing. 0 when any precision is 0.
double corpus_bleu(std::span<const std::string> predictions, std::span<const std::string> golds);

}  // namespace icl::eval
