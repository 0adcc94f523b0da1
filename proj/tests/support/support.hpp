#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "icl/backend.hpp"
#include "icl/corpus.hpp"

namespace icl::testing {

// Source tree root, for shipped templates and sample data.
std::filesystem::path source_dir();

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

void write_file(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

corpus::Example make_example(std::string id, std::vector<std::pair<std::string, std::string>> fields,
                             std::optional<std::string> label = std::nullopt);

// Four-way synthetic classification task. Each class owns a set of cue
// words; every example mixes cues of its class with one cue of another class
// and shared filler words. The cache unigram model predicts the label that
// appears most often among the prompt's demonstrations, so demonstrations of
// the test's class are informative by construction.
struct ToyTask {
  corpus::Dataset data;
  std::map<std::string, double> vocab;
  double cache_weight = 0.5;

  lm::UnigramBackend backend() const { return lm::UnigramBackend(vocab, cache_weight, "toy"); }
};

ToyTask make_toy_task(std::uint64_t seed, int train_size = 400, int test_size = 200);

// Brute-force Okapi BM25 over whitespace-tokenized documents, written
// without postings so it shares no code path with the library index.
std::vector<double> bm25_reference(const std::vector<std::vector<std::string>>& docs,
                                   const std::vector<std::string>& query, double k1 = 1.2, double b = 0.75);

std::vector<std::string> split_words(const std::string& text);

}  // namespace icl::testing
