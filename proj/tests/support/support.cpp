#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace icl::testing {

namespace fs = std::filesystem;

fs::path source_dir() { return ICL_SOURCE_DIR; }

TempDir::TempDir() {
  static std::uint64_t counter = 0;
  std::random_device rd;
  const auto tag = std::to_string(::getpid()) + "-" + std::to_string(rd()) + "-" + std::to_string(counter++);
  path_ = fs::temp_directory_path() / ("icl-test-" + tag);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

corpus::Example make_example(std::string id, std::vector<std::pair<std::string, std::string>> fields,
                             std::optional<std::string> label) {
  return corpus::Example{std::move(id), std::move(fields), std::move(label)};
}

ToyTask make_toy_task(std::uint64_t seed, int train_size, int test_size) {
  const std::vector<std::string> labels = {"alpha", "beta", "gamma", "delta"};
  constexpr int kCues = 6;
  constexpr int kFiller = 24;
  std::mt19937_64 rng(seed);
  auto pick = [&](int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng)); };

  auto cue = [&](int cls, int i) { return "c" + std::to_string(cls) + "w" + std::to_string(i); };
  auto make = [&](const std::string& id, int cls) {
    std::vector<std::string> words;
    for (int i = 0; i < 2; ++i) words.push_back(cue(cls, pick(kCues)));
    int other = pick(static_cast<int>(labels.size()) - 1);
    if (other >= cls) ++other;
    words.push_back(cue(other, pick(kCues)));
    for (int i = 0; i < 4; ++i) words.push_back("f" + std::to_string(pick(kFiller)));
    std::shuffle(words.begin(), words.end(), rng);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    return make_example(id, {{"text", text}}, labels[static_cast<std::size_t>(cls)]);
  };

  corpus::Verbalizations verbalizer;
  for (const auto& l : labels) verbalizer.emplace_back(l, " " + l);
  corpus::TaskTemplate tmpl("Input: {text} Type:{answer}", "Input: {text} Type:", verbalizer, "\n");

  std::vector<corpus::Example> train, test;
  for (int i = 0; i < train_size; ++i) train.push_back(make("tr" + std::to_string(i), i % 4));
  for (int i = 0; i < test_size; ++i) test.push_back(make("te" + std::to_string(i), pick(4)));

  std::vector<std::string> words = {"Input:", "Type:"};
  for (const auto& l : labels) words.push_back(l);
  for (int c = 0; c < 4; ++c) {
    for (int i = 0; i < kCues; ++i) words.push_back(cue(c, i));
  }
  for (int i = 0; i < kFiller; ++i) words.push_back("f" + std::to_string(i));
  std::map<std::string, double> vocab;
  for (const auto& w : words) vocab[w] = 1.0 / static_cast<double>(words.size());

  return ToyTask{corpus::Dataset{"toy", corpus::TaskKind::classification, labels, std::move(train), std::move(test),
                                 std::move(tmpl), std::nullopt},
                 std::move(vocab), 0.5};
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<double> bm25_reference(const std::vector<std::vector<std::string>>& docs,
                                   const std::vector<std::string>& query, double k1, double b) {
  const double n = static_cast<double>(docs.size());
  double total_len = 0;
  for (const auto& d : docs) total_len += static_cast<double>(d.size());
  const double avgdl = total_len / n;
  std::vector<double> scores(docs.size(), 0.0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& q : query) {
      double df = 0;
      for (const auto& d : docs) df += std::count(d.begin(), d.end(), q) > 0 ? 1 : 0;
      const double tf = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), q));
      if (tf == 0) continue;
      const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      const double dl = static_cast<double>(docs[i].size());
      scores[i] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
    }
  }
  return scores;
}

}  // namespace icl::testing
