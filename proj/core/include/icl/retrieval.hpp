#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "icl/corpus.hpp"

namespace icl::retrieval {

// Lowercased terms split on whitespace and punctuation (ASCII plus the common
// Unicode whitespace/punctuation blocks). Non-ASCII letters are kept verbatim
// apart from Latin-1 case folding.
std::vector<std::string> tokenize(std::string_view text);

// Text a retriever sees for an example: its field values joined by a space.
std::string example_text(const corpus::Example& ex);

struct Document {
  std::string id;
  std::string text;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Okapi BM25 over an in-memory corpus with the +1-smoothed IDF
//   idf(t) = ln((N - df + 0.5) / (df + 0.5) + 1).
// Stored as postings so a query touches only documents that contain its terms.
class Bm25Index {
 public:
  static Bm25Index build(std::span<const Document> corpus, Bm25Params params = {});

  double score(std::span<const std::string> query_terms, std::string_view doc_id) const;
  double score_at(std::span<const std::string> query_terms, std::size_t doc) const;
  // Scores of every document, indexed like ids().
  std::vector<double> score_all(std::span<const std::string> query_terms) const;

  double idf(std::string_view term) const;
  std::size_t corpus_size() const { return ids_.size(); }
  double avg_doc_length() const { return avg_doc_length_; }
  std::uint32_t doc_length(std::size_t doc) const { return doc_lengths_.at(doc); }
  std::uint32_t doc_freq(std::string_view term) const;
  std::uint32_t term_freq(std::string_view term, std::size_t doc) const;
  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t index_of(std::string_view id) const;  // throws DataError if unknown
  const Bm25Params& params() const { return params_; }

  // Deterministic JSON form (terms sorted), used for on-disk index artifacts.
  nlohmann::json to_json() const;
  static Bm25Index from_json(const nlohmann::json& j);

 private:
  struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;
  };

  double term_weight(double idf, std::uint32_t tf, std::uint32_t doc_len) const;
  void finalize();

  Bm25Params params_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> id_index_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
  // Postings sorted by doc; df(t) == postings_[t].size().
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

double cosine(std::span<const float> u, std::span<const float> v);

class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::size_t dim) : dim_(dim) {}

  // Binary "EMB1" file, or JSONL ({"id", "vec"}) when the magic is absent.
  static EmbeddingStore load(const std::filesystem::path& path);
  void save_binary(const std::filesystem::path& path) const;

  void insert(std::string id, std::vector<float> vec);
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(std::string_view id) const;
  std::span<const float> at(std::string_view id) const;  // throws DataError if unknown
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::size_t dim_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::vector<float>> vectors_;
};

struct Scored {
  std::string id;
  double similarity;

  friend bool operator==(const Scored&, const Scored&) = default;
};

// sim(query, candidate) over a fixed candidate pool (the train split).
class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  virtual std::string_view name() const = 0;
  virtual double similarity(const corpus::Example& query, std::string_view candidate_id) const = 0;
  // Similarity of the query to every pool member, in pool order.
  virtual std::vector<Scored> score_all(const corpus::Example& query) const = 0;
};

class Bm25Provider final : public SimilarityProvider {
 public:
  explicit Bm25Provider(std::shared_ptr<const Bm25Index> index) : index_(std::move(index)) {}
  static Bm25Provider over(std::span<const corpus::Example> pool, Bm25Params params = {});

  std::string_view name() const override { return "bm25"; }
  double similarity(const corpus::Example& query, std::string_view candidate_id) const override;
  std::vector<Scored> score_all(const corpus::Example& query) const override;
  const Bm25Index& index() const { return *index_; }

 private:
  std::shared_ptr<const Bm25Index> index_;
};

class EmbeddingProvider final : public SimilarityProvider {
 public:
  // Every pool id and every queried id must have a vector in the store.
  EmbeddingProvider(std::shared_ptr<const EmbeddingStore> store, std::vector<std::string> pool_ids);

  std::string_view name() const override { return "embeddings"; }
  double similarity(const corpus::Example& query, std::string_view candidate_id) const override;
  std::vector<Scored> score_all(const corpus::Example& query) const override;

 private:
  std::shared_ptr<const EmbeddingStore> store_;
  std::vector<std::string> pool_;
};

// The k most similar pool members, ordered by (similarity desc, id asc).
// The query's own id is never returned.
std::vector<Scored> retrieve_top_k(const SimilarityProvider& provider, const corpus::Example& query,
                                   std::size_t k);

}  // namespace icl::retrieval
