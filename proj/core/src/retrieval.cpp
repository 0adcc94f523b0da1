#include "icl/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>

#include "icl/error.hpp"

namespace icl::retrieval {

namespace {

// Decodes one UTF-8 sequence at text[i]; invalid bytes decode as themselves
// with length 1 so malformed input never throws.
char32_t decode_utf8(std::string_view text, std::size_t i, std::size_t& len) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= text.size()) return -1;
    const auto b = static_cast<unsigned char>(text[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    len = 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0) {
    if (int c1 = cont(1); c1 >= 0) {
      len = 2;
      return (char32_t(b0 & 0x1F) << 6) | char32_t(c1);
    }
  } else if ((b0 & 0xF0) == 0xE0) {
    int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) {
      len = 3;
      return (char32_t(b0 & 0x0F) << 12) | (char32_t(c1) << 6) | char32_t(c2);
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      len = 4;
      return (char32_t(b0 & 0x07) << 18) | (char32_t(c1) << 12) | (char32_t(c2) << 6) | char32_t(c3);
    }
  }
  len = 1;
  return 0xFFFFFFFF;  // marker: raw byte
}

bool is_separator(char32_t cp) {
  if (cp < 0x80) {
    const bool alnum = (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    return !alnum;
  }
  if (cp == 0x85 || cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 ||
      cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000) {
    return true;  // whitespace
  }
  if (cp >= 0xA1 && cp <= 0xBF) return cp != 0xAA && cp != 0xB5 && cp != 0xBA;
  if (cp == 0xD7 || cp == 0xF7) return true;
  if (cp >= 0x2010 && cp <= 0x205E) return true;
  if ((cp >= 0x3001 && cp <= 0x3003) || (cp >= 0x3008 && cp <= 0x3011) || (cp >= 0x3014 && cp <= 0x301F)) {
    return true;
  }
  if ((cp >= 0xFF01 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) || (cp >= 0xFF3B && cp <= 0xFF40) ||
      (cp >= 0xFF5B && cp <= 0xFF65)) {
    return true;
  }
  return false;
}

char32_t fold_case(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool ranks_before(const Scored& a, const Scored& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.id < b.id;
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated embedding file");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF), char((v >> 24) & 0xFF)};
  out.write(b, 4);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> terms;
  std::string current;
  for (std::size_t i = 0; i < text.size();) {
    std::size_t len = 1;
    const char32_t cp = decode_utf8(text, i, len);
    if (cp == 0xFFFFFFFF) {
      current += text[i];
    } else if (is_separator(cp)) {
      if (!current.empty()) terms.push_back(std::move(current));
      current.clear();
    } else {
      append_utf8(current, fold_case(cp));
    }
    i += len;
  }
  if (!current.empty()) terms.push_back(std::move(current));
  return terms;
}

std::string example_text(const corpus::Example& ex) {
  std::string out;
  for (const auto& [_, value] : ex.fields) {
    if (!out.empty()) out += ' ';
    out += value;
  }
  return out;
}

Bm25Index Bm25Index::build(std::span<const Document> corpus, Bm25Params params) {
  if (corpus.empty()) throw DataError("cannot build a BM25 index over an empty corpus");
  Bm25Index index;
  index.params_ = params;
  index.ids_.reserve(corpus.size());
  index.doc_lengths_.reserve(corpus.size());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto terms = tokenize(corpus[d].text);
    std::map<std::string, std::uint32_t> counts;
    for (const auto& t : terms) ++counts[t];
    for (auto& [term, tf] : counts) {
      index.postings_[term].push_back({static_cast<std::uint32_t>(d), tf});
    }
    index.ids_.push_back(corpus[d].id);
    index.doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
  }
  index.finalize();
  return index;
}

void Bm25Index::finalize() {
  id_index_.clear();
  for (std::size_t d = 0; d < ids_.size(); ++d) {
    if (!id_index_.emplace(ids_[d], d).second) throw DataError("duplicate document id '" + ids_[d] + "'");
  }
  double total = 0.0;
  for (auto len : doc_lengths_) total += len;
  avg_doc_length_ = total / static_cast<double>(doc_lengths_.size());
}

double Bm25Index::idf(std::string_view term) const {
  const double n = static_cast<double>(corpus_size());
  const double df = doc_freq(term);
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

std::uint32_t Bm25Index::doc_freq(std::string_view term) const {
  const auto it = postings_.find(std::string(term));
  return it == postings_.end() ? 0 : static_cast<std::uint32_t>(it->second.size());
}

std::uint32_t Bm25Index::term_freq(std::string_view term, std::size_t doc) const {
  const auto it = postings_.find(std::string(term));
  if (it == postings_.end()) return 0;
  const auto& list = it->second;
  const auto p = std::lower_bound(list.begin(), list.end(), doc,
                                  [](const Posting& a, std::size_t d) { return a.doc < d; });
  return (p != list.end() && p->doc == doc) ? p->tf : 0;
}

std::size_t Bm25Index::index_of(std::string_view id) const {
  const auto it = id_index_.find(std::string(id));
  if (it == id_index_.end()) throw DataError("unknown document id '" + std::string(id) + "'");
  return it->second;
}

double Bm25Index::term_weight(double idf, std::uint32_t tf, std::uint32_t doc_len) const {
  const double f = tf;
  const double norm = params_.k1 * (1.0 - params_.b + params_.b * doc_len / avg_doc_length_);
  return idf * f * (params_.k1 + 1.0) / (f + norm);
}

double Bm25Index::score_at(std::span<const std::string> query_terms, std::size_t doc) const {
  if (doc >= corpus_size()) throw DataError("document index out of range");
  double s = 0.0;
  for (const auto& term : query_terms) {
    const auto tf = term_freq(term, doc);
    if (tf > 0) s += term_weight(idf(term), tf, doc_lengths_[doc]);
  }
  return s;
}

double Bm25Index::score(std::span<const std::string> query_terms, std::string_view doc_id) const {
  return score_at(query_terms, index_of(doc_id));
}

std::vector<double> Bm25Index::score_all(std::span<const std::string> query_terms) const {
  std::vector<double> scores(corpus_size(), 0.0);
  for (const auto& term : query_terms) {
    const auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(term);
    for (const auto& p : it->second) scores[p.doc] += term_weight(w, p.tf, doc_lengths_[p.doc]);
  }
  return scores;
}

nlohmann::json Bm25Index::to_json() const {
  nlohmann::json j;
  j["format"] = "icl-bm25-v1";
  j["k1"] = params_.k1;
  j["b"] = params_.b;
  j["ids"] = ids_;
  j["doc_lengths"] = doc_lengths_;
  nlohmann::json postings = nlohmann::json::object();
  for (const auto& [term, list] : postings_) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : list) arr.push_back({p.doc, p.tf});
    postings[term] = std::move(arr);
  }
  j["postings"] = std::move(postings);
  return j;
}

Bm25Index Bm25Index::from_json(const nlohmann::json& j) {
  Bm25Index index;
  try {
    if (j.at("format") != "icl-bm25-v1") throw DataError("unsupported BM25 index format");
    index.params_ = {j.at("k1").get<double>(), j.at("b").get<double>()};
    index.ids_ = j.at("ids").get<std::vector<std::string>>();
    index.doc_lengths_ = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
    for (const auto& [term, arr] : j.at("postings").items()) {
      auto& list = index.postings_[term];
      for (const auto& p : arr) list.push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid BM25 index: ") + e.what());
  }
  if (index.ids_.empty() || index.ids_.size() != index.doc_lengths_.size()) {
    throw DataError("invalid BM25 index: inconsistent document tables");
  }
  index.finalize();
  return index;
}

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) {
    throw DataError("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                    std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += double(u[i]) * double(v[i]);
    nu += double(u[i]) * double(u[i]);
    nv += double(v[i]) * double(v[i]);
  }
  if (nu == 0.0 || nv == 0.0) throw DataError("cosine: zero-norm vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

void EmbeddingStore::insert(std::string id, std::vector<float> vec) {
  if (vec.size() != dim_) {
    throw DataError("embedding '" + id + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                    std::to_string(dim_));
  }
  for (float x : vec) {
    if (!std::isfinite(x)) throw DataError("embedding '" + id + "' has a non-finite component");
  }
  if (vectors_.contains(id)) throw DataError("duplicate embedding id '" + id + "'");
  ids_.push_back(id);
  vectors_.emplace(std::move(id), std::move(vec));
}

bool EmbeddingStore::contains(std::string_view id) const { return vectors_.contains(std::string(id)); }

std::span<const float> EmbeddingStore::at(std::string_view id) const {
  const auto it = vectors_.find(std::string(id));
  if (it == vectors_.end()) throw DataError("no embedding for id '" + std::string(id) + "'");
  return it->second;
}

EmbeddingStore EmbeddingStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open embeddings file " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, "EMB1", 4) == 0) {
    const std::uint32_t dim = read_u32(in);
    const std::uint32_t count = read_u32(in);
    EmbeddingStore store(dim);
    for (std::uint32_t r = 0; r < count; ++r) {
      unsigned char lb[2];
      if (!in.read(reinterpret_cast<char*>(lb), 2)) throw DataError(path.string() + ": truncated record");
      std::string id(static_cast<std::size_t>(lb[0] | (lb[1] << 8)), '\0');
      if (!in.read(id.data(), static_cast<std::streamsize>(id.size()))) {
        throw DataError(path.string() + ": truncated record");
      }
      std::vector<float> vec(dim);
      for (auto& x : vec) x = std::bit_cast<float>(read_u32(in));
      store.insert(std::move(id), std::move(vec));
    }
    return store;
  }

  in.clear();
  in.seekg(0);
  std::optional<EmbeddingStore> store;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    std::string id;
    std::vector<float> vec;
    try {
      const auto j = nlohmann::json::parse(line);
      id = j.at("id").get<std::string>();
      for (const auto& x : j.at("vec")) {
        // JSON has no NaN literal; null marks a non-finite value.
        vec.push_back(x.is_null() ? std::numeric_limits<float>::quiet_NaN() : x.get<float>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + "malformed record: " + e.what());
    }
    if (!store) store.emplace(vec.size());
    try {
      store->insert(std::move(id), std::move(vec));
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  if (!store) throw DataError(path.string() + ": no embeddings");
  return std::move(*store);
}

void EmbeddingStore::save_binary(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("EMB1", 4);
  write_u32(out, static_cast<std::uint32_t>(dim_));
  write_u32(out, static_cast<std::uint32_t>(ids_.size()));
  for (const auto& id : ids_) {
    const char lb[2] = {char(id.size() & 0xFF), char((id.size() >> 8) & 0xFF)};
    out.write(lb, 2);
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (float x : vectors_.at(id)) write_u32(out, std::bit_cast<std::uint32_t>(x));
  }
}

Bm25Provider Bm25Provider::over(std::span<const corpus::Example> pool, Bm25Params params) {
  std::vector<Document> docs;
  docs.reserve(pool.size());
  for (const auto& ex : pool) docs.push_back({ex.id, example_text(ex)});
  return Bm25Provider(std::make_shared<const Bm25Index>(Bm25Index::build(docs, params)));
}

double Bm25Provider::similarity(const corpus::Example& query, std::string_view candidate_id) const {
  const auto terms = tokenize(example_text(query));
  return index_->score(terms, candidate_id);
}

std::vector<Scored> Bm25Provider::score_all(const corpus::Example& query) const {
  const auto terms = tokenize(example_text(query));
  const auto scores = index_->score_all(terms);
  std::vector<Scored> out;
  out.reserve(scores.size());
  for (std::size_t d = 0; d < scores.size(); ++d) out.push_back({index_->ids()[d], scores[d]});
  return out;
}

EmbeddingProvider::EmbeddingProvider(std::shared_ptr<const EmbeddingStore> store,
                                     std::vector<std::string> pool_ids)
    : store_(std::move(store)), pool_(std::move(pool_ids)) {
  for (const auto& id : pool_) {
    if (!store_->contains(id)) throw DataError("embedding store has no vector for pool id '" + id + "'");
  }
}

double EmbeddingProvider::similarity(const corpus::Example& query, std::string_view candidate_id) const {
  return cosine(store_->at(query.id), store_->at(candidate_id));
}

std::vector<Scored> EmbeddingProvider::score_all(const corpus::Example& query) const {
  const auto q = store_->at(query.id);
  std::vector<Scored> out;
  out.reserve(pool_.size());
  for (const auto& id : pool_) out.push_back({id, cosine(q, store_->at(id))});
  return out;
}

std::vector<Scored> retrieve_top_k(const SimilarityProvider& provider, const corpus::Example& query,
                                   std::size_t k) {
  if (k == 0) throw ConfigError("retrieve_top_k: k must be at least 1");
  auto all = provider.score_all(query);
  std::erase_if(all, [&](const Scored& s) { return s.id == query.id; });
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), ranks_before);
  all.resize(keep);
  return all;
}

}  // namespace icl::retrieval
