#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prag/common.hpp"

namespace prag {

struct Document {
  DocId id;
  std::string title;
  std::string text;

  bool operator==(const Document&) const = default;
};

// Stable content hash of (title, text).
DocId content_id(std::string_view title, std::string_view text);

// Ordered document collection with unique ids. Re-adding a document whose id
// is already present is a no-op, so re-ingestion is idempotent.
class Corpus {
 public:
  Corpus() = default;

  // Returns false if the id was already present.
  bool add(Document doc);
  bool add(std::string title, std::string text);

  const std::vector<Document>& docs() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }
  const Document* find(DocId id) const;

  // JSON Lines: {"id": optional string, "title": string, "text": string}.
  // A 16-digit hex id is taken literally; any other id string is hashed.
  static Corpus load_jsonl(const std::filesystem::path& path);
  static Corpus parse_jsonl(std::string_view content);
  std::string to_jsonl() const;
  void save_jsonl(const std::filesystem::path& path) const;

 private:
  std::vector<Document> docs_;
  std::unordered_map<DocId, std::size_t> by_id_;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct Posting {
  std::uint32_t doc;  // position in the corpus
  std::uint32_t tf;
};

struct ScoredDoc {
  DocId id;
  double score;
};

struct RetrievalResult {
  std::vector<ScoredDoc> ranked;  // score descending, id ascending on ties
};

// Okapi BM25 inverted index. Immutable once built.
class InvertedIndex {
 public:
  static InvertedIndex build(const Corpus& corpus, Bm25Params params = {});

  double idf(std::string_view term) const;
  // Score of one document for a tokenized query.
  double score(std::span<const std::string> query, std::size_t doc) const;
  RetrievalResult top_k(std::string_view query_text, std::size_t k) const;

  const std::vector<Posting>* postings(std::string_view term) const;
  std::size_t doc_frequency(std::string_view term) const;
  std::size_t doc_count() const { return doc_ids_.size(); }
  const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
  double avg_doc_length() const { return avg_doc_length_; }
  const Bm25Params& params() const { return params_; }
  DocId doc_id(std::size_t pos) const { return doc_ids_[pos]; }
  const std::unordered_map<std::string, std::vector<Posting>>& all_postings() const {
    return postings_;
  }

  // Per-term contribution for a term with document frequency df and term
  // frequency tf in a document of length len.
  double term_weight(std::size_t df, std::uint32_t tf, std::uint32_t len) const;

  // Persisted as JSON: params, doc ids, lengths and postings.
  void save(const std::filesystem::path& path) const;
  static InvertedIndex load(const std::filesystem::path& path);

 private:
  InvertedIndex() = default;

  Bm25Params params_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::vector<std::uint32_t> doc_lengths_;
  std::vector<DocId> doc_ids_;
  double avg_doc_length_ = 0.0;
};

// Free-function spellings of the index operations.
inline InvertedIndex build_index(const Corpus& corpus, double k1 = 1.2, double b = 0.75) {
  return InvertedIndex::build(corpus, Bm25Params{k1, b});
}
inline double bm25_score(const InvertedIndex& index, std::span<const std::string> query,
                         std::size_t doc) {
  return index.score(query, doc);
}
inline RetrievalResult retrieve_top_k(const InvertedIndex& index, std::string_view query,
                                      std::size_t k) {
  return index.top_k(query, k);
}

}  // namespace prag
