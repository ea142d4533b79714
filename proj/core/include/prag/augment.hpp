#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "prag/common.hpp"
#include "prag/retriever.hpp"

namespace prag {

struct QAPair {
  std::string question;
  std::string answer;
  bool operator==(const QAPair&) const = default;
};

// Rewrites crossed with QA pairs for one document. rewrites[0] is the
// original text; the training triples are every (rewrite, qa) combination.
struct AugmentedDataset {
  DocId doc_id;
  std::vector<std::string> rewrites;
  std::vector<QAPair> qa_pairs;

  struct Triple {
    std::size_t rewrite_index;
    std::size_t qa_index;
    std::string_view document;
    std::string_view question;
    std::string_view answer;
  };

  std::size_t triple_count() const { return rewrites.size() * qa_pairs.size(); }
  // Rewrite-major enumeration of the cross product.
  std::vector<Triple> triples() const;
  // Throws InvalidArgument on an empty rewrite or answer.
  void validate() const;
};

// ---- Synthetic fact world ----

enum class Relation : std::uint8_t {
  kCapitalOf,
  kBornIn,
  kFounded,
  kLocatedIn,
  kSpeaks,
  kWorksFor,
  kMarriedTo,
};
inline constexpr int kRelationCount = 7;

std::string_view to_string(Relation r);
Relation parse_relation(std::string_view name);

struct FactTriple {
  std::string subject;
  Relation relation;
  std::string object;
  auto operator<=>(const FactTriple&) const = default;
};

// Sentence templates use {S} and {O} placeholders.
struct RelationTemplates {
  std::vector<std::string_view> statements;    // at least four
  std::vector<std::string_view> train_questions;
  std::vector<std::string_view> heldout_questions;
  bool asks_subject;  // the answer is the subject rather than the object
};
const RelationTemplates& templates_for(Relation r);

std::string render_statement(const FactTriple& fact, std::size_t template_index);
QAPair render_question(const FactTriple& fact, std::string_view question_template);

// Recovers every fact stated in the text with one of the statement
// templates. Sentences that match no template are ignored.
std::vector<FactTriple> extract_facts(std::string_view text);

// Pronounceable nonsense names. Every word starts with a consonant cluster
// that English words do not begin with.
class EntityLexicon {
 public:
  explicit EntityLexicon(std::uint64_t seed) : seed_(seed), counter_(0) {}
  // A fresh single word not produced before by this lexicon and absent from
  // `exclude`. The name space holds 14,000 words; throws InvalidArgument
  // once it is used up.
  std::string fresh_word();
  std::string fresh_person();
  void exclude(const std::set<std::string>& words) { used_.insert(words.begin(), words.end()); }
  const std::set<std::string>& used() const { return used_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
  std::set<std::string> used_;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<std::vector<FactTriple>> facts;     // per document
  std::vector<std::vector<QAPair>> heldout_qa;    // per document, one per fact
  std::set<std::string> entity_words() const;
};

struct SyntheticOptions {
  std::set<std::string> exclude_words;  // names that must not be reused
};

// Fabricated documents with `triples_per_doc` facts each. No entity appears
// in more than one document. Held-out questions use templates disjoint from
// the training question templates.
SyntheticCorpus gen_synthetic_corpus(int num_docs, int triples_per_doc, std::uint64_t seed,
                                     const SyntheticOptions& options = {});

// ---- Rule-based augmentation ----

// n paraphrases of the document. Template-built documents are re-rendered
// with different statement templates in a shuffled order; other text gets
// sentence-order permutations only.
std::vector<std::string> rewrite_rule_based(const Document& doc, int n, std::uint64_t seed);

// m QA pairs from the training question templates, cycling over facts and
// templates. Throws InsufficientFacts when the document states no fact.
std::vector<QAPair> gen_qa_rule_based(const Document& doc, int m, std::uint64_t seed);

// ---- LLM-backed augmentation ----

struct AugmenterEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8000/v1
  std::string model;
  std::string token_env = "AUGMENTER_TOKEN";
  double timeout_seconds = 60.0;
  int max_retries = 3;
  int initial_backoff_ms = 200;
};

// Prompt builders for the two augmentation calls.
std::string rewrite_prompt(const Document& doc, int n);
std::string qa_prompt(const Document& doc, int m);
// Response parsers. Throw MalformedResponse when fewer than n / m items
// can be read.
std::vector<std::string> parse_rewrites(std::string_view completion, int n);
std::vector<QAPair> parse_qa_pairs(std::string_view completion, int m);

// Sends the rewrite and QA prompts to a chat-completion endpoint, retrying
// with exponential backoff. Throws EndpointUnreachable or MalformedResponse.
AugmentedDataset augment_llm(const Document& doc, int n, int m, const AugmenterEndpoint& endpoint);

// Augments many documents with at most `max_in_flight` concurrent requests.
std::vector<AugmentedDataset> augment_llm_many(const std::vector<Document>& docs, int n, int m,
                                               const AugmenterEndpoint& endpoint,
                                               int max_in_flight);

// ---- Dataset assembly ----

// Produces rewrites and QA pairs for one document.
class Augmenter {
 public:
  virtual ~Augmenter() = default;
  virtual std::vector<std::string> rewrite(const Document& doc, int n) = 0;
  virtual std::vector<QAPair> questions(const Document& doc, int m) = 0;
};

class RuleBasedAugmenter final : public Augmenter {
 public:
  explicit RuleBasedAugmenter(std::uint64_t seed) : seed_(seed) {}
  std::vector<std::string> rewrite(const Document& doc, int n) override;
  std::vector<QAPair> questions(const Document& doc, int m) override;

 private:
  std::uint64_t seed_;
};

class LlmAugmenter final : public Augmenter {
 public:
  explicit LlmAugmenter(AugmenterEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<std::string> rewrite(const Document& doc, int n) override;
  std::vector<QAPair> questions(const Document& doc, int m) override;

 private:
  AugmenterEndpoint endpoint_;
};

// Original plus n rewrites, crossed with m QA pairs.
AugmentedDataset build_dataset(const Document& doc, int n, int m, Augmenter& augmenter);

// JSON Lines persistence for augmented datasets (used by the DA-RAG mode).
std::string dataset_to_json(const AugmentedDataset& dataset);
AugmentedDataset dataset_from_json(std::string_view json_text);

}  // namespace prag
