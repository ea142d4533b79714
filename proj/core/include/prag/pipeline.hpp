#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prag/adapters.hpp"
#include "prag/model.hpp"
#include "prag/retriever.hpp"
#include "prag/store.hpp"

namespace prag {

enum class Mode : std::uint8_t {
  kClosedBook,
  kInContext,            // standard RAG
  kInContextAugmented,   // DA-RAG: rewrites and QA pairs in context
  kParametric,           // merged adapters, question-only prompt
  kCombined,             // merged adapters and passages in context
};

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);
bool uses_retrieval(Mode mode);
bool uses_adapters(Mode mode);
bool uses_context(Mode mode);

inline constexpr int kDefaultGenerationBudget = 32;

// Text after [BOS]: "Passage i: <text>\n" per passage (1-based), then
// "Question: <q>\nAnswer:".
std::string render_prompt_text(std::string_view question, std::span<const std::string> passages);
std::string render_passage(std::size_t index, std::string_view text);

// Token ids of the prompt for `mode`. Closed-book prompts take no passages;
// parametric prompts carry only documents whose adapter is missing. Throws
// Overlong when the prompt leaves fewer than `generation_budget` positions
// free.
std::vector<TokenId> build_prompt(Mode mode, std::string_view question,
                                  std::span<const std::string> passages, int max_seq_len,
                                  int generation_budget = kDefaultGenerationBudget);

// One in-context passage holding a document's rewrites and QA pairs.
std::string render_augmented_passage(const AugmentedDataset& dataset);

struct PhaseTiming {
  double retrieve_ms = 0.0;
  double update_ms = 0.0;
  double generate_ms = 0.0;
};

struct QueryResult {
  std::string answer;
  Mode mode = Mode::kClosedBook;
  RetrievalResult retrieved;
  std::vector<DocId> merged_doc_ids;
  std::vector<DocId> missing_adapter_ids;  // answered in context instead
  bool no_documents = false;               // retrieval was empty; closed-book fallback
  std::size_t prompt_token_count = 0;
  std::size_t generated_token_count = 0;
  PhaseTiming timing;
};

std::string query_result_to_json(const QueryResult& result);

struct PipelineComponents {
  const ModelParams* base = nullptr;
  const Corpus* corpus = nullptr;
  const InvertedIndex* index = nullptr;
  const ParametricCorpus* store = nullptr;  // parametric, combined and DA-RAG modes
  int generation_budget = kDefaultGenerationBudget;
  MergeOptions merge;
};

// Retrieve-update-generate. The base model is shared read only; each call
// builds and drops its own merged delta.
class Pipeline {
 public:
  explicit Pipeline(PipelineComponents components);

  // Retrieves top-k for the question and answers in `mode`.
  QueryResult answer(std::string_view question, Mode mode, int k) const;

  // Answers with a fixed document list standing in for retrieval.
  QueryResult answer_with_docs(std::string_view question, Mode mode,
                               std::span<const DocId> doc_ids) const;

  const PipelineComponents& components() const { return c_; }

 private:
  QueryResult run(std::string_view question, Mode mode, RetrievalResult retrieved,
                  double retrieve_ms) const;

  PipelineComponents c_;
};

// Decoded generation after the prompt, cut at EOS and trimmed.
std::string decode_answer(std::span<const TokenId> generated);

// ---- Query service ----

struct ServiceConfig {
  std::filesystem::path base_checkpoint;
  std::filesystem::path corpus;
  std::filesystem::path index;  // built from the corpus when empty
  std::filesystem::path store_root;
  Mode default_mode = Mode::kParametric;
  int default_k = 3;
  std::string bind_host = "127.0.0.1";
  int bind_port = 8080;
  int generation_budget = kDefaultGenerationBudget;

  // Reads the JSON config; unknown keys are rejected. PRAG_BIND
  // ("host:port") and PRAG_ROOT override the bind address and store root.
  static ServiceConfig load(const std::filesystem::path& path);
  static ServiceConfig from_json(std::string_view json_text);
  void apply_env_overrides();
};

// Loaded state behind the HTTP handlers.
class QueryService {
 public:
  explicit QueryService(ServiceConfig config) : config_(std::move(config)) {}

  void load();
  bool ready() const { return ready_.load(); }
  const ServiceConfig& config() const { return config_; }

  // JSON in, (status, JSON out). 503 before load(), 400 on bad input.
  std::pair<int, std::string> handle_query(std::string_view body) const;
  std::pair<int, std::string> handle_health() const;

 private:
  ServiceConfig config_;
  std::unique_ptr<ModelParams> base_;
  std::unique_ptr<Corpus> corpus_;
  std::unique_ptr<InvertedIndex> index_;
  std::unique_ptr<ParametricCorpus> store_;
  std::unique_ptr<Pipeline> pipeline_;
  std::atomic<bool> ready_{false};
};

// Serves /query and /health until stop_flag is set (or forever when null).
// Loading happens after the socket is bound, so early requests get 503.
void serve(const ServiceConfig& config, const std::atomic<bool>* stop_flag = nullptr,
           std::function<void(int port)> on_listening = {});

}  // namespace prag
