#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prag/common.hpp"
#include "prag/pipeline.hpp"

namespace prag {

struct QAItem {
  std::string question;
  std::vector<std::string> gold_answers;
  std::optional<DocId> source_doc_id;

  // Throws InvalidArgument when there is no gold answer or one normalizes
  // to the empty string.
  void validate() const;
};

// Lowercase, drop punctuation and the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view s);

// Multiset token F1 against the best-matching gold answer.
double f1(std::string_view prediction, std::span<const std::string> gold_answers);
double f1(std::string_view prediction, std::string_view gold);
bool exact_match(std::string_view prediction, std::span<const std::string> gold_answers);

// {"question": string, "answers": [string], "doc_id": optional hex string}
std::vector<QAItem> parse_qa_jsonl(std::string_view content);
std::vector<QAItem> load_qa_jsonl(const std::filesystem::path& path);
std::string qa_to_jsonl(std::span<const QAItem> items);

struct EvalRow {
  std::size_t item = 0;
  Mode mode = Mode::kClosedBook;
  std::string prediction;
  double f1 = 0.0;
  bool exact = false;
  std::size_t prompt_tokens = 0;
  PhaseTiming timing;
  std::string error;  // non-empty when answering failed
};

struct ModeSummary {
  Mode mode = Mode::kClosedBook;
  std::size_t items = 0;
  std::size_t failures = 0;
  double mean_f1 = 0.0;
  double exact_match_rate = 0.0;
  double mean_prompt_tokens = 0.0;
  PhaseTiming mean_timing;
};

struct EvalReport {
  std::vector<ModeSummary> modes;
  std::vector<EvalRow> rows;  // item-major, modes in request order

  const ModeSummary* summary(Mode mode) const;
  std::string to_json() const;
  std::string to_table() const;
};

using Answerer = std::function<QueryResult(const QAItem& item, Mode mode)>;

// Answers every item under every mode. An exception from the answerer is
// recorded on the row (F1 0) and does not stop the run.
EvalReport run_benchmark(std::span<const QAItem> items, std::span<const Mode> modes,
                         const Answerer& answerer);

// Retrieval through the pipeline with the same k for every mode.
EvalReport run_benchmark(std::span<const QAItem> items, std::span<const Mode> modes,
                         const Pipeline& pipeline, int k);

}  // namespace prag
