#include "prag/pipeline.hpp"

#include <chrono>

#include "json.hpp"

namespace prag {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

json ids_json(const std::vector<DocId>& ids) {
  json arr = json::array();
  for (const DocId id : ids) arr.push_back(to_hex(id));
  return arr;
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::kClosedBook: return "closed_book";
    case Mode::kInContext: return "in_context";
    case Mode::kInContextAugmented: return "in_context_augmented";
    case Mode::kParametric: return "parametric";
    case Mode::kCombined: return "combined";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::kClosedBook, Mode::kInContext, Mode::kInContextAugmented,
                 Mode::kParametric, Mode::kCombined}) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorCode::kInvalidArgument, "unknown mode '" + std::string(name) + "'");
}

bool uses_retrieval(Mode mode) { return mode != Mode::kClosedBook; }
bool uses_adapters(Mode mode) { return mode == Mode::kParametric || mode == Mode::kCombined; }
bool uses_context(Mode mode) {
  return mode == Mode::kInContext || mode == Mode::kInContextAugmented || mode == Mode::kCombined;
}

std::string render_passage(std::size_t index, std::string_view text) {
  return "Passage " + std::to_string(index) + ": " + std::string(text) + "\n";
}

std::string render_prompt_text(std::string_view question, std::span<const std::string> passages) {
  std::string out;
  for (std::size_t i = 0; i < passages.size(); ++i) out += render_passage(i + 1, passages[i]);
  out += "Question: ";
  out += question;
  out += "\nAnswer:";
  return out;
}

std::vector<TokenId> build_prompt(Mode mode, std::string_view question,
                                  std::span<const std::string> passages, int max_seq_len,
                                  int generation_budget) {
  if (!passages.empty() && !uses_context(mode) && mode != Mode::kParametric) {
    fail(ErrorCode::kInvalidArgument, "closed-book prompts take no passages");
  }
  std::vector<TokenId> tokens{text::kBos};
  const auto body = text::encode_bytes(render_prompt_text(question, passages));
  tokens.insert(tokens.end(), body.begin(), body.end());
  const long room = static_cast<long>(max_seq_len) - generation_budget;
  if (static_cast<long>(tokens.size()) > room) {
    fail(ErrorCode::kOverlong, "prompt of " + std::to_string(tokens.size()) +
                                   " tokens leaves no room for " +
                                   std::to_string(generation_budget) + " generated tokens");
  }
  return tokens;
}

std::string render_augmented_passage(const AugmentedDataset& dataset) {
  std::string out;
  for (const auto& r : dataset.rewrites) {
    if (!out.empty()) out += ' ';
    out += r;
  }
  for (const auto& qa : dataset.qa_pairs) {
    out += ' ';
    out += qa.question;
    out += ' ';
    out += qa.answer;
  }
  return out;
}

std::string decode_answer(std::span<const TokenId> generated) {
  std::vector<TokenId> bytes;
  for (const TokenId t : generated) {
    if (t == text::kEos) break;
    if (text::is_special(t)) continue;
    bytes.push_back(t);
  }
  return std::string(trim(text::decode_bytes(bytes)));
}

std::string query_result_to_json(const QueryResult& r) {
  json retrieved = json::array();
  for (const auto& s : r.retrieved.ranked) {
    retrieved.push_back({{"doc_id", to_hex(s.id)}, {"score", s.score}});
  }
  const json j = {
      {"answer", r.answer},
      {"mode", to_string(r.mode)},
      {"retrieved", retrieved},
      {"merged_doc_ids", ids_json(r.merged_doc_ids)},
      {"missing_adapter_ids", ids_json(r.missing_adapter_ids)},
      {"no_documents", r.no_documents},
      {"prompt_token_count", r.prompt_token_count},
      {"generated_token_count", r.generated_token_count},
      {"timing",
       {{"retrieve_ms", r.timing.retrieve_ms},
        {"update_ms", r.timing.update_ms},
        {"generate_ms", r.timing.generate_ms}}},
  };
  return j.dump();
}

Pipeline::Pipeline(PipelineComponents components) : c_(components) {
  if (!c_.base) fail(ErrorCode::kInvalidArgument, "pipeline needs a base model");
  if (c_.generation_budget < 1) fail(ErrorCode::kInvalidArgument, "generation budget must be >= 1");
}

QueryResult Pipeline::answer(std::string_view question, Mode mode, int k) const {
  RetrievalResult retrieved;
  double retrieve_ms = 0.0;
  if (uses_retrieval(mode)) {
    if (k < 1) fail(ErrorCode::kInvalidArgument, "k must be >= 1 for retrieval modes");
    if (!c_.index) fail(ErrorCode::kInvalidArgument, "mode needs an index");
    const auto start = Clock::now();
    retrieved = c_.index->top_k(question, static_cast<std::size_t>(k));
    retrieve_ms = ms_since(start);
  }
  return run(question, mode, std::move(retrieved), retrieve_ms);
}

QueryResult Pipeline::answer_with_docs(std::string_view question, Mode mode,
                                       std::span<const DocId> doc_ids) const {
  RetrievalResult fixed;
  if (uses_retrieval(mode)) {
    for (const DocId id : doc_ids) fixed.ranked.push_back(ScoredDoc{id, 0.0});
  }
  return run(question, mode, std::move(fixed), 0.0);
}

QueryResult Pipeline::run(std::string_view question, Mode mode, RetrievalResult retrieved,
                          double retrieve_ms) const {
  QueryResult result;
  result.mode = mode;
  result.timing.retrieve_ms = retrieve_ms;
  result.retrieved = std::move(retrieved);
  const ModelParams& base = *c_.base;

  Mode effective = mode;
  if (uses_retrieval(mode) && result.retrieved.ranked.empty()) {
    result.no_documents = true;
    effective = Mode::kClosedBook;
  }
  if ((uses_adapters(effective) || effective == Mode::kInContextAugmented) && !c_.store) {
    fail(ErrorCode::kInvalidArgument, std::string(to_string(mode)) + " mode needs a parametric corpus");
  }

  std::vector<DocId> ids;
  for (const auto& s : result.retrieved.ranked) ids.push_back(s.id);

  auto doc_text = [&](DocId id) -> const std::string& {
    const Document* d = c_.corpus ? c_.corpus->find(id) : nullptr;
    if (!d) fail(ErrorCode::kNotFound, "document " + to_hex(id) + " is not in the corpus");
    return d->text;
  };

  // Update.
  const auto update_start = Clock::now();
  std::shared_ptr<const MergedDelta> delta;
  if (uses_adapters(effective)) {
    FetchResult fetched = c_.store->get_many(ids);
    result.missing_adapter_ids = fetched.missing;
    if (!fetched.adapters.empty()) {
      delta = std::make_shared<const MergedDelta>(merge(fetched.adapters, c_.merge));
      result.merged_doc_ids = delta->source_doc_ids;
    }
  }
  const EffectiveWeights weights = delta ? apply(base, delta) : EffectiveWeights(base);
  result.timing.update_ms = ms_since(update_start);

  // Prompt.
  std::vector<std::string> passages;
  if (effective == Mode::kInContext || effective == Mode::kCombined) {
    for (const DocId id : ids) passages.push_back(doc_text(id));
  } else if (effective == Mode::kInContextAugmented) {
    for (const DocId id : ids) {
      if (auto ds = c_.store->get_dataset(id)) {
        passages.push_back(render_augmented_passage(*ds));
      } else {
        passages.push_back(doc_text(id));
      }
    }
  } else if (effective == Mode::kParametric) {
    for (const DocId id : result.missing_adapter_ids) passages.push_back(doc_text(id));
  }
  const auto prompt =
      build_prompt(effective, question, passages, base.config.max_seq_len, c_.generation_budget);
  result.prompt_token_count = prompt.size();

  // Generate.
  const auto gen_start = Clock::now();
  const auto out = generate_greedy(weights, prompt, c_.generation_budget);
  result.timing.generate_ms = ms_since(gen_start);
  const std::span<const TokenId> generated = std::span<const TokenId>(out).subspan(prompt.size());
  result.generated_token_count = generated.size();
  result.answer = decode_answer(generated);
  return result;
}

}  // namespace prag
