#include "prag/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"
#include "prag/store.hpp"

namespace prag {
namespace {

using nlohmann::json;

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double f1_tokens(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return pred.empty() && gold.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

json timing_json(const PhaseTiming& t) {
  return {{"retrieve_ms", t.retrieve_ms}, {"update_ms", t.update_ms}, {"generate_ms", t.generate_ms}};
}

}  // namespace

void QAItem::validate() const {
  if (gold_answers.empty()) fail(ErrorCode::kInvalidArgument, "QA item has no gold answer");
  for (const auto& g : gold_answers) {
    if (normalize_answer(g).empty()) {
      fail(ErrorCode::kInvalidArgument, "gold answer '" + g + "' is empty after normalization");
    }
  }
}

std::string normalize_answer(std::string_view s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (unsigned char c : s) {
    if (std::ispunct(c)) continue;
    lowered += static_cast<char>(std::tolower(c));
  }
  // Whitespace of any kind separates tokens.
  for (char& c : lowered) {
    if (std::isspace(static_cast<unsigned char>(c))) c = ' ';
  }
  std::string out;
  for (const auto& word : split_ws(lowered)) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

double f1(std::string_view prediction, std::string_view gold) {
  return f1_tokens(split_ws(normalize_answer(prediction)), split_ws(normalize_answer(gold)));
}

double f1(std::string_view prediction, std::span<const std::string> gold_answers) {
  double best = 0.0;
  for (const auto& g : gold_answers) best = std::max(best, f1(prediction, g));
  return best;
}

bool exact_match(std::string_view prediction, std::span<const std::string> gold_answers) {
  const std::string p = normalize_answer(prediction);
  return std::any_of(gold_answers.begin(), gold_answers.end(),
                     [&](const std::string& g) { return normalize_answer(g) == p; });
}

std::vector<QAItem> parse_qa_jsonl(std::string_view content) {
  std::vector<QAItem> items;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    const std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == content.size()) break;
      continue;
    }
    QAItem item;
    try {
      const json j = json::parse(line);
      item.question = j.at("question").get<std::string>();
      item.gold_answers = j.at("answers").get<std::vector<std::string>>();
      if (j.contains("doc_id") && !j["doc_id"].is_null()) {
        std::uint64_t id = 0;
        if (!parse_hex64(j["doc_id"].get<std::string>(), id)) {
          fail(ErrorCode::kInvalidArgument, "line " + std::to_string(line_no) + ": bad doc_id");
        }
        item.source_doc_id = DocId{id};
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::kInvalidArgument,
           "line " + std::to_string(line_no) + ": malformed QA record: " + e.what());
    }
    item.validate();
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<QAItem> load_qa_jsonl(const std::filesystem::path& path) {
  return parse_qa_jsonl(read_file(path));
}

std::string qa_to_jsonl(std::span<const QAItem> items) {
  std::string out;
  for (const auto& item : items) {
    json j = {{"question", item.question}, {"answers", item.gold_answers}};
    if (item.source_doc_id) j["doc_id"] = to_hex(*item.source_doc_id);
    out += j.dump();
    out += '\n';
  }
  return out;
}

const ModeSummary* EvalReport::summary(Mode mode) const {
  for (const auto& s : modes) {
    if (s.mode == mode) return &s;
  }
  return nullptr;
}

std::string EvalReport::to_json() const {
  json summaries = json::array();
  for (const auto& s : modes) {
    summaries.push_back({{"mode", to_string(s.mode)},
                         {"items", s.items},
                         {"failures", s.failures},
                         {"mean_f1", s.mean_f1},
                         {"exact_match_rate", s.exact_match_rate},
                         {"mean_prompt_tokens", s.mean_prompt_tokens},
                         {"mean_timing", timing_json(s.mean_timing)}});
  }
  json rows_json = json::array();
  for (const auto& r : rows) {
    json row = {{"item", r.item},
                {"mode", to_string(r.mode)},
                {"prediction", r.prediction},
                {"f1", r.f1},
                {"exact", r.exact},
                {"prompt_tokens", r.prompt_tokens},
                {"timing", timing_json(r.timing)}};
    if (!r.error.empty()) row["error"] = r.error;
    rows_json.push_back(std::move(row));
  }
  return json{{"modes", summaries}, {"rows", rows_json}}.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %6s %8s %8s %10s %10s %10s %10s\n", "mode", "items",
                "F1", "EM", "prompt_tok", "retr_ms", "update_ms", "gen_ms");
  out << line;
  for (const auto& s : modes) {
    std::snprintf(line, sizeof line, "%-22s %6zu %8s %8s %10s %10s %10s %10s\n",
                  std::string(to_string(s.mode)).c_str(), s.items, fmt(s.mean_f1, 4).c_str(),
                  fmt(s.exact_match_rate, 4).c_str(), fmt(s.mean_prompt_tokens, 1).c_str(),
                  fmt(s.mean_timing.retrieve_ms, 2).c_str(), fmt(s.mean_timing.update_ms, 2).c_str(),
                  fmt(s.mean_timing.generate_ms, 2).c_str());
    out << line;
  }
  return out.str();
}

EvalReport run_benchmark(std::span<const QAItem> items, std::span<const Mode> modes,
                         const Answerer& answerer) {
  EvalReport report;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (const Mode mode : modes) {
      EvalRow row;
      row.item = i;
      row.mode = mode;
      try {
        const QueryResult r = answerer(items[i], mode);
        row.prediction = r.answer;
        row.f1 = f1(r.answer, items[i].gold_answers);
        row.exact = exact_match(r.answer, items[i].gold_answers);
        row.prompt_tokens = r.prompt_token_count;
        row.timing = r.timing;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      report.rows.push_back(std::move(row));
    }
  }
  for (const Mode mode : modes) {
    ModeSummary s;
    s.mode = mode;
    for (const auto& r : report.rows) {
      if (r.mode != mode) continue;
      ++s.items;
      if (!r.error.empty()) ++s.failures;
      s.mean_f1 += r.f1;
      s.exact_match_rate += r.exact ? 1.0 : 0.0;
      s.mean_prompt_tokens += static_cast<double>(r.prompt_tokens);
      s.mean_timing.retrieve_ms += r.timing.retrieve_ms;
      s.mean_timing.update_ms += r.timing.update_ms;
      s.mean_timing.generate_ms += r.timing.generate_ms;
    }
    if (s.items > 0) {
      const double n = static_cast<double>(s.items);
      s.mean_f1 /= n;
      s.exact_match_rate /= n;
      s.mean_prompt_tokens /= n;
      s.mean_timing.retrieve_ms /= n;
      s.mean_timing.update_ms /= n;
      s.mean_timing.generate_ms /= n;
    }
    report.modes.push_back(s);
  }
  if (items.empty()) report.modes.clear();
  return report;
}

EvalReport run_benchmark(std::span<const QAItem> items, std::span<const Mode> modes,
                         const Pipeline& pipeline, int k) {
  return run_benchmark(items, modes, [&](const QAItem& item, Mode mode) {
    return pipeline.answer(item.question, mode, k);
  });
}

}  // namespace prag
