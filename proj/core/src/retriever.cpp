#include "prag/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "prag/text.hpp"

namespace prag {

using nlohmann::json;

DocId content_id(std::string_view title, std::string_view text) {
  Fnv1a64 h;
  h.update(title);
  h.update("\x1f", 1);
  h.update(text);
  return DocId{h.digest()};
}

bool Corpus::add(Document doc) {
  if (by_id_.contains(doc.id)) return false;
  by_id_.emplace(doc.id, docs_.size());
  docs_.push_back(std::move(doc));
  return true;
}

bool Corpus::add(std::string title, std::string text) {
  const DocId id = content_id(title, text);
  return add(Document{id, std::move(title), std::move(text)});
}

const Document* Corpus::find(DocId id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &docs_[it->second];
}

Corpus Corpus::parse_jsonl(std::string_view content) {
  Corpus corpus;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCode::kInvalidArgument,
           "corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
      fail(ErrorCode::kInvalidArgument,
           "corpus line " + std::to_string(line_no) + ": missing string field \"text\"");
    }
    std::string title = obj.value("title", std::string{});
    std::string text = obj["text"].get<std::string>();
    DocId id = content_id(title, text);
    if (obj.contains("id") && !obj["id"].is_null()) {
      const std::string raw = obj["id"].is_string() ? obj["id"].get<std::string>()
                                                    : obj["id"].dump();
      std::uint64_t parsed = 0;
      id = parse_hex64(raw, parsed) ? DocId{parsed} : DocId{fnv1a64(raw)};
    }
    corpus.add(Document{id, std::move(title), std::move(text)});
  }
  return corpus;
}

Corpus Corpus::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open corpus " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str());
}

std::string Corpus::to_jsonl() const {
  std::string out;
  for (const Document& d : docs_) {
    json obj = {{"id", to_hex(d.id)}, {"title", d.title}, {"text", d.text}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void Corpus::save_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write corpus " + path.string());
  out << to_jsonl();
}

InvertedIndex InvertedIndex::build(const Corpus& corpus, Bm25Params params) {
  if (corpus.empty()) fail(ErrorCode::kEmptyCorpus, "cannot index an empty corpus");
  if (!(params.k1 > 0.0) || params.b < 0.0 || params.b > 1.0) {
    fail(ErrorCode::kInvalidArgument, "BM25 requires k1 > 0 and 0 <= b <= 1");
  }
  InvertedIndex index;
  index.params_ = params;
  index.doc_ids_.reserve(corpus.size());
  index.doc_lengths_.reserve(corpus.size());
  std::uint64_t total = 0;
  for (std::size_t pos = 0; pos < corpus.size(); ++pos) {
    const Document& doc = corpus[pos];
    const auto words = text::tokenize_words(doc.text);
    std::map<std::string, std::uint32_t> counts;
    for (const auto& w : words) ++counts[w];
    for (auto& [term, tf] : counts) {
      index.postings_[term].push_back(Posting{static_cast<std::uint32_t>(pos), tf});
    }
    index.doc_ids_.push_back(doc.id);
    index.doc_lengths_.push_back(static_cast<std::uint32_t>(words.size()));
    total += words.size();
  }
  index.avg_doc_length_ = static_cast<double>(total) / static_cast<double>(corpus.size());
  return index;
}

const std::vector<Posting>* InvertedIndex::postings(std::string_view term) const {
  auto it = postings_.find(std::string(term));
  return it == postings_.end() ? nullptr : &it->second;
}

std::size_t InvertedIndex::doc_frequency(std::string_view term) const {
  const auto* p = postings(term);
  return p ? p->size() : 0;
}

double InvertedIndex::idf(std::string_view term) const {
  const double n = static_cast<double>(doc_count());
  const double df = static_cast<double>(doc_frequency(term));
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double InvertedIndex::term_weight(std::size_t df, std::uint32_t tf, std::uint32_t len) const {
  const double n = static_cast<double>(doc_count());
  const double dfd = static_cast<double>(df);
  const double idf = std::log(1.0 + (n - dfd + 0.5) / (dfd + 0.5));
  const double tfd = static_cast<double>(tf);
  const double k1 = params_.k1;
  const double b = params_.b;
  const double norm = tfd + k1 * (1.0 - b + b * static_cast<double>(len) / avg_doc_length_);
  return idf * (tfd * (k1 + 1.0)) / norm;
}

double InvertedIndex::score(std::span<const std::string> query, std::size_t doc) const {
  if (doc >= doc_count()) fail(ErrorCode::kInvalidArgument, "document position out of range");
  double total = 0.0;
  for (const std::string& term : query) {
    const auto* plist = postings(term);
    if (!plist) continue;
    auto it = std::lower_bound(plist->begin(), plist->end(), doc,
                               [](const Posting& p, std::size_t d) { return p.doc < d; });
    if (it == plist->end() || it->doc != doc) continue;
    total += term_weight(plist->size(), it->tf, doc_lengths_[doc]);
  }
  return total;
}

RetrievalResult InvertedIndex::top_k(std::string_view query_text, std::size_t k) const {
  if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
  const auto query = text::tokenize_words(query_text);
  std::vector<double> scores(doc_count(), 0.0);
  std::vector<bool> touched(doc_count(), false);
  for (const std::string& term : query) {
    const auto* plist = postings(term);
    if (!plist) continue;
    for (const Posting& p : *plist) {
      scores[p.doc] += term_weight(plist->size(), p.tf, doc_lengths_[p.doc]);
      touched[p.doc] = true;
    }
  }
  std::vector<ScoredDoc> hits;
  for (std::size_t d = 0; d < scores.size(); ++d) {
    if (touched[d] && scores[d] > 0.0) hits.push_back(ScoredDoc{doc_ids_[d], scores[d]});
  }
  auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    better);
  hits.resize(keep);
  return RetrievalResult{std::move(hits)};
}

void InvertedIndex::save(const std::filesystem::path& path) const {
  json j;
  j["format"] = "prag-bm25";
  j["version"] = 1;
  j["k1"] = params_.k1;
  j["b"] = params_.b;
  json ids = json::array();
  for (DocId id : doc_ids_) ids.push_back(to_hex(id));
  j["doc_ids"] = std::move(ids);
  j["doc_lengths"] = doc_lengths_;
  // Sorted terms keep the file byte-stable across runs.
  std::map<std::string, const std::vector<Posting>*> sorted;
  for (const auto& [term, plist] : postings_) sorted.emplace(term, &plist);
  json post = json::object();
  for (const auto& [term, plist] : sorted) {
    json arr = json::array();
    for (const Posting& p : *plist) arr.push_back({p.doc, p.tf});
    post[term] = std::move(arr);
  }
  j["postings"] = std::move(post);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write index " + path.string());
  out << j.dump() << '\n';
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open index " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed index: ") + e.what());
  }
  if (j.value("format", "") != "prag-bm25") {
    fail(ErrorCode::kBadMagic, "not a BM25 index file: " + path.string());
  }
  if (j.value("version", 0) != 1) fail(ErrorCode::kVersionUnsupported, "index version");
  InvertedIndex index;
  index.params_ = Bm25Params{j.at("k1").get<double>(), j.at("b").get<double>()};
  for (const auto& s : j.at("doc_ids")) {
    std::uint64_t v = 0;
    if (!parse_hex64(s.get<std::string>(), v)) fail(ErrorCode::kInvalidArgument, "bad doc id");
    index.doc_ids_.push_back(DocId{v});
  }
  index.doc_lengths_ = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
  if (index.doc_lengths_.size() != index.doc_ids_.size() || index.doc_ids_.empty()) {
    fail(ErrorCode::kInvalidArgument, "index doc tables are inconsistent");
  }
  std::uint64_t total = 0;
  for (auto len : index.doc_lengths_) total += len;
  index.avg_doc_length_ =
      static_cast<double>(total) / static_cast<double>(index.doc_lengths_.size());
  for (const auto& [term, arr] : j.at("postings").items()) {
    std::vector<Posting> plist;
    for (const auto& p : arr) {
      Posting post{p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()};
      if (post.doc >= index.doc_ids_.size()) {
        fail(ErrorCode::kInvalidArgument, "posting refers to unknown document");
      }
      plist.push_back(post);
    }
    index.postings_.emplace(term, std::move(plist));
  }
  return index;
}

}  // namespace prag
