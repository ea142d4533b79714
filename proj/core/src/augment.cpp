#include "prag/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "prag/rng.hpp"

namespace prag {

using nlohmann::json;

namespace {

// Statement, training-question and held-out-question banks per relation.
const RelationTemplates kTemplates[kRelationCount] = {
    // capital_of: S = city, O = country
    {{"The capital of {O} is {S}.", "{S} serves as the capital of {O}.",
      "{S} is the capital city of {O}.", "{O} has {S} as its capital."},
     {"What is the capital of {O}?", "Which city is the capital of {O}?"},
     {"What city serves as the seat of government of {O}?", "{O} is governed from which city?"},
     true},
    // born_in: S = person, O = city
    {{"{S} was born in {O}.", "The birthplace of {S} is {O}.", "{O} is where {S} was born.",
      "{S} came into the world in {O}."},
     {"Where was {S} born?", "In which city was {S} born?"},
     {"What is the hometown of {S}?", "{S} was born in which city?"},
     false},
    // founded: S = person, O = organization
    {{"{S} founded {O}.", "{O} was founded by {S}.", "The founder of {O} is {S}.",
      "{S} is the founder of {O}."},
     {"Who founded {O}?", "Who is the founder of {O}?"},
     {"Which person started {O}?", "{O} was established by whom?"},
     true},
    // located_in: S = organization, O = city
    {{"{S} is located in {O}.", "{S} can be found in {O}.", "{O} is home to {S}.",
      "The headquarters of {S} are in {O}."},
     {"Where is {S} located?", "In which city is {S} located?"},
     {"Which city hosts {S}?", "{S} is based in which city?"},
     false},
    // speaks: S = country, O = language
    {{"The people of {S} speak {O}.", "{O} is the main language of {S}.",
      "In {S}, people speak {O}.", "The language spoken in {S} is {O}."},
     {"What language is spoken in {S}?", "What is the main language of {S}?"},
     {"Which tongue do the people of {S} use?", "{S} residents speak which language?"},
     false},
    // works_for: S = person, O = organization
    {{"{S} works for {O}.", "{S} is employed by {O}.", "{O} employs {S}.",
      "The employer of {S} is {O}."},
     {"Who does {S} work for?", "Who employs {S}?"},
     {"Which organization is {S} employed at?", "{S} is on the staff of which organization?"},
     false},
    // married_to: S = person, O = person
    {{"{S} is married to {O}.", "The spouse of {S} is {O}.", "{S} wed {O}.",
      "{S} took {O} as a spouse."},
     {"Who is {S} married to?", "Who is the spouse of {S}?"},
     {"Whom did {S} marry?", "Who is the partner of {S}?"},
     false},
};

enum class EntityKind { kCity, kCountry, kPerson, kOrganization, kLanguage };

struct RelationKinds {
  EntityKind subject;
  EntityKind object;
};

constexpr RelationKinds kKinds[kRelationCount] = {
    {EntityKind::kCity, EntityKind::kCountry},
    {EntityKind::kPerson, EntityKind::kCity},
    {EntityKind::kPerson, EntityKind::kOrganization},
    {EntityKind::kOrganization, EntityKind::kCity},
    {EntityKind::kCountry, EntityKind::kLanguage},
    {EntityKind::kPerson, EntityKind::kOrganization},
    {EntityKind::kPerson, EntityKind::kPerson},
};

std::string fill(std::string_view tmpl, std::string_view subject, std::string_view object) {
  std::string out;
  out.reserve(tmpl.size() + subject.size() + object.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl.compare(i, 3, "{S}") == 0) {
      out += subject;
      i += 2;
    } else if (tmpl.compare(i, 3, "{O}") == 0) {
      out += object;
      i += 2;
    } else {
      out.push_back(tmpl[i]);
    }
  }
  return out;
}

struct CompiledStatement {
  Relation relation;
  std::size_t template_index;
  std::regex pattern;
  int subject_group;
  int object_group;
};

std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\^$.|?*+()[]{})";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

const std::vector<CompiledStatement>& compiled_statements() {
  static const std::vector<CompiledStatement> table = [] {
    const std::string entity = "([A-Z][a-z]+(?: [A-Z][a-z]+)?)";
    std::vector<CompiledStatement> out;
    for (int r = 0; r < kRelationCount; ++r) {
      const auto& statements = kTemplates[r].statements;
      for (std::size_t t = 0; t < statements.size(); ++t) {
        const std::string_view tmpl = statements[t];
        std::string pattern = "^";
        int group = 0;
        int s_group = 0;
        int o_group = 0;
        std::size_t i = 0;
        while (i < tmpl.size()) {
          if (tmpl.compare(i, 3, "{S}") == 0 || tmpl.compare(i, 3, "{O}") == 0) {
            ++group;
            (tmpl[i + 1] == 'S' ? s_group : o_group) = group;
            pattern += entity;
            i += 3;
          } else {
            const std::size_t next = std::min(tmpl.find("{S}", i), tmpl.find("{O}", i));
            const std::size_t end = next == std::string_view::npos ? tmpl.size() : next;
            pattern += regex_escape(tmpl.substr(i, end - i));
            i = end;
          }
        }
        pattern += "$";
        out.push_back(CompiledStatement{static_cast<Relation>(r), t,
                                        std::regex(pattern, std::regex::ECMAScript), s_group,
                                        o_group});
      }
    }
    return out;
  }();
  return table;
}

// Splits on ". " boundaries, keeping the period with each sentence.
std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    while (start < text.size() && text[start] == ' ') ++start;
    if (start >= text.size()) break;
    std::size_t end = start;
    while (end < text.size()) {
      const char c = text[end];
      if ((c == '.' || c == '?' || c == '!') && (end + 1 == text.size() || text[end + 1] == ' ')) {
        ++end;
        break;
      }
      ++end;
    }
    out.emplace_back(text.substr(start, end - start));
    start = end;
  }
  return out;
}

struct MatchedSentence {
  FactTriple fact;
  std::size_t template_index;
};

std::optional<MatchedSentence> match_sentence(const std::string& sentence) {
  std::smatch m;
  for (const auto& cs : compiled_statements()) {
    if (std::regex_match(sentence, m, cs.pattern)) {
      return MatchedSentence{
          FactTriple{m[cs.subject_group].str(), cs.relation, m[cs.object_group].str()},
          cs.template_index};
    }
  }
  return std::nullopt;
}

std::string join_sentences(const std::vector<std::string>& sentences) {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out.push_back(' ');
    out += s;
  }
  return out;
}

constexpr std::string_view kOnsets[] = {"Zh", "Kv", "Vz", "Tl", "Xh", "Qv", "Zv", "Gv"};
constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u"};
constexpr std::string_view kMiddles[] = {"l", "r", "m", "n", "v", "th", "d", "k", "s", "b"};
constexpr std::string_view kCodas[] = {"", "n", "r", "th", "k", "s", "l"};

template <typename Array>
std::string_view pick(Rng& rng, const Array& a) {
  return a[rng.below(std::size(a))];
}

std::string entity_for(EntityKind kind, EntityLexicon& lexicon) {
  return kind == EntityKind::kPerson ? lexicon.fresh_person() : lexicon.fresh_word();
}

}  // namespace

std::vector<AugmentedDataset::Triple> AugmentedDataset::triples() const {
  std::vector<Triple> out;
  out.reserve(triple_count());
  for (std::size_t k = 0; k < rewrites.size(); ++k) {
    for (std::size_t j = 0; j < qa_pairs.size(); ++j) {
      out.push_back(Triple{k, j, rewrites[k], qa_pairs[j].question, qa_pairs[j].answer});
    }
  }
  return out;
}

void AugmentedDataset::validate() const {
  for (const auto& r : rewrites) {
    if (r.empty()) fail(ErrorCode::kInvalidArgument, "augmented dataset has an empty rewrite");
  }
  for (const auto& qa : qa_pairs) {
    if (qa.answer.empty()) fail(ErrorCode::kInvalidArgument, "augmented dataset has an empty answer");
  }
}

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::kCapitalOf: return "capital_of";
    case Relation::kBornIn: return "born_in";
    case Relation::kFounded: return "founded";
    case Relation::kLocatedIn: return "located_in";
    case Relation::kSpeaks: return "speaks";
    case Relation::kWorksFor: return "works_for";
    case Relation::kMarriedTo: return "married_to";
  }
  return "unknown";
}

Relation parse_relation(std::string_view name) {
  for (int r = 0; r < kRelationCount; ++r) {
    if (to_string(static_cast<Relation>(r)) == name) return static_cast<Relation>(r);
  }
  fail(ErrorCode::kInvalidArgument, "unknown relation '" + std::string(name) + "'");
}

const RelationTemplates& templates_for(Relation r) { return kTemplates[static_cast<int>(r)]; }

std::string render_statement(const FactTriple& fact, std::size_t template_index) {
  const auto& t = templates_for(fact.relation);
  return fill(t.statements[template_index % t.statements.size()], fact.subject, fact.object);
}

QAPair render_question(const FactTriple& fact, std::string_view question_template) {
  const auto& t = templates_for(fact.relation);
  return QAPair{fill(question_template, fact.subject, fact.object),
                t.asks_subject ? fact.subject : fact.object};
}

std::vector<FactTriple> extract_facts(std::string_view text) {
  std::vector<FactTriple> facts;
  for (const auto& sentence : split_sentences(text)) {
    if (auto m = match_sentence(sentence)) facts.push_back(std::move(m->fact));
  }
  return facts;
}

std::string EntityLexicon::fresh_word() {
  constexpr std::uint64_t kSpace =
      std::size(kOnsets) * std::size(kVowels) * std::size(kMiddles) * std::size(kVowels) *
      std::size(kCodas);
  // With one free name left a run of 50 * kSpace misses has odds about e^-50.
  for (std::uint64_t misses = 0;; ++misses) {
    if (misses > 50 * kSpace) {
      fail(ErrorCode::kInvalidArgument,
           "entity lexicon exhausted after " + std::to_string(used_.size()) + " names");
    }
    Rng rng(derive_seed(seed_, counter_++));
    std::string word;
    word += pick(rng, kOnsets);
    word += pick(rng, kVowels);
    word += pick(rng, kMiddles);
    word += pick(rng, kVowels);
    word += pick(rng, kCodas);
    if (used_.insert(word).second) return word;
  }
}

std::string EntityLexicon::fresh_person() {
  std::string first = fresh_word();
  return first + " " + fresh_word();
}

std::set<std::string> SyntheticCorpus::entity_words() const {
  std::set<std::string> words;
  for (const auto& doc_facts : facts) {
    for (const auto& f : doc_facts) {
      for (const std::string* e : {&f.subject, &f.object}) {
        std::istringstream in(*e);
        std::string w;
        while (in >> w) words.insert(w);
      }
    }
  }
  return words;
}

SyntheticCorpus gen_synthetic_corpus(int num_docs, int triples_per_doc, std::uint64_t seed,
                                     const SyntheticOptions& options) {
  if (num_docs < 1) fail(ErrorCode::kInvalidArgument, "num_docs must be >= 1");
  if (triples_per_doc < 1) fail(ErrorCode::kInvalidArgument, "triples_per_doc must be >= 1");
  SyntheticCorpus out;
  EntityLexicon lexicon(derive_seed(seed, 0));
  lexicon.exclude(options.exclude_words);
  Rng rng(derive_seed(seed, 1));
  for (int d = 0; d < num_docs; ++d) {
    std::vector<int> relations(kRelationCount);
    for (int r = 0; r < kRelationCount; ++r) relations[static_cast<std::size_t>(r)] = r;
    rng.shuffle(relations);
    std::vector<FactTriple> facts;
    std::vector<std::string> sentences;
    std::vector<QAPair> heldout;
    for (int t = 0; t < triples_per_doc; ++t) {
      const int r = relations[static_cast<std::size_t>(t % kRelationCount)];
      const auto relation = static_cast<Relation>(r);
      FactTriple fact{entity_for(kKinds[r].subject, lexicon), relation,
                      entity_for(kKinds[r].object, lexicon)};
      const auto& tmpl = templates_for(relation);
      sentences.push_back(render_statement(fact, rng.below(tmpl.statements.size())));
      heldout.push_back(
          render_question(fact, tmpl.heldout_questions[rng.below(tmpl.heldout_questions.size())]));
      facts.push_back(std::move(fact));
    }
    const std::string title = facts.front().subject;
    out.corpus.add(title, join_sentences(sentences));
    out.facts.push_back(std::move(facts));
    out.heldout_qa.push_back(std::move(heldout));
  }
  return out;
}

std::vector<std::string> rewrite_rule_based(const Document& doc, int n, std::uint64_t seed) {
  if (n < 0) fail(ErrorCode::kInvalidArgument, "rewrite count must be >= 0");
  const auto sentences = split_sentences(doc.text);
  std::vector<std::optional<MatchedSentence>> matches;
  matches.reserve(sentences.size());
  for (const auto& s : sentences) matches.push_back(match_sentence(s));

  std::vector<std::string> rewrites;
  for (int k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::vector<std::string> out;
    out.reserve(sentences.size());
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (!matches[i]) {
        out.push_back(sentences[i]);
        continue;
      }
      const auto& m = *matches[i];
      const std::size_t count = templates_for(m.fact.relation).statements.size();
      // Any template other than the one the sentence already uses.
      const std::size_t shift = 1 + static_cast<std::size_t>(rng.below(count - 1));
      out.push_back(render_statement(m.fact, (m.template_index + shift) % count));
    }
    rng.shuffle(out);
    rewrites.push_back(join_sentences(out));
  }
  return rewrites;
}

std::vector<QAPair> gen_qa_rule_based(const Document& doc, int m, std::uint64_t seed) {
  if (m < 0) fail(ErrorCode::kInvalidArgument, "QA count must be >= 0");
  auto facts = extract_facts(doc.text);
  if (facts.empty()) {
    fail(ErrorCode::kInsufficientFacts, "document " + to_hex(doc.id) + " states no known fact");
  }
  Rng rng(seed);
  rng.shuffle(facts);
  const std::size_t template_offset = static_cast<std::size_t>(rng.below(1u << 16));
  std::vector<QAPair> pairs;
  pairs.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const FactTriple& fact = facts[idx % facts.size()];
    const auto& questions = templates_for(fact.relation).train_questions;
    const std::size_t round = idx / facts.size();
    pairs.push_back(render_question(fact, questions[(template_offset + round) % questions.size()]));
  }
  return pairs;
}

// ---- LLM-backed augmentation ----

std::string rewrite_prompt(const Document& doc, int n) {
  std::ostringstream p;
  p << "Rewrite the following passage " << n
    << " times. Each rewrite must keep every fact but change the wording, style or "
       "organization. Write each rewrite on a single line that starts with \"Rewrite k:\" "
       "where k is its number.\n\nPassage: "
    << doc.text << "\n";
  return p.str();
}

std::string qa_prompt(const Document& doc, int m) {
  std::ostringstream p;
  p << "Generate " << m
    << " question-answer pairs about the facts in the following passage. Answers must be "
       "short spans taken from the passage. Use exactly this format for each pair:\n"
       "Question: <question>\nAnswer: <answer>\n\nPassage: "
    << doc.text << "\n";
  return p.str();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) lines.push_back(trim(line));
  return lines;
}

}  // namespace

std::vector<std::string> parse_rewrites(std::string_view completion, int n) {
  std::vector<std::string> out;
  for (const auto& line : lines_of(completion)) {
    if (!starts_with_ci(line, "rewrite")) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string body = trim(std::string_view(line).substr(colon + 1));
    if (!body.empty()) out.push_back(std::move(body));
  }
  if (static_cast<int>(out.size()) < n) {
    fail(ErrorCode::kMalformedResponse, "expected " + std::to_string(n) + " rewrites, parsed " +
                                            std::to_string(out.size()));
  }
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<QAPair> parse_qa_pairs(std::string_view completion, int m) {
  std::vector<QAPair> out;
  std::optional<std::string> pending;
  for (const auto& line : lines_of(completion)) {
    if (starts_with_ci(line, "question:")) {
      pending = trim(std::string_view(line).substr(9));
    } else if (starts_with_ci(line, "answer:") && pending) {
      std::string answer = trim(std::string_view(line).substr(7));
      if (!pending->empty() && !answer.empty()) {
        out.push_back(QAPair{std::move(*pending), std::move(answer)});
      }
      pending.reset();
    }
  }
  if (static_cast<int>(out.size()) < m) {
    fail(ErrorCode::kMalformedResponse, "expected " + std::to_string(m) + " QA pairs, parsed " +
                                            std::to_string(out.size()));
  }
  out.resize(static_cast<std::size_t>(m));
  return out;
}

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorCode::kInvalidArgument, "endpoint URL must include a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

// One chat completion; throws EndpointUnreachable on transport or server
// failure and MalformedResponse on an unreadable body.
std::string chat_once(const AugmenterEndpoint& endpoint, const std::string& prompt) {
  const ParsedUrl url = parse_url(endpoint.base_url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::milliseconds(
      static_cast<long long>(endpoint.timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!endpoint.token_env.empty()) {
    if (const char* token = std::getenv(endpoint.token_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const json request = {
      {"model", endpoint.model},
      {"temperature", 0},
      {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
  };
  auto res = client.Post(url.path + "/chat/completions", headers, request.dump(),
                         "application/json");
  if (!res) {
    fail(ErrorCode::kEndpointUnreachable,
         "request to " + endpoint.base_url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status >= 500 || res->status == 429) {
    fail(ErrorCode::kEndpointUnreachable, "endpoint returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    fail(ErrorCode::kMalformedResponse, "endpoint returned HTTP " + std::to_string(res->status));
  }
  try {
    const json body = json::parse(res->body);
    return body.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kMalformedResponse, std::string("unreadable completion: ") + e.what());
  }
}

template <typename Parse>
auto chat_with_retries(const AugmenterEndpoint& endpoint, const std::string& prompt, Parse parse)
    -> decltype(parse(std::string_view{})) {
  int backoff = std::max(0, endpoint.initial_backoff_ms);
  for (int attempt = 0;; ++attempt) {
    try {
      return parse(chat_once(endpoint, prompt));
    } catch (const Error& e) {
      const bool retryable = e.code() == ErrorCode::kEndpointUnreachable ||
                             e.code() == ErrorCode::kMalformedResponse;
      if (!retryable || attempt >= endpoint.max_retries) throw;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    backoff *= 2;
  }
}

}  // namespace

std::vector<std::string> LlmAugmenter::rewrite(const Document& doc, int n) {
  if (n == 0) return {};
  return chat_with_retries(endpoint_, rewrite_prompt(doc, n),
                           [n](std::string_view c) { return parse_rewrites(c, n); });
}

std::vector<QAPair> LlmAugmenter::questions(const Document& doc, int m) {
  if (m == 0) return {};
  return chat_with_retries(endpoint_, qa_prompt(doc, m),
                           [m](std::string_view c) { return parse_qa_pairs(c, m); });
}

AugmentedDataset augment_llm(const Document& doc, int n, int m, const AugmenterEndpoint& endpoint) {
  LlmAugmenter augmenter(endpoint);
  return build_dataset(doc, n, m, augmenter);
}

std::vector<AugmentedDataset> augment_llm_many(const std::vector<Document>& docs, int n, int m,
                                               const AugmenterEndpoint& endpoint,
                                               int max_in_flight) {
  std::vector<AugmentedDataset> out(docs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= docs.size()) return;
      try {
        out[i] = augment_llm(docs[i], n, m, endpoint);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const auto workers =
      static_cast<std::size_t>(std::clamp<int>(max_in_flight, 1, std::max<int>(1, static_cast<int>(docs.size()))));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

std::vector<std::string> RuleBasedAugmenter::rewrite(const Document& doc, int n) {
  return rewrite_rule_based(doc, n, derive_seed(seed_, doc.id.value));
}

std::vector<QAPair> RuleBasedAugmenter::questions(const Document& doc, int m) {
  return gen_qa_rule_based(doc, m, derive_seed(seed_ ^ 0x51ed270b7f4a7c15ULL, doc.id.value));
}

AugmentedDataset build_dataset(const Document& doc, int n, int m, Augmenter& augmenter) {
  if (n < 0 || m < 0) fail(ErrorCode::kInvalidArgument, "n and m must be >= 0");
  AugmentedDataset dataset;
  dataset.doc_id = doc.id;
  dataset.rewrites.push_back(doc.text);
  for (auto& r : augmenter.rewrite(doc, n)) dataset.rewrites.push_back(std::move(r));
  dataset.qa_pairs = augmenter.questions(doc, m);
  dataset.validate();
  return dataset;
}

std::string dataset_to_json(const AugmentedDataset& dataset) {
  json qa = json::array();
  for (const auto& p : dataset.qa_pairs) qa.push_back({{"question", p.question}, {"answer", p.answer}});
  const json j = {{"doc_id", to_hex(dataset.doc_id)}, {"rewrites", dataset.rewrites}, {"qa_pairs", qa}};
  return j.dump();
}

AugmentedDataset dataset_from_json(std::string_view json_text) {
  AugmentedDataset d;
  try {
    const json j = json::parse(json_text);
    std::uint64_t id = 0;
    if (!parse_hex64(j.at("doc_id").get<std::string>(), id)) {
      fail(ErrorCode::kInvalidArgument, "bad doc_id in augmented dataset");
    }
    d.doc_id = DocId{id};
    d.rewrites = j.at("rewrites").get<std::vector<std::string>>();
    for (const auto& p : j.at("qa_pairs")) {
      d.qa_pairs.push_back(QAPair{p.at("question").get<std::string>(), p.at("answer").get<std::string>()});
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed augmented dataset: ") + e.what());
  }
  d.validate();
  return d;
}

}  // namespace prag
