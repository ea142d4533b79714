#include "prag/experiment.hpp"

#include <chrono>
#include <sstream>

#include "prag/eval.hpp"
#include "prag/pipeline.hpp"
#include "prag/rng.hpp"
#include "prag/store.hpp"

namespace prag {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string qa_paragraph(const QAPair& qa) {
  return "Question: " + qa.question + "\nAnswer: " + qa.answer;
}

std::string answer_with(const EffectiveWeights& weights, const std::string& question,
                        int budget) {
  const auto prompt =
      build_prompt(Mode::kParametric, question, {}, weights.base().config.max_seq_len, budget);
  const auto out = generate_greedy(weights, prompt, budget);
  return decode_answer(std::span<const TokenId>(out).subspan(prompt.size()));
}

}  // namespace

std::string gen_pretraining_text(const SyntheticCorpus& world, std::uint64_t seed) {
  std::vector<std::string> paragraphs;
  Rng rng(seed);
  for (std::size_t d = 0; d < world.corpus.size(); ++d) {
    const Document& doc = world.corpus[d];
    paragraphs.push_back(doc.text);
    for (auto& r : rewrite_rule_based(doc, 1, derive_seed(seed, d))) paragraphs.push_back(r);
    std::vector<QAPair> doc_qa;
    for (const auto& fact : world.facts[d]) {
      const auto& t = templates_for(fact.relation);
      for (const auto q : t.train_questions) doc_qa.push_back(render_question(fact, q));
      for (const auto q : t.heldout_questions) doc_qa.push_back(render_question(fact, q));
    }
    for (const auto& qa : doc_qa) paragraphs.push_back(qa_paragraph(qa));
    const QAPair& grounded = doc_qa[rng.below(doc_qa.size())];
    paragraphs.push_back(render_passage(1, doc.text) + qa_paragraph(grounded));
  }
  std::string text;
  for (const auto& p : paragraphs) {
    if (!text.empty()) text += "\n\n";
    text += p;
  }
  return text;
}

ModelParams load_or_pretrain(const std::filesystem::path& cache_dir, std::string_view text,
                             const ModelConfig& config, const PretrainOptions& options,
                             std::ostream* log) {
  Fnv1a64 h;
  h.update(text);
  for (int v : {config.n_layers, config.hidden, config.ffn, config.n_heads, config.max_seq_len,
                config.vocab, options.steps, options.seq_len, options.batch, options.warmup_steps}) {
    h.update_pod(static_cast<std::int64_t>(v));
  }
  for (double v : {options.learning_rate, options.min_lr_fraction, options.weight_decay,
                   options.grad_clip}) {
    h.update_pod(v);
  }
  h.update_pod(options.seed);
  const auto path = cache_dir / ("base-" + to_hex(h.digest()) + ".bin");
  if (std::filesystem::exists(path)) {
    if (log) *log << "loading cached base model " << path.string() << "\n";
    return load_params(path);
  }
  if (log) *log << "pretraining base model (" << options.steps << " steps) -> " << path.string() << "\n";
  PretrainOptions opts = options;
  const auto started = Clock::now();
  if (log && !opts.on_step) {
    opts.on_step = [&](int step, double loss) {
      if ((step + 1) % 100 == 0 || step == 0) {
        *log << "  step " << step + 1 << "/" << opts.steps << " loss " << loss << " ("
             << seconds_since(started) << " s)\n";
        log->flush();
      }
    };
  }
  ModelParams params = pretrain_base(text, config, opts);
  std::filesystem::create_directories(cache_dir);
  write_file_atomic(path, serialize_params(params));
  return params;
}

std::vector<QAPair> gen_warmup_pairs(int count, std::uint64_t seed,
                                     const std::set<std::string>& exclude_words) {
  if (count < 1) fail(ErrorCode::kInvalidArgument, "warm-up pair count must be >= 1");
  const int triples = 3;
  const int docs = (count + triples - 1) / triples;
  SyntheticOptions opts;
  opts.exclude_words = exclude_words;
  const SyntheticCorpus world = gen_synthetic_corpus(docs, triples, seed, opts);
  std::vector<QAPair> pairs;
  Rng rng(derive_seed(seed, 7));
  for (const auto& doc_facts : world.facts) {
    for (const auto& fact : doc_facts) {
      const auto& qs = templates_for(fact.relation).train_questions;
      pairs.push_back(render_question(fact, qs[rng.below(qs.size())]));
    }
  }
  pairs.resize(static_cast<std::size_t>(count));
  return pairs;
}

InjectionReport run_injection(const ModelParams& base, const SyntheticCorpus& world,
                              const InjectionConfig& config, const LowRankAdapter* init,
                              const std::function<void(std::size_t, const DocOutcome&)>& progress) {
  InjectionReport report;
  RuleBasedAugmenter augmenter(config.seed);
  const EffectiveWeights plain(base);
  std::size_t improved = 0;
  for (std::size_t d = 0; d < world.corpus.size(); ++d) {
    const Document& doc = world.corpus[d];
    const auto train_start = Clock::now();
    const AugmentedDataset dataset =
        build_dataset(doc, config.rewrites, config.questions, augmenter);
    LowRankAdapter start = init ? *init
                                : new_random(config.adapter, base, doc.id,
                                             derive_seed(config.seed, doc.id.value));
    start.doc_id = doc.id;
    TrainHyper hyper = config.hyper;
    hyper.seed = derive_seed(config.hyper.seed, doc.id.value);
    TrainResult trained = train_adapter(base, dataset, start, hyper);
    report.train_seconds += seconds_since(train_start);

    const auto eval_start = Clock::now();
    const LowRankAdapter& adapter = trained.adapter;
    const EffectiveWeights injected =
        apply(base, std::make_shared<const MergedDelta>(delta_of(adapter)));
    DocOutcome outcome;
    outcome.doc_id = doc.id;
    outcome.initial_loss = trained.report.initial_loss;
    outcome.final_loss = trained.report.final_loss;
    const auto& questions = world.heldout_qa[d];
    for (const auto& qa : questions) {
      const std::string closed = answer_with(plain, qa.question, kDefaultGenerationBudget);
      const std::string param = answer_with(injected, qa.question, kDefaultGenerationBudget);
      outcome.closed_book_f1 += f1(closed, qa.answer);
      outcome.parametric_f1 += f1(param, qa.answer);
      outcome.closed_book_answers.push_back(closed);
      outcome.parametric_answers.push_back(param);
    }
    outcome.closed_book_f1 /= static_cast<double>(questions.size());
    outcome.parametric_f1 /= static_cast<double>(questions.size());
    report.eval_seconds += seconds_since(eval_start);

    if (outcome.parametric_f1 > outcome.closed_book_f1) ++improved;
    report.mean_closed_book_f1 += outcome.closed_book_f1;
    report.mean_parametric_f1 += outcome.parametric_f1;
    if (progress) progress(d, outcome);
    report.docs.push_back(std::move(outcome));
    report.adapters.push_back(std::move(trained.adapter));
  }
  const double n = static_cast<double>(report.docs.size());
  if (n > 0) {
    report.mean_closed_book_f1 /= n;
    report.mean_parametric_f1 /= n;
    report.improved_fraction = static_cast<double>(improved) / n;
  }
  return report;
}

}  // namespace prag
