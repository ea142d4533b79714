#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "prag/adapters.hpp"
#include "prag/augment.hpp"
#include "prag/eval.hpp"
#include "prag/experiment.hpp"
#include "prag/pipeline.hpp"
#include "prag/retriever.hpp"
#include "prag/rng.hpp"
#include "prag/store.hpp"
#include "prag/trainer.hpp"
#include "run_config.hpp"

namespace prag::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_stop{false};

void echo(const RunConfig& cfg, std::string_view command, std::ostream& err) {
  err << "prag " << command << " config: " << cfg.to_json().dump() << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

DocId parse_doc_id(const std::string& s) {
  std::uint64_t v = 0;
  if (!parse_hex64(s, v)) fail(ErrorCode::kInvalidArgument, "not a 16-digit hex doc id: " + s);
  return DocId{v};
}

InvertedIndex load_or_build_index(const RunConfig& cfg, const Corpus& corpus) {
  if (fs::exists(cfg.paths.index)) return InvertedIndex::load(cfg.paths.index);
  return InvertedIndex::build(corpus, Bm25Params{cfg.retrieval.k1, cfg.retrieval.b});
}

AugmenterEndpoint endpoint_of(const RunConfig& cfg) {
  AugmenterEndpoint e;
  e.base_url = cfg.augment.endpoint;
  e.model = cfg.augment.model;
  return e;
}

// ---- subcommands ----

int cmd_gen_corpus(const RunConfig& cfg, int docs, int triples, int pretrain_docs,
                   std::ostream& out) {
  const SyntheticCorpus world = gen_synthetic_corpus(docs, triples, cfg.seed);
  write_file_atomic(cfg.paths.corpus, world.corpus.to_jsonl());
  std::vector<QAItem> items;
  for (std::size_t d = 0; d < world.corpus.size(); ++d) {
    for (const auto& qa : world.heldout_qa[d]) {
      items.push_back(QAItem{qa.question, {qa.answer}, world.corpus[d].id});
    }
  }
  write_file_atomic(cfg.paths.qa, qa_to_jsonl(items));
  out << "wrote " << world.corpus.size() << " documents to " << cfg.paths.corpus << " and "
      << items.size() << " questions to " << cfg.paths.qa << "\n";
  if (pretrain_docs > 0) {
    SyntheticOptions opts;
    opts.exclude_words = world.entity_words();
    const SyntheticCorpus pre =
        gen_synthetic_corpus(pretrain_docs, triples, derive_seed(cfg.seed, 1), opts);
    const std::string text = gen_pretraining_text(pre, derive_seed(cfg.seed, 2));
    write_file_atomic(cfg.paths.pretrain_text, text);
    out << "wrote " << text.size() << " bytes of pretraining text (" << pretrain_docs
        << " disjoint documents) to " << cfg.paths.pretrain_text << "\n";
  }
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& out) {
  const std::string text = read_file(cfg.paths.pretrain_text);
  PretrainOptions o;
  o.steps = cfg.pretrain.steps;
  o.batch = cfg.pretrain.batch;
  o.seq_len = cfg.pretrain.seq_len;
  o.learning_rate = cfg.pretrain.learning_rate;
  o.warmup_steps = cfg.pretrain.warmup_steps;
  o.seed = cfg.seed;
  o.on_step = [&](int step, double loss) {
    if ((step + 1) % 100 == 0 || step == 0) out << "step " << step + 1 << " loss " << loss << "\n";
  };
  const ModelParams params = pretrain_base(text, cfg.model, o);
  write_file_atomic(cfg.paths.base, serialize_params(params));
  out << "base model " << to_hex(params.fingerprint) << " (" << params.parameter_count()
      << " parameters) written to " << cfg.paths.base << "\n";
  return 0;
}

int cmd_index(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = Corpus::load_jsonl(cfg.paths.corpus);
  const InvertedIndex index =
      InvertedIndex::build(corpus, Bm25Params{cfg.retrieval.k1, cfg.retrieval.b});
  index.save(cfg.paths.index);
  out << "indexed " << index.doc_count() << " documents, " << index.all_postings().size()
      << " terms -> " << cfg.paths.index << "\n";
  return 0;
}

int cmd_parameterize(const RunConfig& cfg, const std::string& doc_list, int jobs, bool overwrite,
                     const std::string& init_path, std::ostream& out) {
  const ModelParams base = load_params(cfg.paths.base);
  const Corpus corpus = Corpus::load_jsonl(cfg.paths.corpus);
  ParametricCorpus store = ParametricCorpus::open(cfg.paths.root);

  std::vector<const Document*> selected;
  if (doc_list.empty()) {
    for (const auto& d : corpus.docs()) selected.push_back(&d);
  } else {
    for (const auto& s : split_list(doc_list)) {
      const Document* d = corpus.find(parse_doc_id(s));
      if (!d) fail(ErrorCode::kNotFound, "document " + s + " is not in the corpus");
      selected.push_back(d);
    }
  }
  std::vector<const Document*> todo;
  for (const Document* d : selected) {
    if (!overwrite && store.contains(d->id, base.fingerprint)) continue;
    todo.push_back(d);
  }
  out << todo.size() << " of " << selected.size() << " documents to parameterize ("
      << selected.size() - todo.size() << " already stored)\n";

  std::optional<LowRankAdapter> init;
  if (!init_path.empty()) {
    init = load_adapter(init_path);
    if (init->model_fingerprint != base.fingerprint) {
      fail(ErrorCode::kFingerprintMismatch, "warm-up adapter was trained against another base");
    }
  }

  // LLM augmentation happens up front with bounded concurrency.
  std::vector<std::optional<AugmentedDataset>> datasets(todo.size());
  if (cfg.augment.kind == "llm" && !todo.empty()) {
    std::vector<Document> docs;
    for (const Document* d : todo) docs.push_back(*d);
    auto all = augment_llm_many(docs, cfg.augment.rewrites, cfg.augment.questions, endpoint_of(cfg),
                                cfg.augment.max_in_flight);
    for (std::size_t i = 0; i < all.size(); ++i) datasets[i] = std::move(all[i]);
  }

  std::vector<json> records(todo.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    RuleBasedAugmenter augmenter(cfg.seed);
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      try {
        const Document& doc = *todo[i];
        const AugmentedDataset dataset =
            datasets[i] ? *datasets[i]
                        : build_dataset(doc, cfg.augment.rewrites, cfg.augment.questions, augmenter);
        LowRankAdapter start = init ? *init
                                    : new_random(cfg.adapter, base, doc.id,
                                                 derive_seed(cfg.seed, doc.id.value));
        start.doc_id = doc.id;
        TrainHyper hyper = cfg.train;
        hyper.seed = derive_seed(cfg.train.seed, doc.id.value);
        const TrainResult r = train_adapter(base, dataset, start, hyper);
        store.put_dataset(dataset);
        const ManifestEntry e = store.put(r.adapter, overwrite);
        records[i] = {{"doc_id", to_hex(doc.id)},
                      {"final_loss", r.report.final_loss},
                      {"tokens", r.report.tokens},
                      {"seconds", r.report.seconds},
                      {"adapter_path", e.adapter_path}};
        std::lock_guard lock(log_mu);
        out << to_hex(doc.id) << " loss " << r.report.initial_loss << " -> " << r.report.final_loss
            << " (" << r.report.tokens << " tokens, " << r.report.seconds << " s)\n";
      } catch (...) {
        std::lock_guard lock(log_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(todo.size());
      }
    }
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(todo.size())));
  std::vector<std::thread> threads;
  for (int t = 0; t < workers; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  std::string lines;
  for (const auto& r : records) {
    if (!r.is_null()) lines += r.dump() + "\n";
  }
  if (!lines.empty()) {
    const fs::path manifest = fs::path(cfg.paths.root) / "training.jsonl";
    std::string existing = fs::exists(manifest) ? read_file(manifest) : "";
    write_file_atomic(manifest, existing + lines);
  }
  if (first_error) std::rethrow_exception(first_error);
  out << "stored " << store.size() << " adapters in " << cfg.paths.root << "\n";
  return 0;
}

int cmd_warmup(const RunConfig& cfg, int pairs, const std::string& out_path, std::ostream& out) {
  const ModelParams base = load_params(cfg.paths.base);
  std::set<std::string> exclude;
  if (fs::exists(cfg.paths.corpus)) {
    // Keep warm-up names disjoint from the evaluation corpus.
    for (const auto& d : Corpus::load_jsonl(cfg.paths.corpus).docs()) {
      for (const auto& f : extract_facts(d.text)) {
        for (const std::string* e : {&f.subject, &f.object}) {
          std::istringstream in(*e);
          std::string w;
          while (in >> w) exclude.insert(w);
        }
      }
    }
  }
  const auto qa = gen_warmup_pairs(pairs, derive_seed(cfg.seed, 3), exclude);
  TrainHyper hyper = cfg.train;
  hyper.seed = derive_seed(cfg.train.seed, 3);
  const LowRankAdapter adapter = warmup_init(base, qa, hyper, cfg.adapter);
  save_adapter(adapter, out_path);
  out << "warm-up adapter from " << qa.size() << " QA pairs written to " << out_path << "\n";
  return 0;
}

struct Loaded {
  ModelParams base;
  Corpus corpus;
  InvertedIndex index;
  std::optional<ParametricCorpus> store;
};

std::unique_ptr<Loaded> load_components(const RunConfig& cfg, bool need_store) {
  ModelParams base = load_params(cfg.paths.base);
  Corpus corpus = Corpus::load_jsonl(cfg.paths.corpus);
  InvertedIndex index = load_or_build_index(cfg, corpus);
  auto l = std::make_unique<Loaded>(Loaded{std::move(base), std::move(corpus), std::move(index), std::nullopt});
  if (need_store || fs::exists(cfg.paths.root)) l->store.emplace(ParametricCorpus::open(cfg.paths.root));
  return l;
}

Pipeline make_pipeline(const Loaded& l) {
  PipelineComponents c;
  c.base = &l.base;
  c.corpus = &l.corpus;
  c.index = &l.index;
  c.store = l.store ? &*l.store : nullptr;
  return Pipeline(c);
}

int cmd_query(const RunConfig& cfg, const std::string& question, const std::string& mode_name,
              std::ostream& out) {
  const Mode mode = parse_mode(mode_name);
  const auto loaded = load_components(cfg, uses_adapters(mode) || mode == Mode::kInContextAugmented);
  const Pipeline pipeline = make_pipeline(*loaded);
  out << query_result_to_json(pipeline.answer(question, mode, cfg.retrieval.k)) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& modes_list, int limit, std::ostream& out) {
  std::vector<Mode> modes;
  for (const auto& m : split_list(modes_list)) modes.push_back(parse_mode(m));
  if (modes.empty()) fail(ErrorCode::kInvalidArgument, "no modes given");
  bool need_store = false;
  for (Mode m : modes) need_store |= uses_adapters(m) || m == Mode::kInContextAugmented;
  const auto loaded = load_components(cfg, need_store);
  const Pipeline pipeline = make_pipeline(*loaded);
  auto items = load_qa_jsonl(cfg.paths.qa);
  if (limit > 0 && static_cast<std::size_t>(limit) < items.size()) items.resize(static_cast<std::size_t>(limit));
  const EvalReport report = run_benchmark(items, modes, pipeline, cfg.retrieval.k);
  fs::create_directories(cfg.paths.reports);
  const fs::path json_path = fs::path(cfg.paths.reports) / "eval.json";
  const fs::path table_path = fs::path(cfg.paths.reports) / "eval.txt";
  write_file_atomic(json_path, report.to_json());
  write_file_atomic(table_path, report.to_table());
  out << report.to_table() << "report: " << json_path.string() << "\n";
  return 0;
}

int cmd_serve(const std::string& config_path, const RunConfig& cfg, const std::string& bind) {
  ServiceConfig sc;
  if (!config_path.empty()) {
    sc = ServiceConfig::from_json(read_file(config_path));
  } else {
    sc.base_checkpoint = cfg.paths.base;
    sc.corpus = cfg.paths.corpus;
    if (fs::exists(cfg.paths.index)) sc.index = cfg.paths.index;
    sc.store_root = cfg.paths.root;
    sc.default_k = cfg.retrieval.k;
  }
  sc.apply_env_overrides();
  if (!bind.empty()) {
    const auto colon = bind.rfind(':');
    sc.bind_host = bind.substr(0, colon);
    if (colon != std::string::npos) sc.bind_port = std::stoi(bind.substr(colon + 1));
  }
  std::signal(SIGINT, [](int) { g_stop.store(true); });
  std::signal(SIGTERM, [](int) { g_stop.store(true); });
  serve(sc, &g_stop);
  return 0;
}

int cmd_cost(std::int64_t layers, std::int64_t hidden, std::int64_t ffn, std::int64_t rank,
             std::int64_t bytes, std::int64_t doc_tokens, std::int64_t q_tokens, std::int64_t docs,
             std::ostream& out) {
  const StorageEstimate s = storage_estimate(layers, hidden, ffn, rank, bytes);
  char mb[32];
  std::snprintf(mb, sizeof mb, "%.2f", static_cast<double>(s.bytes) / 1e6);
  out << "storage: " << s.param_count << " params, " << s.bytes << " bytes (" << mb
      << " MB) per document\n";
  const ComputeCost c = compute_cost_estimate(doc_tokens);
  out << "offline compute for |d|=" << doc_tokens << ": augment " << c.augmentation()
      << " (decode " << c.augment_decode << " + forward " << c.augment_forward << "), train "
      << c.training() << " (forward " << c.train_forward << " + backward " << c.train_backward
      << "), total " << c.total << " token-equivalents\n";
  const OnlineSaving o = online_saving_estimate(q_tokens, doc_tokens, docs);
  out << "online input tokens with t=" << docs << ": in-context " << o.in_context_input
      << ", parametric " << o.parametric_input << ", saving " << o.saving << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parametric retrieval-augmented generation toolkit", "prag"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override it");

  RunConfig cfg;
  if (const char* root = std::getenv("PRAG_ROOT"); root && *root) cfg.paths.root = root;
  // Config file values become the defaults that flags then override.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string_view(argv[i]) == "--config") config_path = argv[i + 1];
  }
  try {
    if (!config_path.empty()) cfg = RunConfig::from_json(json::parse(read_file(config_path)), cfg);
  } catch (const json::exception& e) {
    err << "error: config " << config_path << " is not valid JSON: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  auto paths = [&](CLI::App* sub, std::initializer_list<std::string_view> which) {
    for (auto w : which) {
      if (w == "corpus") sub->add_option("--corpus", cfg.paths.corpus, "corpus JSONL");
      if (w == "qa") sub->add_option("--qa", cfg.paths.qa, "QA JSONL");
      if (w == "text") sub->add_option("--text", cfg.paths.pretrain_text, "pretraining text");
      if (w == "base") sub->add_option("--base", cfg.paths.base, "base checkpoint");
      if (w == "index") sub->add_option("--index", cfg.paths.index, "BM25 index JSON");
      if (w == "root") sub->add_option("--root", cfg.paths.root, "parametric corpus root");
      if (w == "reports") sub->add_option("--reports", cfg.paths.reports, "report directory");
    }
  };
  auto seed_opt = [&](CLI::App* sub) { sub->add_option("--seed", cfg.seed, "root seed"); };

  int docs = 64;
  int triples = 3;
  int pretrain_docs = 0;
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic fabricated-fact corpus and QA set");
  gen->add_option("--docs", docs, "documents")->check(CLI::PositiveNumber);
  gen->add_option("--triples", triples, "facts per document")->check(CLI::PositiveNumber);
  gen->add_option("--pretrain-docs", pretrain_docs, "also write pretraining text from this many disjoint documents");
  paths(gen, {"corpus", "qa", "text"});
  seed_opt(gen);

  auto* pre = app.add_subcommand("pretrain", "train the base model on a text file");
  paths(pre, {"text", "base"});
  pre->add_option("--steps", cfg.pretrain.steps);
  pre->add_option("--batch", cfg.pretrain.batch);
  pre->add_option("--seq-len", cfg.pretrain.seq_len);
  pre->add_option("--lr", cfg.pretrain.learning_rate);
  pre->add_option("--warmup-steps", cfg.pretrain.warmup_steps);
  pre->add_option("--layers", cfg.model.n_layers);
  pre->add_option("--hidden", cfg.model.hidden);
  pre->add_option("--ffn", cfg.model.ffn);
  pre->add_option("--heads", cfg.model.n_heads);
  pre->add_option("--max-seq", cfg.model.max_seq_len);
  seed_opt(pre);

  auto* idx = app.add_subcommand("index", "build the BM25 index");
  paths(idx, {"corpus", "index"});
  idx->add_option("--k1", cfg.retrieval.k1);
  idx->add_option("--b", cfg.retrieval.b);

  std::string doc_list;
  int jobs = 1;
  bool overwrite = false;
  std::string init_path;
  std::string scaling;
  std::string optimizer;
  auto* par = app.add_subcommand("parameterize", "augment documents and train their adapters");
  paths(par, {"corpus", "base", "root"});
  par->add_option("--docs", doc_list, "comma-separated doc ids (default: all)");
  par->add_option("--jobs", jobs, "parallel training jobs")->check(CLI::PositiveNumber);
  par->add_flag("--overwrite", overwrite, "retrain documents that already have an adapter");
  par->add_option("--init", init_path, "warm-up adapter used as the initialization");
  par->add_option("--rewrites", cfg.augment.rewrites, "n");
  par->add_option("--questions", cfg.augment.questions, "m");
  par->add_option("--augmenter", cfg.augment.kind, "rule or llm");
  par->add_option("--endpoint", cfg.augment.endpoint, "chat-completions base URL");
  par->add_option("--model", cfg.augment.model, "augmenter model name");
  par->add_option("--max-in-flight", cfg.augment.max_in_flight);
  par->add_option("--rank", cfg.adapter.rank);
  par->add_option("--alpha", cfg.adapter.alpha);
  par->add_option("--scaling", scaling, "alpha_over_r or alpha_plain");
  par->add_option("--lr", cfg.train.learning_rate);
  par->add_option("--epochs", cfg.train.epochs);
  par->add_option("--optimizer", optimizer, "adamw or sgd");
  par->add_option("--train-seed", cfg.train.seed);
  seed_opt(par);

  int pairs = 600;
  std::string warm_out = "warmup.pra";
  auto* warm = app.add_subcommand("warmup", "train the warm-up initialization adapter");
  paths(warm, {"base", "corpus"});
  warm->add_option("--pairs", pairs)->check(CLI::PositiveNumber);
  warm->add_option("--out", warm_out);
  warm->add_option("--rank", cfg.adapter.rank);
  warm->add_option("--alpha", cfg.adapter.alpha);
  warm->add_option("--lr", cfg.train.learning_rate);
  warm->add_option("--epochs", cfg.train.epochs);
  seed_opt(warm);

  std::string question;
  std::string mode_name = "parametric";
  auto* qry = app.add_subcommand("query", "answer one question");
  paths(qry, {"base", "corpus", "index", "root"});
  qry->add_option("question", question)->required();
  qry->add_option("--mode", mode_name);
  qry->add_option("--k", cfg.retrieval.k);

  std::string service_config;
  std::string bind;
  auto* srv = app.add_subcommand("serve", "run the HTTP query service");
  paths(srv, {"base", "corpus", "index", "root"});
  srv->add_option("--service-config", service_config, "service JSON config");
  srv->add_option("--bind", bind, "host:port");
  srv->add_option("--k", cfg.retrieval.k);

  std::string modes_list = "closed_book,in_context,in_context_augmented,parametric,combined";
  int limit = 0;
  auto* ev = app.add_subcommand("eval", "benchmark QA items across modes");
  paths(ev, {"base", "corpus", "index", "root", "qa", "reports"});
  ev->add_option("--modes", modes_list);
  ev->add_option("--k", cfg.retrieval.k);
  ev->add_option("--limit", limit, "evaluate only the first N items");

  std::int64_t layers = 32, hidden = 4096, ffn = 14336, rank = 2, bytes = 2;
  std::int64_t doc_tokens = 100, q_tokens = 100, t_docs = 6;
  auto* cost = app.add_subcommand("cost", "storage and compute estimates");
  cost->add_option("--layers", layers);
  cost->add_option("--hidden", hidden);
  cost->add_option("--ffn", ffn);
  cost->add_option("--rank", rank);
  cost->add_option("--bytes", bytes);
  cost->add_option("--doc-tokens", doc_tokens);
  cost->add_option("--q-tokens", q_tokens);
  cost->add_option("--docs", t_docs, "retrieved documents t");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (!scaling.empty()) cfg.adapter.scaling = parse_scaling_mode(scaling);
    if (!optimizer.empty()) cfg.train.optimizer = parse_optimizer(optimizer);
    if (!cost->parsed()) cfg.validate();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    echo(cfg, sub->get_name(), err);
    if (sub == gen) return cmd_gen_corpus(cfg, docs, triples, pretrain_docs, out);
    if (sub == pre) return cmd_pretrain(cfg, out);
    if (sub == idx) return cmd_index(cfg, out);
    if (sub == par) return cmd_parameterize(cfg, doc_list, jobs, overwrite, init_path, out);
    if (sub == warm) return cmd_warmup(cfg, pairs, warm_out, out);
    if (sub == qry) return cmd_query(cfg, question, mode_name, out);
    if (sub == srv) return cmd_serve(service_config, cfg, bind);
    if (sub == ev) return cmd_eval(cfg, modes_list, limit, out);
    if (sub == cost) {
      return cmd_cost(layers, hidden, ffn, rank, bytes, doc_tokens, q_tokens, t_docs, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace prag::cli
