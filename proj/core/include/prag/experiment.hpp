#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "prag/adapters.hpp"
#include "prag/augment.hpp"
#include "prag/model.hpp"
#include "prag/trainer.hpp"

namespace prag {

// Pretraining text for the desk base model: blank-line separated
// paragraphs holding each document, a rewrite of it, closed-book QA for
// every fact under every question template, and one passage-grounded QA,
// all in the answering prompt format.
std::string gen_pretraining_text(const SyntheticCorpus& world, std::uint64_t seed);

// Loads `cache_dir`/base-<key>.bin when present, otherwise pretrains and
// writes it. The key hashes the text, config and options.
ModelParams load_or_pretrain(const std::filesystem::path& cache_dir, std::string_view text,
                             const ModelConfig& config, const PretrainOptions& options,
                             std::ostream* log = nullptr);

// Synthetic QA pairs (training templates) from a world of their own.
std::vector<QAPair> gen_warmup_pairs(int count, std::uint64_t seed,
                                     const std::set<std::string>& exclude_words);

struct InjectionConfig {
  int rewrites = 1;   // n
  int questions = 3;  // m
  AdapterConfig adapter;
  TrainHyper hyper;
  std::uint64_t seed = 0;
};

struct DocOutcome {
  DocId doc_id;
  double closed_book_f1 = 0.0;
  double parametric_f1 = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<std::string> closed_book_answers;
  std::vector<std::string> parametric_answers;
};

struct InjectionReport {
  std::vector<DocOutcome> docs;
  std::vector<LowRankAdapter> adapters;
  double mean_closed_book_f1 = 0.0;
  double mean_parametric_f1 = 0.0;
  double improved_fraction = 0.0;  // docs with parametric F1 above closed-book F1
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

// Parameterizes every document of `world` with rule-based augmentation and
// evaluates its held-out questions closed-book and with its own adapter
// (k = 1, oracle retrieval). `init` replaces the random adapter init when
// given (warm-up); its factors are copied for every document.
InjectionReport run_injection(const ModelParams& base, const SyntheticCorpus& world,
                              const InjectionConfig& config,
                              const LowRankAdapter* init = nullptr,
                              const std::function<void(std::size_t, const DocOutcome&)>& progress = {});

}  // namespace prag
