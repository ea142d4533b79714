#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "prag/adapters.hpp"
#include "prag/model.hpp"
#include "prag/trainer.hpp"

namespace prag::cli {

struct PathsConfig {
  std::string corpus = "corpus.jsonl";
  std::string qa = "qa.jsonl";
  std::string pretrain_text = "pretrain.txt";
  std::string base = "base.bin";
  std::string index = "index.json";
  std::string root = "store";  // PRAG_ROOT overrides
  std::string reports = "reports";
};

struct PretrainConfig {
  int steps = 4000;
  int batch = 8;
  int seq_len = 256;
  double learning_rate = 1e-3;
  int warmup_steps = 100;
};

struct AugmentConfig {
  int rewrites = 1;   // n
  int questions = 3;  // m
  std::string kind = "rule";  // rule | llm
  std::string endpoint;
  std::string model;
  int max_in_flight = 4;
};

struct RetrievalConfig {
  double k1 = 1.2;
  double b = 0.75;
  int k = 3;
};

struct RunConfig {
  PathsConfig paths;
  ModelConfig model;
  PretrainConfig pretrain;
  AdapterConfig adapter;
  TrainHyper train;
  AugmentConfig augment;
  RetrievalConfig retrieval;
  std::uint64_t seed = 0;

  // Values in `j` replace those of `base`. Unknown keys throw InvalidArgument.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  nlohmann::json to_json() const;
  void validate() const;
};

}  // namespace prag::cli
