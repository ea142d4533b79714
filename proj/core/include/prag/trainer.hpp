#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "prag/adapters.hpp"
#include "prag/augment.hpp"
#include "prag/model.hpp"

namespace prag {

enum class OptimizerKind : std::uint8_t { kAdamW, kSgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainHyper {
  double learning_rate = 3e-4;
  int epochs = 1;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double dropout = 0.0;  // must stay 0
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;

  // Throws InvalidArgument when lr < 0, epochs < 1 or dropout != 0.
  void validate() const;
};

struct TrainReport {
  std::vector<double> epoch_mean_loss;  // running mean over each epoch's steps
  double initial_loss = 0.0;            // mean loss of the init adapter over the dataset
  double final_loss = 0.0;              // mean loss of the trained adapter over the dataset
  std::size_t tokens = 0;               // sequence lengths summed over all steps
  std::size_t steps = 0;
  std::size_t clipped_steps = 0;
  double seconds = 0.0;
};

struct TrainingSequence {
  std::vector<TokenId> tokens;
  LossMask mask;  // one flag per token; false at BOS and PAD

  std::size_t loss_positions() const;
};

// [BOS] d [SEP] q [SEP] a [EOS]. The document is cut from the end when the
// sequence would exceed max_seq_len; q and a are never cut. Throws Overlong.
TrainingSequence build_sequence(std::string_view document, std::string_view question,
                                std::string_view answer, int max_seq_len);

// [BOS] q [SEP] a [EOS], used for warm-up training. Throws Overlong.
TrainingSequence build_qa_sequence(std::string_view question, std::string_view answer,
                                   int max_seq_len);

// Right-pads sequences with PAD (masked) to a common length.
std::vector<TrainingSequence> pad_batch(std::span<const TrainingSequence> batch);

// Mean next-token loss of one sequence. Adapter factor gradients are
// accumulated into `grads` when given.
template <typename T>
double sequence_loss(const BasicModelParams<T>& base, const LowRankDelta<T>& delta,
                     const TrainingSequence& seq, std::vector<LowRankFactors<T>>* grads = nullptr);

struct TrainResult {
  LowRankAdapter adapter;
  TrainReport report;
};

// Optimizes the adapter factors on the given sequences, batch size 1, in a
// seeded shuffled order per epoch. The base is read only.
TrainResult train_on_sequences(const ModelParams& base, std::span<const TrainingSequence> sequences,
                               const LowRankAdapter& init, const TrainHyper& hyper);

// Trains on every (rewrite, question, answer) triple of the dataset.
// Throws FingerprintMismatch, Overlong, NonFiniteLoss.
TrainResult train_adapter(const ModelParams& base, const AugmentedDataset& dataset,
                          const LowRankAdapter& init, const TrainHyper& hyper);

// Fresh random adapter trained on QA-only sequences; the result is the
// starting point for per-document training. Throws EmptyList.
LowRankAdapter warmup_init(const ModelParams& base, std::span<const QAPair> qa_pairs,
                           const TrainHyper& hyper, const AdapterConfig& config);

// (f(w + eps) - f(w - eps)) / (2 eps).
double central_difference(const std::function<double(double)>& f, double w, double eps);

enum class FactorKind : std::uint8_t { kAUp, kBUp, kADown, kBDown };

struct AdapterCoordinate {
  std::size_t layer;
  FactorKind factor;
  Eigen::Index index;  // flat row-major index into the factor
};

double& factor_element(std::vector<LowRankFactors<double>>& layers, const AdapterCoordinate& c);
double factor_element(const std::vector<LowRankFactors<double>>& layers,
                      const AdapterCoordinate& c);

// Up to `count` distinct coordinates drawn uniformly; every coordinate when
// count covers the whole adapter.
std::vector<AdapterCoordinate> sample_coordinates(const LowRankDelta<double>& delta,
                                                  std::size_t count, std::uint64_t seed);

// Numeric gradient of sequence_loss with respect to the given adapter
// coordinates, evaluated in fp64.
std::vector<double> finite_diff_grad(const BasicModelParams<double>& base,
                                     const LowRankDelta<double>& delta, const TrainingSequence& seq,
                                     std::span<const AdapterCoordinate> coords, double eps);

}  // namespace prag
