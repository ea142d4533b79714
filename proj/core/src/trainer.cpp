#include "prag/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "prag/optim.hpp"
#include "prag/rng.hpp"

namespace prag {
namespace {

void append(std::vector<TokenId>& out, std::string_view s) {
  for (unsigned char c : s) out.push_back(static_cast<TokenId>(c));
}

TrainingSequence with_mask(std::vector<TokenId> tokens) {
  TrainingSequence seq;
  seq.mask.assign(tokens.size(), 1);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == text::kBos || tokens[i] == text::kPad) seq.mask[i] = 0;
  }
  seq.tokens = std::move(tokens);
  return seq;
}

template <typename T>
std::vector<LowRankFactors<T>> zero_like(const std::vector<LowRankFactors<T>>& layers) {
  std::vector<LowRankFactors<T>> out(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out[i].a_up = Mat<T>::Zero(layers[i].a_up.rows(), layers[i].a_up.cols());
    out[i].b_up = Mat<T>::Zero(layers[i].b_up.rows(), layers[i].b_up.cols());
    out[i].a_down = Mat<T>::Zero(layers[i].a_down.rows(), layers[i].a_down.cols());
    out[i].b_down = Mat<T>::Zero(layers[i].b_down.rows(), layers[i].b_down.cols());
  }
  return out;
}

template <typename T>
std::vector<ParamSlot<T>> factor_slots(std::vector<LowRankFactors<T>>& values,
                                       std::vector<LowRankFactors<T>>& grads) {
  std::vector<ParamSlot<T>> slots;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto add = [&](Mat<T>& v, Mat<T>& g) {
      slots.push_back(ParamSlot<T>{v.data(), g.data(), static_cast<std::size_t>(v.size())});
    };
    add(values[i].a_up, grads[i].a_up);
    add(values[i].b_up, grads[i].b_up);
    add(values[i].a_down, grads[i].a_down);
    add(values[i].b_down, grads[i].b_down);
  }
  return slots;
}

template <typename F>
auto& factor_ref(F& f, FactorKind kind) {
  switch (kind) {
    case FactorKind::kAUp: return f.a_up;
    case FactorKind::kBUp: return f.b_up;
    case FactorKind::kADown: return f.a_down;
    case FactorKind::kBDown: return f.b_down;
  }
  return f.a_up;
}

double mean_loss(const ModelParams& base, const LowRankDelta<float>& delta,
                 std::span<const TrainingSequence> sequences) {
  double total = 0.0;
  for (const auto& seq : sequences) total += sequence_loss<float>(base, delta, seq);
  return total / static_cast<double>(sequences.size());
}

}  // namespace

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdamW ? "adamw" : "sgd";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adamw") return OptimizerKind::kAdamW;
  if (name == "sgd") return OptimizerKind::kSgd;
  fail(ErrorCode::kInvalidArgument, "unknown optimizer '" + std::string(name) + "'");
}

void TrainHyper::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::kInvalidArgument, "learning_rate must be finite and >= 0");
  }
  if (epochs < 1) fail(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (dropout != 0.0) fail(ErrorCode::kInvalidArgument, "dropout is not supported; it must be 0");
  if (!(grad_clip_norm >= 0.0)) fail(ErrorCode::kInvalidArgument, "grad_clip_norm must be >= 0");
}

std::size_t TrainingSequence::loss_positions() const {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(),
                                                [](std::uint8_t m) { return m != 0; }));
}

TrainingSequence build_sequence(std::string_view document, std::string_view question,
                                std::string_view answer, int max_seq_len) {
  const std::size_t fixed = question.size() + answer.size() + 4;
  const auto limit = static_cast<std::size_t>(std::max(max_seq_len, 0));
  if (fixed > limit) {
    fail(ErrorCode::kOverlong, "question and answer need " + std::to_string(fixed) +
                                   " tokens, limit is " + std::to_string(limit));
  }
  const std::size_t doc_keep = std::min(document.size(), limit - fixed);
  std::vector<TokenId> tokens;
  tokens.reserve(fixed + doc_keep);
  tokens.push_back(text::kBos);
  append(tokens, document.substr(0, doc_keep));
  tokens.push_back(text::kSep);
  append(tokens, question);
  tokens.push_back(text::kSep);
  append(tokens, answer);
  tokens.push_back(text::kEos);
  return with_mask(std::move(tokens));
}

TrainingSequence build_qa_sequence(std::string_view question, std::string_view answer,
                                   int max_seq_len) {
  const std::size_t length = question.size() + answer.size() + 3;
  if (length > static_cast<std::size_t>(std::max(max_seq_len, 0))) {
    fail(ErrorCode::kOverlong, "QA sequence of " + std::to_string(length) + " tokens exceeds " +
                                   std::to_string(max_seq_len));
  }
  std::vector<TokenId> tokens;
  tokens.reserve(length);
  tokens.push_back(text::kBos);
  append(tokens, question);
  tokens.push_back(text::kSep);
  append(tokens, answer);
  tokens.push_back(text::kEos);
  return with_mask(std::move(tokens));
}

std::vector<TrainingSequence> pad_batch(std::span<const TrainingSequence> batch) {
  std::size_t longest = 0;
  for (const auto& s : batch) longest = std::max(longest, s.tokens.size());
  std::vector<TrainingSequence> out(batch.begin(), batch.end());
  for (auto& s : out) {
    s.tokens.resize(longest, text::kPad);
    s.mask.resize(longest, 0);
  }
  return out;
}

template <typename T>
double sequence_loss(const BasicModelParams<T>& base, const LowRankDelta<T>& delta,
                     const TrainingSequence& seq, std::vector<LowRankFactors<T>>* grads) {
  if (seq.tokens.size() < 2) fail(ErrorCode::kAllMasked, "sequence has no target positions");
  const std::span<const TokenId> all(seq.tokens);
  const auto inputs = all.first(all.size() - 1);
  const auto targets = all.subspan(1);
  const std::span<const std::uint8_t> mask = std::span<const std::uint8_t>(seq.mask).subspan(1);
  const DeltaView<T> view{nullptr, &delta};
  if (!grads) {
    const Mat<T> logits = forward_logits<T>(base, view, inputs);
    return lm_loss<T>(logits, targets, mask);
  }
  ForwardCache<T> cache;
  const Mat<T> logits = forward_logits<T>(base, view, inputs, &cache);
  Mat<T> dlogits;
  const double loss = lm_loss<T>(logits, targets, mask, &dlogits);
  backward<T>(base, view, cache, dlogits, nullptr, grads);
  return loss;
}

template double sequence_loss<float>(const BasicModelParams<float>&, const LowRankDelta<float>&,
                                     const TrainingSequence&, std::vector<LowRankFactors<float>>*);
template double sequence_loss<double>(const BasicModelParams<double>&,
                                      const LowRankDelta<double>&, const TrainingSequence&,
                                      std::vector<LowRankFactors<double>>*);

TrainResult train_on_sequences(const ModelParams& base, std::span<const TrainingSequence> sequences,
                               const LowRankAdapter& init, const TrainHyper& hyper) {
  hyper.validate();
  if (init.model_fingerprint != base.fingerprint) {
    fail(ErrorCode::kFingerprintMismatch, "adapter built for model " +
                                              to_hex(init.model_fingerprint) + ", base is " +
                                              to_hex(base.fingerprint));
  }
  if (init.layers.size() != base.layers.size()) {
    fail(ErrorCode::kShapeMismatch, "adapter layer count differs from model");
  }
  if (sequences.empty()) fail(ErrorCode::kEmptyList, "no training sequences");

  const auto started = std::chrono::steady_clock::now();
  LowRankDelta<float> delta = init.as_delta();
  auto grads = zero_like(delta.layers);
  const auto slots = factor_slots(delta.layers, grads);
  AdamW<float> adam(AdamW<float>::Options{hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay});

  TrainReport report;
  report.initial_loss = mean_loss(base, delta, sequences);

  std::vector<std::size_t> order(sequences.size());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(hyper.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (const std::size_t idx : order) {
      const TrainingSequence& seq = sequences[idx];
      for (auto& g : grads) {
        g.a_up.setZero();
        g.b_up.setZero();
        g.a_down.setZero();
        g.b_down.setZero();
      }
      const double loss = sequence_loss<float>(base, delta, seq, &grads);
      if (!std::isfinite(loss)) {
        fail(ErrorCode::kNonFiniteLoss, "loss is not finite at step " +
                                            std::to_string(report.steps) + " (epoch " +
                                            std::to_string(epoch) + ")");
      }
      const double norm = clip_global_norm(slots, hyper.grad_clip_norm);
      if (hyper.grad_clip_norm > 0.0 && norm > hyper.grad_clip_norm) ++report.clipped_steps;
      if (hyper.optimizer == OptimizerKind::kAdamW) {
        adam.step(slots, hyper.learning_rate);
      } else {
        sgd_step(slots, hyper.learning_rate);
      }
      epoch_total += loss;
      report.tokens += seq.tokens.size() -
                       static_cast<std::size_t>(std::count(seq.tokens.begin(), seq.tokens.end(),
                                                           text::kPad));
      ++report.steps;
    }
    report.epoch_mean_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  report.final_loss = mean_loss(base, delta, sequences);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  TrainResult result{init, report};
  result.adapter.layers = std::move(delta.layers);
  return result;
}

TrainResult train_adapter(const ModelParams& base, const AugmentedDataset& dataset,
                          const LowRankAdapter& init, const TrainHyper& hyper) {
  if (init.model_fingerprint != base.fingerprint) {
    fail(ErrorCode::kFingerprintMismatch, "adapter built for model " +
                                              to_hex(init.model_fingerprint) + ", base is " +
                                              to_hex(base.fingerprint));
  }
  dataset.validate();
  std::vector<TrainingSequence> sequences;
  sequences.reserve(dataset.triple_count());
  for (const auto& t : dataset.triples()) {
    sequences.push_back(build_sequence(t.document, t.question, t.answer, base.config.max_seq_len));
  }
  TrainResult result = train_on_sequences(base, sequences, init, hyper);
  result.adapter.doc_id = dataset.doc_id;
  return result;
}

LowRankAdapter warmup_init(const ModelParams& base, std::span<const QAPair> qa_pairs,
                           const TrainHyper& hyper, const AdapterConfig& config) {
  if (qa_pairs.empty()) fail(ErrorCode::kEmptyList, "warm-up needs at least one QA pair");
  std::vector<TrainingSequence> sequences;
  sequences.reserve(qa_pairs.size());
  for (const auto& qa : qa_pairs) {
    sequences.push_back(build_qa_sequence(qa.question, qa.answer, base.config.max_seq_len));
  }
  const LowRankAdapter init = new_random(config, base, DocId{}, derive_seed(hyper.seed, 1000));
  return train_on_sequences(base, sequences, init, hyper).adapter;
}

double central_difference(const std::function<double(double)>& f, double w, double eps) {
  return (f(w + eps) - f(w - eps)) / (2.0 * eps);
}

double& factor_element(std::vector<LowRankFactors<double>>& layers, const AdapterCoordinate& c) {
  return factor_ref(layers.at(c.layer), c.factor).data()[c.index];
}

double factor_element(const std::vector<LowRankFactors<double>>& layers,
                      const AdapterCoordinate& c) {
  return factor_ref(layers.at(c.layer), c.factor).data()[c.index];
}

std::vector<AdapterCoordinate> sample_coordinates(const LowRankDelta<double>& delta,
                                                  std::size_t count, std::uint64_t seed) {
  std::vector<AdapterCoordinate> all;
  for (std::size_t layer = 0; layer < delta.layers.size(); ++layer) {
    const auto& f = delta.layers[layer];
    for (FactorKind kind : {FactorKind::kAUp, FactorKind::kBUp, FactorKind::kADown,
                            FactorKind::kBDown}) {
      const Eigen::Index size = factor_ref(f, kind).size();
      for (Eigen::Index i = 0; i < size; ++i) all.push_back({layer, kind, i});
    }
  }
  if (count >= all.size()) return all;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(all.size() - i));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  return all;
}

std::vector<double> finite_diff_grad(const BasicModelParams<double>& base,
                                     const LowRankDelta<double>& delta, const TrainingSequence& seq,
                                     std::span<const AdapterCoordinate> coords, double eps) {
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidArgument, "epsilon must be > 0");
  LowRankDelta<double> probe = delta;
  std::vector<double> out;
  out.reserve(coords.size());
  for (const auto& c : coords) {
    double& w = factor_element(probe.layers, c);
    const double original = w;
    out.push_back(central_difference(
        [&](double value) {
          w = value;
          return sequence_loss<double>(base, probe, seq);
        },
        original, eps));
    w = original;
  }
  return out;
}

}  // namespace prag
