#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prag/common.hpp"
#include "prag/text.hpp"

namespace prag {

using text::TokenId;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Matrix = Mat<float>;

struct ModelConfig {
  int n_layers = 4;
  int hidden = 128;
  int ffn = 512;  // FFN intermediate width
  int n_heads = 4;
  int max_seq_len = 512;
  int vocab = text::kVocabSize;

  void validate() const;
  int head_dim() const { return hidden / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerWeights {
  RowVec<T> ln1_g, ln1_b;
  Mat<T> wq, wk, wv, wo;  // hidden x hidden
  RowVec<T> ln2_g, ln2_b;
  Mat<T> w_up;     // hidden x ffn
  RowVec<T> b_up;  // ffn
  Mat<T> w_down;   // ffn x hidden
  RowVec<T> b_down;
};

// Frozen base weights. Tensors are visited (and serialized) in the order
// of for_each_tensor.
template <typename T>
struct BasicModelParams {
  ModelConfig config;
  std::uint64_t fingerprint = 0;
  Mat<T> tok_emb;  // vocab x hidden
  Mat<T> pos_emb;  // max_seq_len x hidden
  std::vector<LayerWeights<T>> layers;
  RowVec<T> lnf_g, lnf_b;
  Mat<T> w_out;  // hidden x vocab

  // Allocates zero tensors of the configured shapes (layer norm gains = 1).
  static BasicModelParams zeros(const ModelConfig& config);

  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const;

  template <typename U>
  BasicModelParams<U> cast() const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f("tok_emb", self.tok_emb);
    f("pos_emb", self.pos_emb);
    for (auto& layer : self.layers) {
      f("ln1_g", layer.ln1_g);
      f("ln1_b", layer.ln1_b);
      f("wq", layer.wq);
      f("wk", layer.wk);
      f("wv", layer.wv);
      f("wo", layer.wo);
      f("ln2_g", layer.ln2_g);
      f("ln2_b", layer.ln2_b);
      f("w_up", layer.w_up);
      f("b_up", layer.b_up);
      f("w_down", layer.w_down);
      f("b_down", layer.b_down);
    }
    f("lnf_g", self.lnf_g);
    f("lnf_b", self.lnf_b);
    f("w_out", self.w_out);
  }
};

using ModelParams = BasicModelParams<float>;

// Hash of the architecture and the fp32 bytes of every base tensor.
std::uint64_t compute_fingerprint(const ModelParams& params);

// GPT-2 style random initialization; sets the fingerprint.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Dense additive update for one layer's FFN matrices.
template <typename T>
struct FfnDelta {
  Mat<T> up;    // hidden x ffn
  Mat<T> down;  // ffn x hidden
};

// Merged dense deltas for every layer, bound to one base model.
struct MergedDelta {
  std::uint64_t model_fingerprint = 0;
  std::vector<FfnDelta<float>> layers;
  std::vector<DocId> source_doc_ids;
};

// Low-rank factors for one layer: dW_up = s * a_up * b_up^T and
// dW_down = s * a_down * b_down^T.
template <typename T>
struct LowRankFactors {
  Mat<T> a_up;    // hidden x r
  Mat<T> b_up;    // ffn x r
  Mat<T> a_down;  // ffn x r
  Mat<T> b_down;  // hidden x r
};

template <typename T>
struct LowRankDelta {
  T scale = T(1);
  std::vector<LowRankFactors<T>> layers;
};

// What the FFN adds on top of the base weights during one evaluation.
template <typename T>
struct DeltaView {
  const std::vector<FfnDelta<T>>* dense = nullptr;
  const LowRankDelta<T>* low_rank = nullptr;
};

// Base parameters paired with an optional merged delta. The base is never
// modified; W + dW is formed during evaluation.
class EffectiveWeights {
 public:
  explicit EffectiveWeights(const ModelParams& base) : base_(&base) {}
  EffectiveWeights(const ModelParams& base, std::shared_ptr<const MergedDelta> delta);

  const ModelParams& base() const { return *base_; }
  const MergedDelta* delta() const { return delta_.get(); }
  DeltaView<float> view() const;

 private:
  const ModelParams* base_;
  std::shared_ptr<const MergedDelta> delta_;
};

// Activations retained by forward() for backward().
template <typename T>
struct ForwardCache {
  struct Layer {
    Mat<T> x_in;
    Mat<T> ln1_xhat;
    std::vector<T> ln1_rstd;
    Mat<T> a;
    Mat<T> q, k, v;
    std::vector<Mat<T>> probs;  // per head, seq x seq
    Mat<T> att;                 // concatenated head outputs
    Mat<T> x_mid;
    Mat<T> ln2_xhat;
    std::vector<T> ln2_rstd;
    Mat<T> b;
    Mat<T> u;  // pre-activation
    Mat<T> g;  // GELU output
    Mat<T> b_a_up;    // b * a_up (low-rank only)
    Mat<T> g_a_down;  // g * a_down (low-rank only)
  };
  std::vector<TokenId> tokens;
  std::vector<Layer> layers;
  Mat<T> x_final;
  Mat<T> lnf_xhat;
  std::vector<T> lnf_rstd;
  Mat<T> xf;
};

// Logits (seq x vocab) for a token sequence. Throws SeqTooLong.
template <typename T>
Mat<T> forward_logits(const BasicModelParams<T>& params, DeltaView<T> delta,
                      std::span<const TokenId> tokens, ForwardCache<T>* cache = nullptr);

// Gradients of a scalar loss given dL/dlogits. Either output may be null.
// Base gradients accumulate into `param_grads`; adapter factor gradients
// accumulate into `factor_grads` (requires delta.low_rank).
template <typename T>
void backward(const BasicModelParams<T>& params, DeltaView<T> delta,
              const ForwardCache<T>& cache, const Mat<T>& dlogits,
              BasicModelParams<T>* param_grads, std::vector<LowRankFactors<T>>* factor_grads);

Matrix forward(const EffectiveWeights& weights, std::span<const TokenId> tokens);

// One flag per target position; nonzero means the position is in the loss.
using LossMask = std::vector<std::uint8_t>;

// Mean of -log softmax(logits_t)[target_t] over positions with mask set.
// Throws AllMasked. When dlogits is given it receives dLoss/dlogits.
template <typename T>
double lm_loss(const Mat<T>& logits, std::span<const TokenId> targets,
               std::span<const std::uint8_t> mask, Mat<T>* dlogits = nullptr);

// Greedy decoding: appends argmax tokens (lowest id on ties) until EOS or
// max_new. Returns the prompt followed by the generated tokens.
std::vector<TokenId> generate_greedy(const EffectiveWeights& weights,
                                     std::span<const TokenId> prompt, int max_new);

struct PretrainOptions {
  int steps = 1000;
  std::uint64_t seed = 0;
  int seq_len = 128;
  int batch = 8;
  double learning_rate = 1e-3;
  double min_lr_fraction = 0.1;  // cosine floor
  int warmup_steps = 50;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  // Called after each step with (step, mean loss of the step).
  std::function<void(int, double)> on_step;
};

// Full-parameter next-token training of a fresh model. Text made of
// blank-line separated paragraphs is trained one paragraph per sequence
// ([BOS] paragraph [EOS]); otherwise random windows are used.
ModelParams pretrain_base(std::string_view corpus_text, const ModelConfig& config,
                          const PretrainOptions& options);
ModelParams pretrain_base(std::string_view corpus_text, const ModelConfig& config, int steps,
                          std::uint64_t seed);

// Base checkpoint: "PRAGBASE", u32 version, six u32 config fields, then every
// tensor in for_each_tensor order as little-endian fp32, row-major. The
// fingerprint is recomputed on load.
std::string serialize_params(const ModelParams& params);
ModelParams deserialize_params(std::string_view bytes);
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace prag
