#include "prag/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "prag/optim.hpp"
#include "prag/rng.hpp"

namespace prag {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::string_view kCheckpointMagic = "PRAGBASE";

template <typename T>
void layer_norm(const Mat<T>& x, const RowVec<T>& gain, const RowVec<T>& bias, Mat<T>& xhat,
                std::vector<T>& rstd, Mat<T>& y) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  xhat.resize(rows, cols);
  y.resize(rows, cols);
  rstd.resize(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[static_cast<std::size_t>(r)] = inv;
    xhat.row(r) = (x.row(r).array() - mean) * inv;
    y.row(r) = xhat.row(r).cwiseProduct(gain) + bias;
  }
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& rstd,
                           const RowVec<T>& gain, RowVec<T>* dgain, RowVec<T>* dbias) {
  if (dgain) *dgain += dy.cwiseProduct(xhat).colwise().sum();
  if (dbias) *dbias += dy.colwise().sum();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const RowVec<T> dxhat = dy.row(r).cwiseProduct(gain);
    const T mean_d = dxhat.mean();
    const T mean_dx = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = (dxhat.array() - mean_d - xhat.row(r).array() * mean_dx) *
                rstd[static_cast<std::size_t>(r)];
  }
  return dx;
}

template <typename T>
constexpr T gelu_c() {
  return static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
}

template <typename T>
T gelu(T u) {
  const T inner = gelu_c<T>() * (u + T(0.044715) * u * u * u);
  return T(0.5) * u * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T u) {
  const T inner = gelu_c<T>() * (u + T(0.044715) * u * u * u);
  const T t = std::tanh(inner);
  const T dinner = gelu_c<T>() * (T(1) + T(3) * T(0.044715) * u * u);
  return T(0.5) * (T(1) + t) + T(0.5) * u * (T(1) - t * t) * dinner;
}

template <typename T>
void check_delta_shapes(const BasicModelParams<T>& params, DeltaView<T> delta) {
  const auto n = params.layers.size();
  if (delta.dense && delta.dense->size() != n) {
    fail(ErrorCode::kShapeMismatch, "dense delta layer count differs from model");
  }
  if (delta.low_rank && delta.low_rank->layers.size() != n) {
    fail(ErrorCode::kShapeMismatch, "low-rank delta layer count differs from model");
  }
}

template <typename T>
void fill_normal(Mat<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || hidden < 1 || ffn < 1 || n_heads < 1 || max_seq_len < 1 || vocab < 1) {
    fail(ErrorCode::kInvalidArgument, "model dimensions must all be >= 1");
  }
  if (hidden % n_heads != 0) {
    fail(ErrorCode::kInvalidArgument, "hidden must be divisible by n_heads");
  }
  if (vocab != text::kVocabSize) {
    fail(ErrorCode::kInvalidArgument, "vocab must be " + std::to_string(text::kVocabSize));
  }
}

template <typename T>
BasicModelParams<T> BasicModelParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  const int h = config.hidden;
  const int l = config.ffn;
  BasicModelParams p;
  p.config = config;
  p.tok_emb = Mat<T>::Zero(config.vocab, h);
  p.pos_emb = Mat<T>::Zero(config.max_seq_len, h);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& layer : p.layers) {
    layer.ln1_g = RowVec<T>::Ones(h);
    layer.ln1_b = RowVec<T>::Zero(h);
    layer.wq = Mat<T>::Zero(h, h);
    layer.wk = Mat<T>::Zero(h, h);
    layer.wv = Mat<T>::Zero(h, h);
    layer.wo = Mat<T>::Zero(h, h);
    layer.ln2_g = RowVec<T>::Ones(h);
    layer.ln2_b = RowVec<T>::Zero(h);
    layer.w_up = Mat<T>::Zero(h, l);
    layer.b_up = RowVec<T>::Zero(l);
    layer.w_down = Mat<T>::Zero(l, h);
    layer.b_down = RowVec<T>::Zero(h);
  }
  p.lnf_g = RowVec<T>::Ones(h);
  p.lnf_b = RowVec<T>::Zero(h);
  p.w_out = Mat<T>::Zero(h, config.vocab);
  return p;
}

template <typename T>
std::size_t BasicModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <typename T>
template <typename U>
BasicModelParams<U> BasicModelParams<T>::cast() const {
  BasicModelParams<U> out = BasicModelParams<U>::zeros(config);
  out.fingerprint = fingerprint;
  std::vector<const T*> src;
  for_each_tensor([&](std::string_view, const auto& t) { src.push_back(t.data()); });
  std::size_t k = 0;
  out.for_each_tensor([&](std::string_view, auto& t) {
    const T* s = src[k++];
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<U>(s[i]);
  });
  return out;
}

template struct BasicModelParams<float>;
template struct BasicModelParams<double>;
template BasicModelParams<double> BasicModelParams<float>::cast<double>() const;
template BasicModelParams<float> BasicModelParams<double>::cast<float>() const;
template BasicModelParams<float> BasicModelParams<float>::cast<float>() const;

std::uint64_t compute_fingerprint(const ModelParams& params) {
  Fnv1a64 h;
  const ModelConfig& c = params.config;
  for (int v : {c.n_layers, c.hidden, c.ffn, c.n_heads, c.max_seq_len, c.vocab}) {
    h.update_pod(static_cast<std::uint32_t>(v));
  }
  params.for_each_tensor([&](std::string_view name, const auto& t) {
    h.update(name);
    h.update(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  });
  return h.digest();
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  Rng rng(seed);
  const double std = 0.02;
  const double proj_std = std / std::sqrt(2.0 * config.n_layers);
  fill_normal(p.tok_emb, rng, std);
  fill_normal(p.pos_emb, rng, std);
  for (auto& layer : p.layers) {
    fill_normal(layer.wq, rng, std);
    fill_normal(layer.wk, rng, std);
    fill_normal(layer.wv, rng, std);
    fill_normal(layer.wo, rng, proj_std);
    fill_normal(layer.w_up, rng, std);
    fill_normal(layer.w_down, rng, proj_std);
  }
  fill_normal(p.w_out, rng, std);
  p.fingerprint = compute_fingerprint(p);
  return p;
}

EffectiveWeights::EffectiveWeights(const ModelParams& base,
                                   std::shared_ptr<const MergedDelta> delta)
    : base_(&base), delta_(std::move(delta)) {
  if (delta_) {
    if (delta_->model_fingerprint != base.fingerprint) {
      fail(ErrorCode::kFingerprintMismatch,
           "delta built for model " + to_hex(delta_->model_fingerprint) + ", base is " +
               to_hex(base.fingerprint));
    }
    if (delta_->layers.size() != base.layers.size()) {
      fail(ErrorCode::kShapeMismatch, "delta layer count differs from model");
    }
    const auto h = base.config.hidden;
    const auto l = base.config.ffn;
    for (const auto& d : delta_->layers) {
      if (d.up.rows() != h || d.up.cols() != l || d.down.rows() != l || d.down.cols() != h) {
        fail(ErrorCode::kShapeMismatch, "delta matrix shape differs from model FFN");
      }
    }
  }
}

DeltaView<float> EffectiveWeights::view() const {
  DeltaView<float> v;
  if (delta_) v.dense = &delta_->layers;
  return v;
}

template <typename T>
Mat<T> forward_logits(const BasicModelParams<T>& params, DeltaView<T> delta,
                      std::span<const TokenId> tokens, ForwardCache<T>* cache) {
  const ModelConfig& cfg = params.config;
  const auto seq = static_cast<Eigen::Index>(tokens.size());
  if (seq == 0) fail(ErrorCode::kInvalidArgument, "empty token sequence");
  if (seq > cfg.max_seq_len) {
    fail(ErrorCode::kSeqTooLong, "sequence of " + std::to_string(seq) + " tokens exceeds " +
                                     std::to_string(cfg.max_seq_len));
  }
  check_delta_shapes(params, delta);
  const int h = cfg.hidden;
  const int hd = cfg.head_dim();
  const T att_scale = T(1) / std::sqrt(static_cast<T>(hd));

  Mat<T> x(seq, h);
  for (Eigen::Index t = 0; t < seq; ++t) {
    const TokenId id = tokens[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab) fail(ErrorCode::kInvalidId, "token id out of range");
    x.row(t) = params.tok_emb.row(id) + params.pos_emb.row(t);
  }
  if (cache) {
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->layers.resize(params.layers.size());
  }

  typename ForwardCache<T>::Layer scratch;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    const LayerWeights<T>& w = params.layers[li];
    auto& c = cache ? cache->layers[li] : scratch;
    if (cache) c.x_in = x;

    layer_norm(x, w.ln1_g, w.ln1_b, c.ln1_xhat, c.ln1_rstd, c.a);
    c.q.noalias() = c.a * w.wq;
    c.k.noalias() = c.a * w.wk;
    c.v.noalias() = c.a * w.wv;
    c.att.resize(seq, h);
    c.probs.resize(static_cast<std::size_t>(cfg.n_heads));
    for (int head = 0; head < cfg.n_heads; ++head) {
      const Eigen::Index off = head * hd;
      Mat<T>& p = c.probs[static_cast<std::size_t>(head)];
      p.noalias() = c.q.middleCols(off, hd) * c.k.middleCols(off, hd).transpose();
      for (Eigen::Index i = 0; i < seq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) *= att_scale;
          mx = std::max(mx, p(i, j));
        }
        T sum = T(0);
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          sum += p(i, j);
        }
        const T inv = T(1) / sum;
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) *= inv;
        for (Eigen::Index j = i + 1; j < seq; ++j) p(i, j) = T(0);
      }
      c.att.middleCols(off, hd).noalias() = p * c.v.middleCols(off, hd);
    }
    x.noalias() += c.att * w.wo;
    if (cache) c.x_mid = x;

    layer_norm(x, w.ln2_g, w.ln2_b, c.ln2_xhat, c.ln2_rstd, c.b);
    if (delta.dense) {
      const Mat<T> w_up_eff = w.w_up + (*delta.dense)[li].up;
      c.u.noalias() = c.b * w_up_eff;
    } else {
      c.u.noalias() = c.b * w.w_up;
    }
    if (delta.low_rank) {
      const auto& f = delta.low_rank->layers[li];
      c.b_a_up.noalias() = c.b * f.a_up;
      c.u.noalias() += (delta.low_rank->scale * c.b_a_up) * f.b_up.transpose();
    }
    c.u.rowwise() += w.b_up;
    c.g = c.u.unaryExpr([](T v) { return gelu(v); });
    Mat<T> ffn_out;
    if (delta.dense) {
      const Mat<T> w_down_eff = w.w_down + (*delta.dense)[li].down;
      ffn_out.noalias() = c.g * w_down_eff;
    } else {
      ffn_out.noalias() = c.g * w.w_down;
    }
    if (delta.low_rank) {
      const auto& f = delta.low_rank->layers[li];
      c.g_a_down.noalias() = c.g * f.a_down;
      ffn_out.noalias() += (delta.low_rank->scale * c.g_a_down) * f.b_down.transpose();
    }
    ffn_out.rowwise() += w.b_down;
    x += ffn_out;
  }

  Mat<T> lnf_xhat, xf;
  std::vector<T> lnf_rstd;
  layer_norm(x, params.lnf_g, params.lnf_b, lnf_xhat, lnf_rstd, xf);
  Mat<T> logits;
  logits.noalias() = xf * params.w_out;
  if (cache) {
    cache->x_final = std::move(x);
    cache->lnf_xhat = std::move(lnf_xhat);
    cache->lnf_rstd = std::move(lnf_rstd);
    cache->xf = std::move(xf);
  }
  return logits;
}

template <typename T>
void backward(const BasicModelParams<T>& params, DeltaView<T> delta, const ForwardCache<T>& cache,
              const Mat<T>& dlogits, BasicModelParams<T>* pg,
              std::vector<LowRankFactors<T>>* fg) {
  const ModelConfig& cfg = params.config;
  const auto seq = static_cast<Eigen::Index>(cache.tokens.size());
  const int hd = cfg.head_dim();
  const T att_scale = T(1) / std::sqrt(static_cast<T>(hd));
  if (fg && !delta.low_rank) {
    fail(ErrorCode::kInvalidArgument, "factor gradients requested without a low-rank delta");
  }
  if (fg && fg->size() != params.layers.size()) {
    fail(ErrorCode::kShapeMismatch, "factor gradient buffer has wrong layer count");
  }

  if (pg) pg->w_out.noalias() += cache.xf.transpose() * dlogits;
  Mat<T> dxf;
  dxf.noalias() = dlogits * params.w_out.transpose();
  Mat<T> dx = layer_norm_backward(dxf, cache.lnf_xhat, cache.lnf_rstd, params.lnf_g,
                                  pg ? &pg->lnf_g : nullptr, pg ? &pg->lnf_b : nullptr);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const LayerWeights<T>& w = params.layers[li];
    const auto& c = cache.layers[li];
    LayerWeights<T>* gw = pg ? &pg->layers[li] : nullptr;

    // FFN: x_out = x_mid + g * W_down + b_down
    const Mat<T>& df = dx;
    if (gw) {
      gw->w_down.noalias() += c.g.transpose() * df;
      gw->b_down += df.colwise().sum();
    }
    Mat<T> dg;
    if (delta.dense) {
      const Mat<T> w_down_eff = w.w_down + (*delta.dense)[li].down;
      dg.noalias() = df * w_down_eff.transpose();
    } else {
      dg.noalias() = df * w.w_down.transpose();
    }
    if (delta.low_rank) {
      const T s = delta.low_rank->scale;
      const auto& f = delta.low_rank->layers[li];
      const Mat<T> df_b = df * f.b_down;  // seq x r
      dg.noalias() += (s * df_b) * f.a_down.transpose();
      if (fg) {
        auto& gf = (*fg)[li];
        gf.b_down.noalias() += (s * df.transpose()) * c.g_a_down;
        gf.a_down.noalias() += (s * c.g.transpose()) * df_b;
      }
    }
    Mat<T> du = dg;
    for (Eigen::Index i = 0; i < du.size(); ++i) du.data()[i] *= gelu_grad(c.u.data()[i]);
    if (gw) {
      gw->w_up.noalias() += c.b.transpose() * du;
      gw->b_up += du.colwise().sum();
    }
    Mat<T> db;
    if (delta.dense) {
      const Mat<T> w_up_eff = w.w_up + (*delta.dense)[li].up;
      db.noalias() = du * w_up_eff.transpose();
    } else {
      db.noalias() = du * w.w_up.transpose();
    }
    if (delta.low_rank) {
      const T s = delta.low_rank->scale;
      const auto& f = delta.low_rank->layers[li];
      const Mat<T> du_b = du * f.b_up;  // seq x r
      db.noalias() += (s * du_b) * f.a_up.transpose();
      if (fg) {
        auto& gf = (*fg)[li];
        gf.b_up.noalias() += (s * du.transpose()) * c.b_a_up;
        gf.a_up.noalias() += (s * c.b.transpose()) * du_b;
      }
    }
    Mat<T> dx_mid = dx + layer_norm_backward(db, c.ln2_xhat, c.ln2_rstd, w.ln2_g,
                                             gw ? &gw->ln2_g : nullptr,
                                             gw ? &gw->ln2_b : nullptr);

    // Attention: x_mid = x_in + att * W_o
    if (gw) gw->wo.noalias() += c.att.transpose() * dx_mid;
    Mat<T> datt;
    datt.noalias() = dx_mid * w.wo.transpose();
    Mat<T> dq(seq, cfg.hidden), dk(seq, cfg.hidden), dv(seq, cfg.hidden);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const Eigen::Index off = head * hd;
      const Mat<T>& p = c.probs[static_cast<std::size_t>(head)];
      const Mat<T> dout = datt.middleCols(off, hd);
      dv.middleCols(off, hd).noalias() = p.transpose() * dout;
      Mat<T> dp;
      dp.noalias() = dout * c.v.middleCols(off, hd).transpose();
      Mat<T> ds(seq, seq);
      for (Eigen::Index i = 0; i < seq; ++i) {
        T dot = T(0);
        for (Eigen::Index j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
        for (Eigen::Index j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * att_scale;
        for (Eigen::Index j = i + 1; j < seq; ++j) ds(i, j) = T(0);
      }
      dq.middleCols(off, hd).noalias() = ds * c.k.middleCols(off, hd);
      dk.middleCols(off, hd).noalias() = ds.transpose() * c.q.middleCols(off, hd);
    }
    if (gw) {
      gw->wq.noalias() += c.a.transpose() * dq;
      gw->wk.noalias() += c.a.transpose() * dk;
      gw->wv.noalias() += c.a.transpose() * dv;
    }
    Mat<T> da;
    da.noalias() = dq * w.wq.transpose();
    da.noalias() += dk * w.wk.transpose();
    da.noalias() += dv * w.wv.transpose();
    dx = dx_mid + layer_norm_backward(da, c.ln1_xhat, c.ln1_rstd, w.ln1_g,
                                      gw ? &gw->ln1_g : nullptr, gw ? &gw->ln1_b : nullptr);
  }

  if (pg) {
    for (Eigen::Index t = 0; t < seq; ++t) {
      pg->tok_emb.row(cache.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      pg->pos_emb.row(t) += dx.row(t);
    }
  }
}

template Mat<float> forward_logits<float>(const BasicModelParams<float>&, DeltaView<float>,
                                          std::span<const TokenId>, ForwardCache<float>*);
template Mat<double> forward_logits<double>(const BasicModelParams<double>&, DeltaView<double>,
                                            std::span<const TokenId>, ForwardCache<double>*);
template void backward<float>(const BasicModelParams<float>&, DeltaView<float>,
                              const ForwardCache<float>&, const Mat<float>&,
                              BasicModelParams<float>*, std::vector<LowRankFactors<float>>*);
template void backward<double>(const BasicModelParams<double>&, DeltaView<double>,
                               const ForwardCache<double>&, const Mat<double>&,
                               BasicModelParams<double>*, std::vector<LowRankFactors<double>>*);

Matrix forward(const EffectiveWeights& weights, std::span<const TokenId> tokens) {
  return forward_logits<float>(weights.base(), weights.view(), tokens);
}

template <typename T>
double lm_loss(const Mat<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
               Mat<T>* dlogits) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  if (targets.size() != rows || mask.size() != rows) {
    fail(ErrorCode::kShapeMismatch, "targets and mask must have one entry per logits row");
  }
  const auto count = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
  if (count == 0) fail(ErrorCode::kAllMasked, "no unmasked positions");
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double total = 0.0;
  const double inv_count = 1.0 / static_cast<double>(count);
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask[t]) continue;
    const auto r = static_cast<Eigen::Index>(t);
    const TokenId target = targets[t];
    if (target < 0 || target >= logits.cols()) fail(ErrorCode::kInvalidId, "target out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j) mx = std::max(mx, double(logits(r, j)));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(double(logits(r, j)) - mx);
    const double lse = mx + std::log(sum);
    total += lse - double(logits(r, target));
    if (dlogits) {
      for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const double p = std::exp(double(logits(r, j)) - lse);
        (*dlogits)(r, j) = static_cast<T>(p * inv_count);
      }
      (*dlogits)(r, target) -= static_cast<T>(inv_count);
    }
  }
  return total * inv_count;
}

template double lm_loss<float>(const Mat<float>&, std::span<const TokenId>, std::span<const std::uint8_t>,
                               Mat<float>*);
template double lm_loss<double>(const Mat<double>&, std::span<const TokenId>,
                                std::span<const std::uint8_t>, Mat<double>*);

std::vector<TokenId> generate_greedy(const EffectiveWeights& weights,
                                     std::span<const TokenId> prompt, int max_new) {
  if (prompt.empty()) fail(ErrorCode::kInvalidArgument, "prompt must be non-empty");
  if (max_new < 0) fail(ErrorCode::kInvalidArgument, "max_new must be >= 0");
  const int limit = weights.base().config.max_seq_len;
  if (static_cast<long>(prompt.size()) + max_new > limit) {
    fail(ErrorCode::kSeqTooLong, "prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                                     std::to_string(max_new) + " new exceeds " +
                                     std::to_string(limit));
  }
  std::vector<TokenId> tokens(prompt.begin(), prompt.end());
  for (int step = 0; step < max_new; ++step) {
    const Matrix logits = forward(weights, tokens);
    const auto last = logits.rows() - 1;
    TokenId best = 0;
    float best_val = logits(last, 0);
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(last, j) > best_val) {
        best_val = logits(last, j);
        best = static_cast<TokenId>(j);
      }
    }
    tokens.push_back(best);
    if (best == text::kEos) break;
  }
  return tokens;
}

namespace {

struct PretrainSample {
  std::size_t begin;
  std::size_t length;
};

std::vector<ParamSlot<float>> param_slots(ModelParams& params, ModelParams& grads) {
  std::vector<float*> values;
  std::vector<std::size_t> sizes;
  params.for_each_tensor([&](std::string_view, auto& t) {
    values.push_back(t.data());
    sizes.push_back(static_cast<std::size_t>(t.size()));
  });
  std::vector<ParamSlot<float>> slots;
  std::size_t k = 0;
  grads.for_each_tensor([&](std::string_view, auto& t) {
    slots.push_back(ParamSlot<float>{values[k], t.data(), sizes[k]});
    ++k;
  });
  return slots;
}

}  // namespace

ModelParams pretrain_base(std::string_view corpus_text, const ModelConfig& config,
                          const PretrainOptions& options) {
  if (corpus_text.empty()) fail(ErrorCode::kEmptyText, "pretraining text is empty");
  if (options.steps < 1) fail(ErrorCode::kInvalidArgument, "steps must be >= 1");
  if (options.batch < 1) fail(ErrorCode::kInvalidArgument, "batch must be >= 1");
  config.validate();
  const int seq_len = std::min(options.seq_len, config.max_seq_len);
  if (seq_len < 2) fail(ErrorCode::kInvalidArgument, "seq_len must be >= 2");

  // Paragraph mode when the text has blank-line separated records.
  std::vector<PretrainSample> paragraphs;
  {
    std::size_t pos = 0;
    while (pos < corpus_text.size()) {
      std::size_t end = corpus_text.find("\n\n", pos);
      if (end == std::string_view::npos) end = corpus_text.size();
      if (end > pos) paragraphs.push_back({pos, end - pos});
      pos = end + 2;
    }
  }
  const bool paragraph_mode = paragraphs.size() >= 2;

  Rng rng(options.seed);
  ModelParams params = init_params(config, derive_seed(options.seed, 1));
  ModelParams grads = ModelParams::zeros(config);
  auto slots = param_slots(params, grads);
  AdamW<float> adam(AdamW<float>::Options{0.9, 0.95, 1e-8, options.weight_decay});

  std::vector<std::size_t> order(paragraphs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  ForwardCache<float> cache;
  Matrix dlogits;
  for (int step = 0; step < options.steps; ++step) {
    grads.for_each_tensor([](std::string_view, auto& t) { t.setZero(); });
    double step_loss = 0.0;
    for (int bi = 0; bi < options.batch; ++bi) {
      std::vector<TokenId> seq;
      seq.reserve(static_cast<std::size_t>(seq_len) + 1);
      seq.push_back(text::kBos);
      if (paragraph_mode) {
        if (cursor >= order.size()) {
          rng.shuffle(order);
          cursor = 0;
        }
        const auto& para = paragraphs[order[cursor++]];
        const auto bytes = text::encode_bytes(corpus_text.substr(para.begin, para.length));
        const std::size_t keep = std::min<std::size_t>(bytes.size(), seq_len - 1);
        seq.insert(seq.end(), bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
        if (keep == bytes.size()) seq.push_back(text::kEos);
      } else {
        const std::size_t span = static_cast<std::size_t>(seq_len);
        const std::size_t max_start =
            corpus_text.size() > span ? corpus_text.size() - span : 0;
        const std::size_t start = static_cast<std::size_t>(rng.below(max_start + 1));
        const auto bytes = text::encode_bytes(corpus_text.substr(start, span));
        seq.insert(seq.end(), bytes.begin(), bytes.end());
      }
      if (seq.size() < 2) continue;
      const std::span<const TokenId> all(seq);
      const auto inputs = all.first(seq.size() - 1);
      const auto targets = all.subspan(1);
      const LossMask mask(targets.size(), 1);
      const Matrix logits = forward_logits<float>(params, {}, inputs, &cache);
      step_loss += lm_loss<float>(logits, targets, mask, &dlogits);
      dlogits /= static_cast<float>(options.batch);
      backward<float>(params, {}, cache, dlogits, &grads, nullptr);
    }
    step_loss /= options.batch;
    if (!std::isfinite(step_loss)) {
      fail(ErrorCode::kNonFiniteLoss, "pretraining loss diverged at step " + std::to_string(step));
    }
    clip_global_norm(slots, options.grad_clip);
    double lr = options.learning_rate;
    if (step < options.warmup_steps) {
      lr *= static_cast<double>(step + 1) / options.warmup_steps;
    } else {
      const double progress = static_cast<double>(step - options.warmup_steps) /
                              std::max(1, options.steps - options.warmup_steps);
      const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      lr *= options.min_lr_fraction + (1.0 - options.min_lr_fraction) * cosine;
    }
    adam.step(slots, lr);
    if (options.on_step) options.on_step(step, step_loss);
  }
  params.fingerprint = compute_fingerprint(params);
  return params;
}

ModelParams pretrain_base(std::string_view corpus_text, const ModelConfig& config, int steps,
                          std::uint64_t seed) {
  PretrainOptions options;
  options.steps = steps;
  options.seed = seed;
  return pretrain_base(corpus_text, config, options);
}

std::string serialize_params(const ModelParams& params) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const ModelConfig& c = params.config;
  for (int v : {c.n_layers, c.hidden, c.ffn, c.n_heads, c.max_seq_len, c.vocab}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  params.for_each_tensor([&](std::string_view, const auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) w.f32(t.data()[i]);
  });
  return std::move(w.str());
}

ModelParams deserialize_params(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < kCheckpointMagic.size() || r.take(kCheckpointMagic.size()) != kCheckpointMagic) {
    fail(ErrorCode::kBadMagic, "not a base checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::kVersionUnsupported, "checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_layers = static_cast<int>(r.u32());
  c.hidden = static_cast<int>(r.u32());
  c.ffn = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.max_seq_len = static_cast<int>(r.u32());
  c.vocab = static_cast<int>(r.u32());
  ModelParams p = ModelParams::zeros(c);
  p.for_each_tensor([&](std::string_view, auto& t) {
    r.need(static_cast<std::size_t>(t.size()) * 4);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = r.f32();
  });
  if (r.remaining() != 0) fail(ErrorCode::kInvalidArgument, "trailing bytes after checkpoint");
  p.fingerprint = compute_fingerprint(p);
  return p;
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  const std::string bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoFailure, "short write to " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_params(ss.str());
}

}  // namespace prag
