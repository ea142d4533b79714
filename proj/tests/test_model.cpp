#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "prag/adapters.hpp"
#include "prag/model.hpp"
#include "support.hpp"

namespace prag {
namespace {

using testing::tiny_config;
using Vec = std::vector<double>;
using Grid = std::vector<Vec>;

// Plain-loop re-implementation of the forward pass in fp64.
Grid naive_layer_norm(const Grid& x, const RowVec<double>& g, const RowVec<double>& b) {
  Grid y = x;
  for (auto& row : y) {
    const double n = static_cast<double>(row.size());
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mean) * inv * g(i) + b(i);
  }
  return y;
}

Grid naive_matmul(const Grid& x, const Mat<double>& w) {
  Grid y(x.size(), Vec(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < w.rows(); ++i) s += x[t][static_cast<std::size_t>(i)] * w(i, j);
      y[t][static_cast<std::size_t>(j)] = s;
    }
  }
  return y;
}

Grid naive_forward(const BasicModelParams<double>& p, const std::vector<Mat<double>>* up_delta,
                   const std::vector<Mat<double>>* down_delta, const std::vector<TokenId>& tokens) {
  const auto& cfg = p.config;
  const std::size_t n = tokens.size();
  const int hd = cfg.hidden / cfg.n_heads;
  Grid x(n, Vec(static_cast<std::size_t>(cfg.hidden)));
  for (std::size_t t = 0; t < n; ++t) {
    for (int i = 0; i < cfg.hidden; ++i) x[t][i] = p.tok_emb(tokens[t], i) + p.pos_emb(static_cast<Eigen::Index>(t), i);
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l];
    const Grid a = naive_layer_norm(x, w.ln1_g, w.ln1_b);
    const Grid q = naive_matmul(a, w.wq), k = naive_matmul(a, w.wk), v = naive_matmul(a, w.wv);
    Grid att(n, Vec(static_cast<std::size_t>(cfg.hidden), 0.0));
    for (int h = 0; h < cfg.n_heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        Vec s(i + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (int d = 0; d < hd; ++d) dot += q[i][h * hd + d] * k[j][h * hd + d];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= i; ++j) {
          for (int d = 0; d < hd; ++d) att[i][h * hd + d] += s[j] / z * v[j][h * hd + d];
        }
      }
    }
    const Grid o = naive_matmul(att, w.wo);
    for (std::size_t t = 0; t < n; ++t) {
      for (int i = 0; i < cfg.hidden; ++i) x[t][i] += o[t][i];
    }
    const Grid b = naive_layer_norm(x, w.ln2_g, w.ln2_b);
    Mat<double> up = w.w_up, down = w.w_down;
    if (up_delta) up += (*up_delta)[l];
    if (down_delta) down += (*down_delta)[l];
    Grid u = naive_matmul(b, up);
    for (auto& row : u) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        const double z = row[j] + w.b_up(j);
        row[j] = 0.5 * z * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (z + 0.044715 * z * z * z)));
      }
    }
    const Grid f = naive_matmul(u, down);
    for (std::size_t t = 0; t < n; ++t) {
      for (int i = 0; i < cfg.hidden; ++i) x[t][i] += f[t][i] + w.b_down(i);
    }
  }
  return naive_matmul(naive_layer_norm(x, p.lnf_g, p.lnf_b), p.w_out);
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n) {
  std::vector<TokenId> t(n);
  for (auto& id : t) id = static_cast<TokenId>(rng.below(text::kVocabSize));
  return t;
}

TEST(ModelConfig, Validation) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  auto c = tiny_config();
  c.n_heads = 3;
  EXPECT_EQ(testing::error_code_of([&] { c.validate(); }), ErrorCode::kInvalidArgument);
  c = tiny_config();
  c.ffn = 0;
  EXPECT_EQ(testing::error_code_of([&] { c.validate(); }), ErrorCode::kInvalidArgument);
}

TEST(Forward, SingleBosShape) {
  const auto params = init_params(tiny_config(), 1);
  const std::vector<TokenId> toks{text::kBos};
  const Matrix logits = forward(EffectiveWeights(params), toks);
  EXPECT_EQ(logits.rows(), 1);
  EXPECT_EQ(logits.cols(), 260);
}

TEST(Forward, ZeroDeltaIsBitIdentical) {
  const auto params = init_params(tiny_config(), 2);
  auto delta = std::make_shared<MergedDelta>();
  delta->model_fingerprint = params.fingerprint;
  for (int l = 0; l < params.config.n_layers; ++l) {
    delta->layers.push_back({Matrix::Zero(16, 64), Matrix::Zero(64, 16)});
  }
  Rng rng(3);
  const auto toks = random_tokens(rng, 30);
  const Matrix a = forward(EffectiveWeights(params), toks);
  const Matrix b = forward(prag::apply(params, delta), toks);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())));
}

TEST(Forward, MatchesIndependentReimplementation) {
  const auto params = init_params(tiny_config(2, 16, 64, 2, 64), 4);
  const auto p64 = params.cast<double>();
  Rng rng(5);
  const auto toks = random_tokens(rng, 24);
  const Matrix got = forward(EffectiveWeights(params), toks);
  const Grid want = naive_forward(p64, nullptr, nullptr, toks);
  double max_err = 0.0, max_ref = 0.0;
  for (std::size_t t = 0; t < toks.size(); ++t) {
    for (int j = 0; j < 260; ++j) {
      max_err = std::max(max_err, std::abs(double(got(static_cast<Eigen::Index>(t), j)) - want[t][j]));
      max_ref = std::max(max_ref, std::abs(want[t][j]));
    }
  }
  EXPECT_LE(max_err / max_ref, 1e-5) << "max abs err " << max_err;
}

TEST(Forward, DeltaMatchesIndependentReimplementation) {
  const auto params = init_params(tiny_config(2, 16, 64, 2, 64), 6);
  AdapterConfig ac;
  const auto adapter = testing::random_adapter(ac, params, DocId{1}, 7);
  const auto delta = std::make_shared<const MergedDelta>(delta_of(adapter));
  std::vector<Mat<double>> up, down;
  for (const auto& l : delta->layers) {
    up.push_back(l.up.cast<double>());
    down.push_back(l.down.cast<double>());
  }
  Rng rng(8);
  const auto toks = random_tokens(rng, 20);
  const Matrix got = forward(prag::apply(params, delta), toks);
  const Grid want = naive_forward(params.cast<double>(), &up, &down, toks);
  double max_err = 0.0, max_ref = 0.0;
  for (std::size_t t = 0; t < toks.size(); ++t) {
    for (int j = 0; j < 260; ++j) {
      max_err = std::max(max_err, std::abs(double(got(static_cast<Eigen::Index>(t), j)) - want[t][j]));
      max_ref = std::max(max_ref, std::abs(want[t][j]));
    }
  }
  EXPECT_LE(max_err / max_ref, 1e-5);
}

TEST(Forward, Causality) {
  const auto params = init_params(tiny_config(), 9);
  Rng rng(10);
  auto toks = random_tokens(rng, 32);
  const Matrix before = forward(EffectiveWeights(params), toks);
  for (std::size_t j : {5u, 17u, 31u}) {
    auto changed = toks;
    changed[j] = (changed[j] + 1) % 260;
    const Matrix after = forward(EffectiveWeights(params), changed);
    for (std::size_t t = 0; t < j; ++t) {
      EXPECT_TRUE(before.row(static_cast<Eigen::Index>(t)) == after.row(static_cast<Eigen::Index>(t))) << "pos " << t;
    }
    EXPECT_FALSE(before.row(static_cast<Eigen::Index>(j)) == after.row(static_cast<Eigen::Index>(j)));
  }
}

TEST(Forward, SeqTooLongAndFingerprintMismatch) {
  const auto params = init_params(tiny_config(1, 16, 32, 2, 8), 1);
  const std::vector<TokenId> toks(9, 65);
  EXPECT_EQ(testing::error_code_of([&] { forward(EffectiveWeights(params), toks); }), ErrorCode::kSeqTooLong);
  auto delta = std::make_shared<MergedDelta>();
  delta->model_fingerprint = params.fingerprint ^ 1;
  delta->layers.push_back({Matrix::Zero(16, 32), Matrix::Zero(32, 16)});
  EXPECT_EQ(testing::error_code_of([&] { EffectiveWeights(params, delta); }), ErrorCode::kFingerprintMismatch);
}

TEST(LmLoss, UniformLogits) {
  const Matrix logits = Matrix::Zero(4, 260);
  const std::vector<TokenId> targets{1, 2, 3, 4};
  const LossMask mask{1, 1, 1, 1};
  EXPECT_NEAR(lm_loss(logits, targets, mask), std::log(260.0), 1e-6);
  EXPECT_NEAR(std::log(260.0), 5.5607, 1e-4);
}

TEST(LmLoss, MarginDrivesLossToZero) {
  const std::vector<TokenId> targets{7};
  const LossMask mask{1};
  double prev = 1e9;
  for (float margin : {1.f, 5.f, 10.f, 20.f, 40.f}) {
    Matrix logits = Matrix::Zero(1, 260);
    logits(0, 7) = margin;
    const double loss = lm_loss(logits, targets, mask);
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(LmLoss, MatchesHandRolledNll) {
  Rng rng(11);
  Mat<double> logits(10, 260);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = 3.0 * rng.normal();
  std::vector<TokenId> targets(10);
  for (auto& t : targets) t = static_cast<TokenId>(rng.below(260));
  LossMask mask{1, 1, 0, 1, 1, 1, 0, 1, 1, 1};
  double total = 0.0;
  int count = 0;
  for (int r = 0; r < 10; ++r) {
    if (!mask[r]) continue;
    double z = 0.0;
    for (int j = 0; j < 260; ++j) z += std::exp(logits(r, j));
    total += -std::log(std::exp(logits(r, targets[r])) / z);
    ++count;
  }
  EXPECT_NEAR(lm_loss(logits, targets, mask), total / count, 1e-12);
}

TEST(LmLoss, AllMaskedFails) {
  const Matrix logits = Matrix::Zero(2, 260);
  const std::vector<TokenId> targets{1, 2};
  const LossMask mask{0, 0};
  EXPECT_EQ(testing::error_code_of([&] { lm_loss(logits, targets, mask); }), ErrorCode::kAllMasked);
}

TEST(Backward, BaseGradientsMatchFiniteDifferences) {
  const auto p = init_params(tiny_config(2, 16, 64, 2, 32), 12).cast<double>();
  Rng rng(13);
  const auto toks = random_tokens(rng, 21);
  const std::vector<TokenId> inputs(toks.begin(), toks.end() - 1), targets(toks.begin() + 1, toks.end());
  const LossMask mask(inputs.size(), 1);
  auto loss_of = [&](const BasicModelParams<double>& q) {
    return lm_loss(forward_logits(q, DeltaView<double>{}, inputs), targets, mask);
  };
  ForwardCache<double> cache;
  const Mat<double> logits = forward_logits(p, DeltaView<double>{}, inputs, &cache);
  Mat<double> dlogits;
  lm_loss(logits, targets, mask, &dlogits);
  auto grads = BasicModelParams<double>::zeros(p.config);
  grads.for_each_tensor([](const char*, auto& t) { t.setZero(); });
  backward<double>(p, DeltaView<double>{}, cache, dlogits, &grads, nullptr);

  std::vector<std::string> names;
  auto probe = p;
  probe.for_each_tensor([&](const char* name, auto& t) {
    names.emplace_back(name);
    (void)t;
  });
  std::vector<double*> gdata;
  std::vector<Eigen::Index> sizes;
  grads.for_each_tensor([&](const char*, auto& t) {
    gdata.push_back(t.data());
    sizes.push_back(t.size());
  });
  std::vector<double*> pdata;
  probe.for_each_tensor([&](const char*, auto& t) { pdata.push_back(t.data()); });

  double worst = 0.0;
  int checked = 0;
  for (std::size_t k = 0; k < pdata.size(); ++k) {
    for (int s = 0; s < 4; ++s) {
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(sizes[k])));
      const double w = pdata[k][i];
      const double eps = 1e-5;
      pdata[k][i] = w + eps;
      const double up = loss_of(probe);
      pdata[k][i] = w - eps;
      const double dn = loss_of(probe);
      pdata[k][i] = w;
      const double num = (up - dn) / (2 * eps);
      const double ana = gdata[k][i];
      if (std::abs(num) < 1e-9 && std::abs(ana) < 1e-9) continue;
      const double err = std::abs(num - ana) / std::max(std::abs(num) + std::abs(ana), 1e-6);
      worst = std::max(worst, err);
      EXPECT_LE(err, 1e-4) << names[k] << "[" << i << "] analytic " << ana << " numeric " << num;
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
  RecordProperty("worst_rel_err", std::to_string(worst));
}

TEST(GenerateGreedy, ZeroMaxNewReturnsPrompt) {
  const auto params = init_params(tiny_config(), 1);
  const std::vector<TokenId> prompt{text::kBos, 65, 66};
  EXPECT_EQ(generate_greedy(EffectiveWeights(params), prompt, 0), prompt);
}

TEST(GenerateGreedy, StopsAtEos) {
  auto params = init_params(tiny_config(), 1);
  params.lnf_g.setZero();
  params.lnf_b.setOnes();
  params.w_out.setZero();
  params.w_out.col(text::kEos).setOnes();
  params.fingerprint = compute_fingerprint(params);
  const std::vector<TokenId> prompt{text::kBos, 65};
  const auto out = generate_greedy(EffectiveWeights(params), prompt, 10);
  EXPECT_EQ(out, (std::vector<TokenId>{text::kBos, 65, text::kEos}));
}

TEST(GenerateGreedy, TiesPickLowestId) {
  auto params = init_params(tiny_config(), 1);
  params.w_out.setZero();
  params.fingerprint = compute_fingerprint(params);
  const std::vector<TokenId> prompt{text::kBos};
  const auto out = generate_greedy(EffectiveWeights(params), prompt, 3);
  EXPECT_EQ(out, (std::vector<TokenId>{text::kBos, 0, 0, 0}));
}

TEST(GenerateGreedy, DeterministicAndBounded) {
  const auto params = init_params(tiny_config(2, 16, 64, 2, 40), 14);
  const std::vector<TokenId> prompt{text::kBos, 72, 105};
  const auto first = generate_greedy(EffectiveWeights(params), prompt, 20);
  EXPECT_LE(first.size(), prompt.size() + 20);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(generate_greedy(EffectiveWeights(params), prompt, 20), first);
  EXPECT_EQ(testing::error_code_of([&] { generate_greedy(EffectiveWeights(params), prompt, 38); }),
            ErrorCode::kSeqTooLong);
  EXPECT_EQ(testing::error_code_of([&] { generate_greedy(EffectiveWeights(params), {}, 1); }),
            ErrorCode::kInvalidArgument);
}

TEST(InitParams, FingerprintTracksWeightsAndShape) {
  const auto a = init_params(tiny_config(), 1);
  const auto b = init_params(tiny_config(), 1);
  EXPECT_EQ(a.fingerprint, b.fingerprint);
  EXPECT_NE(a.fingerprint, init_params(tiny_config(), 2).fingerprint);
  EXPECT_NE(a.fingerprint, init_params(tiny_config(2, 16, 32), 1).fingerprint);
  auto c = a;
  c.layers[1].w_down(3, 3) += 1e-3f;
  EXPECT_NE(compute_fingerprint(c), a.fingerprint);
  EXPECT_EQ(compute_fingerprint(a), a.fingerprint);
  EXPECT_EQ(a.parameter_count(), [&] {
    std::size_t n = 0;
    a.for_each_tensor([&](const char*, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }());
}

TEST(Checkpoint, RoundTripAndErrors) {
  testing::TempDir dir;
  const auto params = init_params(tiny_config(), 3);
  const std::string bytes = serialize_params(params);
  EXPECT_EQ(bytes.substr(0, 8), "PRAGBASE");
  const std::size_t header = 8 + 4 + 6 * 4;
  EXPECT_EQ(bytes.size(), header + params.parameter_count() * 4);
  const auto back = deserialize_params(bytes);
  EXPECT_EQ(back.fingerprint, params.fingerprint);
  EXPECT_EQ(serialize_params(back), bytes);
  save_params(params, dir / "base.bin");
  EXPECT_EQ(load_params(dir / "base.bin").fingerprint, params.fingerprint);

  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(testing::error_code_of([&] { deserialize_params(bad); }), ErrorCode::kBadMagic);
  EXPECT_EQ(testing::error_code_of([&] { deserialize_params(bytes.substr(0, bytes.size() - 1)); }),
            ErrorCode::kTruncatedPayload);
  bad = bytes;
  bad[8] = 99;
  EXPECT_EQ(testing::error_code_of([&] { deserialize_params(bad); }), ErrorCode::kVersionUnsupported);
}

TEST(PretrainBase, LearnsPeriodicText) {
  std::string text;
  for (int i = 0; i < 400; ++i) text += "ab";
  PretrainOptions opts;
  opts.steps = 300;
  opts.seq_len = 32;
  opts.batch = 4;
  opts.learning_rate = 3e-3;
  opts.warmup_steps = 5;
  opts.seed = 1;
  const auto params = pretrain_base(text, tiny_config(1, 16, 32, 2, 64), opts);
  std::vector<TokenId> toks = text::encode_bytes(text.substr(0, 33));
  const std::vector<TokenId> in(toks.begin(), toks.end() - 1), tgt(toks.begin() + 1, toks.end());
  const LossMask mask(in.size(), 1);
  const double loss = lm_loss(forward(EffectiveWeights(params), in), tgt, mask);
  EXPECT_LT(loss, std::log(260.0));
  EXPECT_LT(loss, 1.0);
}

TEST(PretrainBase, SeedDeterminesParams) {
  const std::string text = "the quick brown fox jumps over the lazy dog. ";
  std::string big;
  for (int i = 0; i < 20; ++i) big += text;
  const auto a = pretrain_base(big, tiny_config(1, 16, 32, 2, 64), 5, 42);
  const auto b = pretrain_base(big, tiny_config(1, 16, 32, 2, 64), 5, 42);
  const auto c = pretrain_base(big, tiny_config(1, 16, 32, 2, 64), 5, 43);
  EXPECT_EQ(serialize_params(a), serialize_params(b));
  EXPECT_NE(a.fingerprint, c.fingerprint);
  EXPECT_EQ(testing::error_code_of([] { pretrain_base("", tiny_config(), 1, 1); }), ErrorCode::kEmptyText);
}

TEST(PretrainBase, SmoothedLossCurveDecreases) {
  // ~100 KB of synthetic sentences.
  Rng rng(15);
  const char* words[] = {"alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "lambda",
                         "theta", "zeta"};
  std::string text;
  while (text.size() < 100 * 1024) {
    const int len = 4 + static_cast<int>(rng.below(6));
    for (int i = 0; i < len; ++i) {
      text += words[rng.below(10)];
      text += i + 1 < len ? ' ' : '.';
    }
    text += ' ';
  }
  std::vector<double> losses;
  PretrainOptions opts;
  opts.steps = 300;
  opts.seq_len = 64;
  opts.batch = 4;
  opts.learning_rate = 3e-3;
  opts.warmup_steps = 20;
  opts.seed = 2;
  opts.on_step = [&](int, double loss) { losses.push_back(loss); };
  pretrain_base(text, tiny_config(1, 32, 64, 2, 64), opts);
  ASSERT_EQ(losses.size(), 300u);
  std::vector<double> windows;
  for (std::size_t w = 0; w + 50 <= losses.size(); w += 50) {
    windows.push_back(std::accumulate(losses.begin() + static_cast<long>(w), losses.begin() + static_cast<long>(w + 50), 0.0) / 50);
  }
  for (std::size_t i = 1; i < windows.size(); ++i) EXPECT_LE(windows[i], windows[i - 1]) << "window " << i;
}

}  // namespace
}  // namespace prag
