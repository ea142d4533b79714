#include <gtest/gtest.h>

#include "prag/adapters.hpp"
#include "delta_oracle.hpp"
#include "support.hpp"

namespace prag {
namespace {

using testing::dense_oracle;
using testing::max_rel;
using testing::random_adapter;
using testing::tiny_config;

// Hand-built adapter on a 1-layer h=2, l=2 model.
LowRankAdapter hand_adapter(std::uint64_t fp, float a0, float a1, float b0, float b1) {
  LowRankAdapter a;
  a.model_fingerprint = fp;
  a.config.rank = 1;
  a.config.alpha = 1.0f;
  a.config.scaling = ScalingMode::kAlphaPlain;
  LowRankFactors<float> f;
  f.a_up = Matrix(2, 1);
  f.a_up << a0, a1;
  f.b_up = Matrix(2, 1);
  f.b_up << b0, b1;
  f.a_down = f.a_up;
  f.b_down = f.b_up;
  a.layers.push_back(f);
  return a;
}

TEST(AdapterConfig, ScaleAndValidation) {
  AdapterConfig c;
  EXPECT_EQ(c.rank, 2);
  EXPECT_EQ(c.alpha, 32.0f);
  EXPECT_EQ(c.scaling, ScalingMode::kAlphaOverR);
  EXPECT_EQ(c.scale(), 16.0f);
  c.scaling = ScalingMode::kAlphaPlain;
  EXPECT_EQ(c.scale(), 32.0f);
  const auto model = tiny_config(2, 16, 64);
  c.rank = 17;
  EXPECT_THROW(c.validate(model), Error);
  c.rank = 0;
  EXPECT_THROW(c.validate(model), Error);
  c.rank = 16;
  EXPECT_NO_THROW(c.validate(model));
  c.alpha = 0.0f;
  EXPECT_THROW(c.validate(model), Error);
  EXPECT_EQ(parse_scaling_mode("alpha_plain"), ScalingMode::kAlphaPlain);
  EXPECT_THROW(parse_scaling_mode("alpha"), Error);
}

TEST(NewRandom, ZeroDeltaAtInit) {
  const auto base = init_params(tiny_config(), 1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto a = new_random(AdapterConfig{}, base, DocId{seed}, seed);
    const auto d = delta_of(a);
    for (const auto& l : d.layers) {
      EXPECT_TRUE((l.up.array() == 0.0f).all());
      EXPECT_TRUE((l.down.array() == 0.0f).all());
    }
    for (const auto& l : a.layers) {
      EXPECT_GT(l.a_up.cwiseAbs().maxCoeff(), 0.0f);
      EXPECT_LE(l.a_up.cwiseAbs().maxCoeff(), 1.0f / std::sqrt(16.0f));
      EXPECT_LE(l.a_down.cwiseAbs().maxCoeff(), 1.0f / std::sqrt(64.0f));
    }
  }
}

TEST(NewRandom, SeedDeterminism) {
  const auto base = init_params(tiny_config(), 1);
  const auto a = new_random(AdapterConfig{}, base, DocId{1}, 5);
  const auto b = new_random(AdapterConfig{}, base, DocId{1}, 5);
  const auto c = new_random(AdapterConfig{}, base, DocId{1}, 6);
  EXPECT_EQ(serialize(a), serialize(b));
  EXPECT_FALSE(a.layers[0].a_up == c.layers[0].a_up);
}

TEST(NewRandom, ShapeMismatch) {
  AdapterConfig c;
  c.rank = 100;
  EXPECT_EQ(testing::error_code_of([&] { new_random(c, tiny_config(), 1, DocId{}, 1); }),
            ErrorCode::kShapeMismatch);
}

TEST(DeltaOf, HandRankOne) {
  const auto a = hand_adapter(7, 1, 0, 1, 0);
  const auto d = delta_of(a);
  Matrix want(2, 2);
  want << 1, 0, 0, 0;
  EXPECT_EQ(d.layers[0].up, want);
  EXPECT_EQ(d.layers[0].down, want);
}

TEST(DeltaOf, ZeroBAnnihilates) {
  const auto a = hand_adapter(7, 3, -2, 0, 0);
  EXPECT_TRUE((delta_of(a).layers[0].up.array() == 0.0f).all());
}

TEST(DeltaOf, MatchesFp64Oracle) {
  const auto base = init_params(tiny_config(2, 16, 64), 1);
  for (auto mode : {ScalingMode::kAlphaOverR, ScalingMode::kAlphaPlain}) {
    AdapterConfig c;
    c.scaling = mode;
    const auto a = random_adapter(c, base, DocId{1}, 9);
    const auto d = delta_of(a);
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_LE(max_rel(d.layers[l].up, dense_oracle({a}, l, true)), 1e-6);
      EXPECT_LE(max_rel(d.layers[l].down, dense_oracle({a}, l, false)), 1e-6);
    }
    EXPECT_EQ(d.source_doc_ids, std::vector<DocId>{DocId{1}});
  }
}

TEST(Merge, SingletonIsDeltaOfBitExact) {
  const auto base = init_params(tiny_config(), 1);
  const std::vector<LowRankAdapter> one{random_adapter(AdapterConfig{}, base, DocId{4}, 4)};
  const auto m = merge(one);
  const auto d = delta_of(one[0]);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    EXPECT_EQ(m.layers[l].up, d.layers[l].up);
    EXPECT_EQ(m.layers[l].down, d.layers[l].down);
  }
}

TEST(Merge, TwoDisjointRankOnesGiveIdentity) {
  const std::vector<LowRankAdapter> two{hand_adapter(7, 1, 0, 1, 0), hand_adapter(7, 0, 1, 0, 1)};
  const auto m = merge(two);
  EXPECT_EQ(m.layers[0].up, Matrix::Identity(2, 2));
  EXPECT_EQ(m.layers[0].down, Matrix::Identity(2, 2));
}

TEST(Merge, ThreeRandomMatchFp64Oracle) {
  const auto base = init_params(tiny_config(2, 16, 64), 1);
  std::vector<LowRankAdapter> adapters;
  for (std::uint64_t i = 0; i < 3; ++i) adapters.push_back(random_adapter(AdapterConfig{}, base, DocId{i + 10}, i));
  const auto m = merge(adapters);
  EXPECT_EQ(m.source_doc_ids, (std::vector<DocId>{DocId{10}, DocId{11}, DocId{12}}));
  EXPECT_EQ(m.model_fingerprint, base.fingerprint);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_LE(max_rel(m.layers[l].up, dense_oracle(adapters, l, true)), 1e-5);
    EXPECT_LE(max_rel(m.layers[l].down, dense_oracle(adapters, l, false)), 1e-5);
  }
}

TEST(Merge, Linearity) {
  const auto base = init_params(tiny_config(2, 16, 64), 1);
  std::vector<LowRankAdapter> all;
  for (std::uint64_t i = 0; i < 5; ++i) all.push_back(random_adapter(AdapterConfig{}, base, DocId{i}, 100 + i));
  const std::vector<LowRankAdapter> xs(all.begin(), all.begin() + 2), ys(all.begin() + 2, all.end());
  const auto m = merge(all), mx = merge(xs), my = merge(ys);
  for (std::size_t l = 0; l < 2; ++l) {
    const Matrix sum = mx.layers[l].up + my.layers[l].up;
    EXPECT_LE((m.layers[l].up - sum).cwiseAbs().maxCoeff(), 1e-6 * m.layers[l].up.cwiseAbs().maxCoeff());
  }
}

TEST(Merge, AverageOption) {
  const std::vector<LowRankAdapter> two{hand_adapter(7, 1, 0, 1, 0), hand_adapter(7, 0, 1, 0, 1)};
  MergeOptions opts;
  opts.average = true;
  EXPECT_EQ(merge(two, opts).layers[0].up, Matrix::Identity(2, 2) * 0.5f);
}

TEST(Merge, Errors) {
  EXPECT_EQ(testing::error_code_of([] { merge(std::vector<LowRankAdapter>{}); }), ErrorCode::kEmptyList);
  const std::vector<LowRankAdapter> mixed{hand_adapter(7, 1, 0, 1, 0), hand_adapter(8, 0, 1, 0, 1)};
  EXPECT_EQ(testing::error_code_of([&] { merge(mixed); }), ErrorCode::kFingerprintMismatch);
}

TEST(Apply, FingerprintSafetyAndImmutability) {
  const auto base = init_params(tiny_config(), 1);
  const std::string before = serialize_params(base);
  const auto other = init_params(tiny_config(), 2);
  const auto foreign = std::make_shared<const MergedDelta>(delta_of(random_adapter(AdapterConfig{}, other, DocId{1}, 1)));
  EXPECT_EQ(testing::error_code_of([&] { prag::apply(base, foreign); }), ErrorCode::kFingerprintMismatch);
  {
    const auto delta = std::make_shared<const MergedDelta>(delta_of(random_adapter(AdapterConfig{}, base, DocId{1}, 1)));
    const auto w = prag::apply(base, delta);
    const std::vector<TokenId> toks{text::kBos, 1, 2, 3};
    forward(w, toks);
  }
  EXPECT_EQ(serialize_params(base), before);
}

TEST(Apply, ZeroDeltaGenerationMatchesBase) {
  const auto base = init_params(tiny_config(2, 16, 64, 2, 64), 3);
  const auto zero = std::make_shared<const MergedDelta>(delta_of(new_random(AdapterConfig{}, base, DocId{1}, 1)));
  const std::vector<TokenId> prompt{text::kBos, 81, 58};
  EXPECT_EQ(generate_greedy(prag::apply(base, zero), prompt, 20), generate_greedy(EffectiveWeights(base), prompt, 20));
}

TEST(Apply, OnTheFlyMatchesEagerMaterialization) {
  const auto base = init_params(tiny_config(2, 16, 64, 2, 64), 3);
  std::vector<LowRankAdapter> adapters;
  for (std::uint64_t i = 0; i < 3; ++i) adapters.push_back(random_adapter(AdapterConfig{}, base, DocId{i}, i));
  const auto delta = std::make_shared<const MergedDelta>(merge(adapters));
  const ModelParams eager = materialize(base, *delta);
  Rng rng(1);
  std::vector<TokenId> toks(30);
  for (auto& t : toks) t = static_cast<TokenId>(rng.below(256));
  const Matrix lazy = forward(prag::apply(base, delta), toks);
  const Matrix ref = forward(EffectiveWeights(eager), toks);
  EXPECT_LE((lazy - ref).cwiseAbs().maxCoeff() / ref.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Serialize, RoundTripIsIdempotent) {
  const auto base = init_params(tiny_config(2, 16, 64), 1);
  AdapterConfig c;
  c.scaling = ScalingMode::kAlphaPlain;
  c.alpha = 7.5f;
  const auto a = random_adapter(c, base, DocId{0x1234}, 3);
  const std::string bytes = serialize(a);
  const auto back = deserialize(bytes);
  EXPECT_TRUE(back == a);
  EXPECT_EQ(back.doc_id, a.doc_id);
  EXPECT_EQ(back.model_fingerprint, a.model_fingerprint);
  EXPECT_EQ(back.config, a.config);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(bytes.substr(0, 8), "PRAGLORA");
}

TEST(Serialize, CorruptionDetection) {
  const auto base = init_params(tiny_config(2, 16, 64), 1);
  const std::string bytes = serialize(random_adapter(AdapterConfig{}, base, DocId{1}, 3));
  std::string flipped = bytes;
  flipped[kAdapterFileHeaderBytes + kAdapterMatrixHeaderBytes + 5] ^= 0x01;
  EXPECT_EQ(testing::error_code_of([&] { deserialize(flipped); }), ErrorCode::kChecksumMismatch);
  flipped = bytes;
  flipped[flipped.size() - 1] ^= 0x80;
  EXPECT_EQ(testing::error_code_of([&] { deserialize(flipped); }), ErrorCode::kChecksumMismatch);
  flipped = bytes;
  flipped[1] = 'x';
  EXPECT_EQ(testing::error_code_of([&] { deserialize(flipped); }), ErrorCode::kBadMagic);
  flipped = bytes;
  flipped[8] = 2;
  EXPECT_EQ(testing::error_code_of([&] { deserialize(flipped); }), ErrorCode::kVersionUnsupported);
  EXPECT_EQ(testing::error_code_of([&] { deserialize(bytes.substr(0, bytes.size() - 10)); }),
            ErrorCode::kTruncatedPayload);
  EXPECT_EQ(testing::error_code_of([&] { deserialize(bytes.substr(0, 20)); }), ErrorCode::kTruncatedPayload);
  EXPECT_EQ(testing::error_code_of([&] { deserialize(""); }), ErrorCode::kBadMagic);
  // Header claims a huge matrix count.
  flipped = bytes;
  flipped[kAdapterFileHeaderBytes - 1] = '\x7f';
  EXPECT_EQ(testing::error_code_of([&] { deserialize(flipped); }), ErrorCode::kTruncatedPayload);
}

TEST(Serialize, DeskPayloadSize) {
  ModelConfig desk;
  const auto a = new_random(AdapterConfig{}, desk, 42, DocId{1}, 1);
  EXPECT_EQ(a.parameter_count(), 10240u);
  EXPECT_EQ(tensor_payload_bytes(serialize(a)), 40960u);
}

TEST(Serialize, PayloadMatchesParameterFormula) {
  Rng rng(77);
  for (int i = 0; i < 20; ++i) {
    ModelConfig m;
    m.n_layers = 1 + static_cast<int>(rng.below(6));
    m.n_heads = 1;
    m.hidden = 1 + static_cast<int>(rng.below(200));
    m.ffn = 1 + static_cast<int>(rng.below(800));
    AdapterConfig c;
    c.rank = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(m.hidden, m.ffn))));
    const auto a = new_random(c, m, 1, DocId{1}, static_cast<std::uint64_t>(i));
    const std::size_t params = 2ull * m.n_layers * c.rank * (m.hidden + m.ffn);
    EXPECT_EQ(a.parameter_count(), params);
    EXPECT_EQ(tensor_payload_bytes(serialize(a)), params * 4);
  }
}

TEST(Serialize, FileRoundTrip) {
  testing::TempDir dir;
  const auto base = init_params(tiny_config(), 1);
  const auto a = random_adapter(AdapterConfig{}, base, DocId{5}, 5);
  save_adapter(a, dir / "a.pra");
  EXPECT_TRUE(load_adapter(dir / "a.pra") == a);
  EXPECT_EQ(testing::error_code_of([&] { load_adapter(dir / "missing.pra"); }), ErrorCode::kIoFailure);
}

}  // namespace
}  // namespace prag
