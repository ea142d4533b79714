#include "prag/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "prag/rng.hpp"

namespace prag {
namespace {

constexpr std::string_view kAdapterMagic = "PRAGLORA";
constexpr std::uint32_t kAdapterVersion = 1;

bool same_bits(const Mat<float>& a, const Mat<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(),
                    [](float x, float y) { return std::bit_cast<std::uint32_t>(x) ==
                                                  std::bit_cast<std::uint32_t>(y); });
}

void fill_uniform(Mat<float>& m, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
}

void write_matrix(detail::ByteWriter& w, const Mat<float>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
}

Mat<float> read_matrix(detail::ByteReader& r, std::uint32_t rows, std::uint32_t cols) {
  r.need(static_cast<std::size_t>(rows) * cols * 4);
  Mat<float> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
  return m;
}

}  // namespace

std::string_view to_string(ScalingMode mode) {
  switch (mode) {
    case ScalingMode::kAlphaOverR: return "alpha_over_r";
    case ScalingMode::kAlphaPlain: return "alpha_plain";
  }
  return "unknown";
}

ScalingMode parse_scaling_mode(std::string_view name) {
  if (name == "alpha_over_r") return ScalingMode::kAlphaOverR;
  if (name == "alpha_plain") return ScalingMode::kAlphaPlain;
  fail(ErrorCode::kInvalidArgument, "unknown scaling mode '" + std::string(name) + "'");
}

float AdapterConfig::scale() const {
  return scaling == ScalingMode::kAlphaOverR ? alpha / static_cast<float>(rank) : alpha;
}

void AdapterConfig::validate(const ModelConfig& model) const {
  if (rank < 1 || rank > std::min(model.hidden, model.ffn)) {
    fail(ErrorCode::kShapeMismatch, "rank " + std::to_string(rank) + " outside [1, min(h, l)]");
  }
  if (!(alpha > 0.0f)) fail(ErrorCode::kInvalidArgument, "alpha must be > 0");
}

std::size_t LowRankAdapter::parameter_count() const {
  std::size_t n = 0;
  for (const auto& f : layers) {
    n += static_cast<std::size_t>(f.a_up.size() + f.b_up.size() + f.a_down.size() +
                                  f.b_down.size());
  }
  return n;
}

LowRankDelta<float> LowRankAdapter::as_delta() const {
  return LowRankDelta<float>{config.scale(), layers};
}

bool LowRankAdapter::operator==(const LowRankAdapter& other) const {
  if (doc_id != other.doc_id || model_fingerprint != other.model_fingerprint ||
      !(config == other.config) || layers.size() != other.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i];
    const auto& b = other.layers[i];
    if (!same_bits(a.a_up, b.a_up) || !same_bits(a.b_up, b.b_up) ||
        !same_bits(a.a_down, b.a_down) || !same_bits(a.b_down, b.b_down)) {
      return false;
    }
  }
  return true;
}

LowRankAdapter new_random(const AdapterConfig& config, const ModelConfig& model,
                          std::uint64_t model_fingerprint, DocId doc_id, std::uint64_t seed) {
  model.validate();
  config.validate(model);
  const int h = model.hidden;
  const int l = model.ffn;
  const int r = config.rank;
  LowRankAdapter adapter;
  adapter.doc_id = doc_id;
  adapter.model_fingerprint = model_fingerprint;
  adapter.config = config;
  adapter.layers.resize(static_cast<std::size_t>(model.n_layers));
  Rng rng(seed);
  for (auto& f : adapter.layers) {
    f.a_up.resize(h, r);
    f.a_down.resize(l, r);
    fill_uniform(f.a_up, rng, 1.0 / std::sqrt(static_cast<double>(h)));
    fill_uniform(f.a_down, rng, 1.0 / std::sqrt(static_cast<double>(l)));
    f.b_up = Mat<float>::Zero(l, r);
    f.b_down = Mat<float>::Zero(h, r);
  }
  return adapter;
}

LowRankAdapter new_random(const AdapterConfig& config, const ModelParams& base, DocId doc_id,
                          std::uint64_t seed) {
  return new_random(config, base.config, base.fingerprint, doc_id, seed);
}

MergedDelta delta_of(const LowRankAdapter& adapter) {
  const std::span<const LowRankAdapter> one(&adapter, 1);
  return merge(one);
}

MergedDelta merge(std::span<const LowRankAdapter> adapters, const MergeOptions& options) {
  if (adapters.empty()) fail(ErrorCode::kEmptyList, "nothing to merge");
  const LowRankAdapter& first = adapters.front();
  MergedDelta out;
  out.model_fingerprint = first.model_fingerprint;
  out.layers.resize(first.layers.size());
  for (std::size_t li = 0; li < first.layers.size(); ++li) {
    out.layers[li].up = Mat<float>::Zero(first.layers[li].a_up.rows(), first.layers[li].b_up.rows());
    out.layers[li].down =
        Mat<float>::Zero(first.layers[li].a_down.rows(), first.layers[li].b_down.rows());
  }
  for (const LowRankAdapter& a : adapters) {
    if (a.model_fingerprint != first.model_fingerprint) {
      fail(ErrorCode::kFingerprintMismatch, "adapters were trained against different models");
    }
    if (a.layers.size() != first.layers.size()) {
      fail(ErrorCode::kShapeMismatch, "adapters have different layer counts");
    }
    const float s = a.config.scale();
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
      const auto& f = a.layers[li];
      auto& d = out.layers[li];
      if (f.a_up.rows() != d.up.rows() || f.b_up.rows() != d.up.cols() ||
          f.a_down.rows() != d.down.rows() || f.b_down.rows() != d.down.cols() ||
          f.a_up.cols() != f.b_up.cols() || f.a_down.cols() != f.b_down.cols()) {
        fail(ErrorCode::kShapeMismatch, "adapter factor shapes differ");
      }
      const Mat<float> up = f.a_up * f.b_up.transpose();
      const Mat<float> down = f.a_down * f.b_down.transpose();
      d.up += s * up;
      d.down += s * down;
    }
    out.source_doc_ids.push_back(a.doc_id);
  }
  if (options.average && adapters.size() > 1) {
    const float inv = 1.0f / static_cast<float>(adapters.size());
    for (auto& d : out.layers) {
      d.up *= inv;
      d.down *= inv;
    }
  }
  return out;
}

EffectiveWeights apply(const ModelParams& base, std::shared_ptr<const MergedDelta> delta) {
  return EffectiveWeights(base, std::move(delta));
}

ModelParams materialize(const ModelParams& base, const MergedDelta& delta) {
  // Validates fingerprint and shapes.
  const EffectiveWeights check(base, std::make_shared<const MergedDelta>(delta));
  ModelParams out = base;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    out.layers[li].w_up += delta.layers[li].up;
    out.layers[li].w_down += delta.layers[li].down;
  }
  out.fingerprint = compute_fingerprint(out);
  return out;
}

std::string serialize(const LowRankAdapter& adapter) {
  detail::ByteWriter w;
  w.raw(kAdapterMagic);
  w.u32(kAdapterVersion);
  w.u64(adapter.doc_id.value);
  w.u64(adapter.model_fingerprint);
  w.u8(static_cast<std::uint8_t>(adapter.config.scaling));
  w.u16(static_cast<std::uint16_t>(adapter.config.rank));
  w.f32(adapter.config.alpha);
  w.u32(static_cast<std::uint32_t>(adapter.layers.size() * 2));
  for (std::size_t li = 0; li < adapter.layers.size(); ++li) {
    const auto& f = adapter.layers[li];
    w.u16(static_cast<std::uint16_t>(li));
    w.u8(static_cast<std::uint8_t>(MatrixTag::kFfnUp));
    w.u32(static_cast<std::uint32_t>(f.a_up.rows()));
    w.u32(static_cast<std::uint32_t>(f.b_up.rows()));
    write_matrix(w, f.a_up);
    write_matrix(w, f.b_up);
    w.u16(static_cast<std::uint16_t>(li));
    w.u8(static_cast<std::uint8_t>(MatrixTag::kFfnDown));
    w.u32(static_cast<std::uint32_t>(f.a_down.rows()));
    w.u32(static_cast<std::uint32_t>(f.b_down.rows()));
    write_matrix(w, f.a_down);
    write_matrix(w, f.b_down);
  }
  w.u32(crc32(w.str().data(), w.size()));
  return std::move(w.str());
}

LowRankAdapter deserialize(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < kAdapterMagic.size() || r.take(kAdapterMagic.size()) != kAdapterMagic) {
    fail(ErrorCode::kBadMagic, "not an adapter file");
  }
  const std::uint32_t version = r.u32();
  if (version != kAdapterVersion) {
    fail(ErrorCode::kVersionUnsupported, "adapter version " + std::to_string(version));
  }
  LowRankAdapter adapter;
  adapter.doc_id = DocId{r.u64()};
  adapter.model_fingerprint = r.u64();
  const std::uint8_t mode = r.u8();
  if (mode > 1) fail(ErrorCode::kInvalidArgument, "unknown scaling mode byte");
  adapter.config.scaling = static_cast<ScalingMode>(mode);
  adapter.config.rank = r.u16();
  adapter.config.alpha = r.f32();
  if (adapter.config.rank < 1) fail(ErrorCode::kInvalidArgument, "adapter rank must be >= 1");
  const std::uint32_t n_matrices = r.u32();
  if (n_matrices % 2 != 0) fail(ErrorCode::kInvalidArgument, "odd FFN matrix count");
  r.need(static_cast<std::size_t>(n_matrices) * kAdapterMatrixHeaderBytes + kAdapterTrailerBytes);
  const auto r_cols = static_cast<std::uint32_t>(adapter.config.rank);
  adapter.layers.resize(n_matrices / 2);
  for (std::uint32_t m = 0; m < n_matrices; ++m) {
    const std::uint16_t layer = r.u16();
    const std::uint8_t tag = r.u8();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (layer != m / 2 || tag != m % 2) {
      fail(ErrorCode::kInvalidArgument, "adapter matrices out of order");
    }
    auto& f = adapter.layers[layer];
    if (tag == static_cast<std::uint8_t>(MatrixTag::kFfnUp)) {
      f.a_up = read_matrix(r, rows, r_cols);
      f.b_up = read_matrix(r, cols, r_cols);
    } else {
      f.a_down = read_matrix(r, rows, r_cols);
      f.b_down = read_matrix(r, cols, r_cols);
    }
  }
  const std::size_t body = r.pos();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) fail(ErrorCode::kInvalidArgument, "trailing bytes after checksum");
  if (crc32(bytes.data(), body) != stored) {
    fail(ErrorCode::kChecksumMismatch, "adapter checksum does not match contents");
  }
  return adapter;
}

std::size_t tensor_payload_bytes(std::string_view serialized) {
  detail::ByteReader r(serialized);
  r.take(kAdapterFileHeaderBytes - 4);
  const std::uint32_t n_matrices = r.u32();
  const std::size_t overhead =
      kAdapterFileHeaderBytes + n_matrices * kAdapterMatrixHeaderBytes + kAdapterTrailerBytes;
  if (serialized.size() < overhead) fail(ErrorCode::kTruncatedPayload, "adapter too short");
  return serialized.size() - overhead;
}

void save_adapter(const LowRankAdapter& adapter, const std::filesystem::path& path) {
  const std::string bytes = serialize(adapter);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot write adapter " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIoFailure, "short write to " + path.string());
}

LowRankAdapter load_adapter(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open adapter " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace prag
