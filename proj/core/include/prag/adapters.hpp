#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prag/common.hpp"
#include "prag/model.hpp"

namespace prag {

enum class ScalingMode : std::uint8_t {
  kAlphaOverR = 0,  // s = alpha / r (LoRA convention)
  kAlphaPlain = 1,  // s = alpha (merge formula taken literally)
};

std::string_view to_string(ScalingMode mode);
ScalingMode parse_scaling_mode(std::string_view name);

enum class MatrixTag : std::uint8_t { kFfnUp = 0, kFfnDown = 1 };

struct AdapterConfig {
  int rank = 2;
  float alpha = 32.0f;
  ScalingMode scaling = ScalingMode::kAlphaOverR;

  float scale() const;
  // Checks 1 <= rank <= min(hidden, ffn) and alpha > 0.
  void validate(const ModelConfig& model) const;
  bool operator==(const AdapterConfig&) const = default;
};

// Per-document parametric representation: low-rank factors on both FFN
// matrices of every layer.
struct LowRankAdapter {
  DocId doc_id;
  std::uint64_t model_fingerprint = 0;
  AdapterConfig config;
  std::vector<LowRankFactors<float>> layers;

  std::size_t parameter_count() const;
  LowRankDelta<float> as_delta() const;
  bool operator==(const LowRankAdapter& other) const;
};

// A ~ U(-1/sqrt(rows), 1/sqrt(rows)), B = 0, so the initial delta is zero.
LowRankAdapter new_random(const AdapterConfig& config, const ModelConfig& model,
                          std::uint64_t model_fingerprint, DocId doc_id, std::uint64_t seed);
LowRankAdapter new_random(const AdapterConfig& config, const ModelParams& base, DocId doc_id,
                          std::uint64_t seed);

// Dense s * A * B^T for every target matrix.
MergedDelta delta_of(const LowRankAdapter& adapter);

struct MergeOptions {
  bool average = false;  // divide the sum by the number of adapters
};

// Sum of the adapters' dense deltas, accumulated in list order in fp32.
// Each adapter contributes with its own recorded scaling.
MergedDelta merge(std::span<const LowRankAdapter> adapters, const MergeOptions& options = {});

// Pairs the base with the delta; throws FingerprintMismatch.
EffectiveWeights apply(const ModelParams& base, std::shared_ptr<const MergedDelta> delta);

// Copy of `base` with W + dW written into the FFN matrices. Used only as a
// reference for the on-the-fly path; the result has a new fingerprint.
ModelParams materialize(const ModelParams& base, const MergedDelta& delta);

// ".pra" layout: "PRAGLORA", u32 version, u64 doc_id, u64 fingerprint,
// u8 scaling mode, u16 rank, f32 alpha, u32 matrix count, then per matrix
// u16 layer, u8 tag, u32 rows, u32 cols, A (rows x r) and B (cols x r) as
// little-endian fp32; trailing CRC32 of everything before it.
std::string serialize(const LowRankAdapter& adapter);
LowRankAdapter deserialize(std::string_view bytes);

inline constexpr std::size_t kAdapterFileHeaderBytes = 39;
inline constexpr std::size_t kAdapterMatrixHeaderBytes = 11;
inline constexpr std::size_t kAdapterTrailerBytes = 4;

// Tensor bytes in a serialized adapter: total size minus the file header,
// per-matrix headers and checksum, as read from the bytes themselves.
std::size_t tensor_payload_bytes(std::string_view serialized);

void save_adapter(const LowRankAdapter& adapter, const std::filesystem::path& path);
LowRankAdapter load_adapter(const std::filesystem::path& path);

}  // namespace prag
