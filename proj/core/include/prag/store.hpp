#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prag/adapters.hpp"
#include "prag/augment.hpp"
#include "prag/common.hpp"

namespace prag {

struct ManifestEntry {
  DocId doc_id;
  std::string adapter_path;  // relative to the corpus root
  std::uint64_t bytes = 0;
  std::string created_at;    // UTC, ISO 8601
  std::uint64_t model_fingerprint = 0;
  AdapterConfig config;
};

// Writes `bytes` to `path` through a sibling temp file and a rename. The
// hook, when set, runs after the temp file is complete and before the
// rename; throwing from it leaves `path` untouched.
using BeforeRenameHook =
    std::function<void(const std::filesystem::path& temp, const std::filesystem::path& target)>;
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes,
                       const BeforeRenameHook& hook = {});

std::string read_file(const std::filesystem::path& path);

struct FetchResult {
  std::vector<LowRankAdapter> adapters;  // found ids, in request order
  std::vector<DocId> missing;            // in request order
};

// Directory of per-document adapters: root/manifest.json plus
// root/adapters/<doc id hex>.pra. Augmented datasets for in-context
// augmented answering live in root/datasets/<doc id hex>.json.
class ParametricCorpus {
 public:
  // Creates the layout when absent and checks every manifest entry (file
  // present, checksum valid). Leftover temp files are removed.
  static ParametricCorpus open(const std::filesystem::path& root);

  ParametricCorpus(ParametricCorpus&& other) noexcept;
  ParametricCorpus& operator=(ParametricCorpus&&) = delete;

  const std::filesystem::path& root() const { return root_; }

  // Throws DuplicateEntry if the doc already has an adapter and `overwrite`
  // is false; IoFailure on write errors.
  ManifestEntry put(const LowRankAdapter& adapter, bool overwrite = false);

  std::optional<LowRankAdapter> get(DocId id) const;
  FetchResult get_many(std::span<const DocId> ids) const;

  bool contains(DocId id) const;
  // True when the doc has an adapter trained against `fingerprint`.
  bool contains(DocId id, std::uint64_t fingerprint) const;
  std::optional<ManifestEntry> entry(DocId id) const;
  std::vector<ManifestEntry> entries() const;
  std::size_t size() const;

  void put_dataset(const AugmentedDataset& dataset);
  std::optional<AugmentedDataset> get_dataset(DocId id) const;

  // Test hook for simulating a crash between temp write and rename.
  void set_before_rename_hook(BeforeRenameHook hook) { hook_ = std::move(hook); }

 private:
  explicit ParametricCorpus(std::filesystem::path root) : root_(std::move(root)) {}
  void write_manifest_locked(const std::map<DocId, ManifestEntry>& manifest) const;

  std::filesystem::path root_;
  std::map<DocId, ManifestEntry> manifest_;
  BeforeRenameHook hook_;
  mutable std::mutex mutex_;
};

std::string manifest_to_json(const std::map<DocId, ManifestEntry>& manifest);
std::map<DocId, ManifestEntry> manifest_from_json(std::string_view json_text);

// ---- Cost accounting ----

struct StorageEstimate {
  std::uint64_t param_count = 0;
  std::uint64_t bytes = 0;
};

// 2 * n * r * (h + l) parameters.
StorageEstimate storage_estimate(std::int64_t n_layers, std::int64_t hidden, std::int64_t ffn,
                                 std::int64_t rank, std::int64_t bytes_per_param);

// Offline cost of one document in token-equivalents of decoding.
struct ComputeCost {
  std::uint64_t augment_decode = 0;   // generating rewrites and QA: 2|d|
  std::uint64_t augment_forward = 0;  // reading the document: |d|
  std::uint64_t train_forward = 0;    // 3|d|
  std::uint64_t train_backward = 0;   // 6|d|
  std::uint64_t total = 0;

  std::uint64_t augmentation() const { return augment_decode + augment_forward; }
  std::uint64_t training() const { return train_forward + train_backward; }
};
ComputeCost compute_cost_estimate(std::int64_t doc_tokens);

struct OnlineSaving {
  std::uint64_t in_context_input = 0;  // t|d| + |q|
  std::uint64_t parametric_input = 0;  // |q|
  std::uint64_t saving = 0;
};
OnlineSaving online_saving_estimate(std::int64_t q_tokens, std::int64_t d_tokens,
                                    std::int64_t docs);

}  // namespace prag
