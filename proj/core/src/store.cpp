#include "prag/store.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace prag {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::string_view kTempSuffix = ".tmp";

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string adapter_rel_path(DocId id) { return "adapters/" + to_hex(id) + ".pra"; }
std::string dataset_rel_path(DocId id) { return "datasets/" + to_hex(id) + ".json"; }

std::uint64_t checked(std::int64_t v, const char* name) {
  if (v < 0) fail(ErrorCode::kInvalidArgument, std::string(name) + " must be >= 0");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes, const BeforeRenameHook& hook) {
  fs::path temp = path;
  temp += kTempSuffix;
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIoFailure, "cannot create " + temp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::kIoFailure, "short write to " + temp.string());
  }
  if (hook) hook(temp, path);
  std::error_code ec;
  fs::rename(temp, path, ec);
  if (ec) fail(ErrorCode::kIoFailure, "rename to " + path.string() + " failed: " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string manifest_to_json(const std::map<DocId, ManifestEntry>& manifest) {
  json j = json::object();
  for (const auto& [id, e] : manifest) {
    j[to_hex(id)] = {
        {"adapter_path", e.adapter_path},
        {"bytes", e.bytes},
        {"created_at", e.created_at},
        {"model_fingerprint", to_hex(e.model_fingerprint)},
        {"config",
         {{"rank", e.config.rank}, {"alpha", e.config.alpha}, {"scaling", to_string(e.config.scaling)}}},
    };
  }
  return j.dump(2) + "\n";
}

std::map<DocId, ManifestEntry> manifest_from_json(std::string_view json_text) {
  std::map<DocId, ManifestEntry> out;
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "manifest must be a JSON object");
    for (const auto& [key, v] : j.items()) {
      ManifestEntry e;
      std::uint64_t id = 0;
      std::uint64_t fp = 0;
      if (!parse_hex64(key, id)) fail(ErrorCode::kInvalidArgument, "bad manifest key " + key);
      if (!parse_hex64(v.at("model_fingerprint").get<std::string>(), fp)) {
        fail(ErrorCode::kInvalidArgument, "bad fingerprint for " + key);
      }
      e.doc_id = DocId{id};
      e.adapter_path = v.at("adapter_path").get<std::string>();
      e.bytes = v.at("bytes").get<std::uint64_t>();
      e.created_at = v.at("created_at").get<std::string>();
      e.model_fingerprint = fp;
      const auto& c = v.at("config");
      e.config.rank = c.at("rank").get<int>();
      e.config.alpha = c.at("alpha").get<float>();
      e.config.scaling = parse_scaling_mode(c.at("scaling").get<std::string>());
      out.emplace(e.doc_id, std::move(e));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("malformed manifest: ") + e.what());
  }
  return out;
}

ParametricCorpus ParametricCorpus::open(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "adapters", ec);
  if (!ec) fs::create_directories(root / "datasets", ec);
  if (ec) fail(ErrorCode::kIoFailure, "cannot create " + root.string() + ": " + ec.message());

  ParametricCorpus corpus(root);
  for (const auto& sub : {root, root / "adapters", root / "datasets"}) {
    for (const auto& item : fs::directory_iterator(sub)) {
      if (item.is_regular_file() && item.path().extension() == kTempSuffix) {
        fs::remove(item.path(), ec);
      }
    }
  }
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path)) corpus.manifest_ = manifest_from_json(read_file(manifest_path));
  for (const auto& [id, e] : corpus.manifest_) {
    const fs::path file = root / e.adapter_path;
    if (!fs::exists(file)) fail(ErrorCode::kIoFailure, "manifest entry missing file " + file.string());
    const LowRankAdapter adapter = deserialize(read_file(file));
    if (adapter.doc_id != id) {
      fail(ErrorCode::kInvalidArgument, "adapter file " + file.string() + " holds another document");
    }
  }
  return corpus;
}

ParametricCorpus::ParametricCorpus(ParametricCorpus&& other) noexcept
    : root_(std::move(other.root_)),
      manifest_(std::move(other.manifest_)),
      hook_(std::move(other.hook_)) {}

void ParametricCorpus::write_manifest_locked(const std::map<DocId, ManifestEntry>& manifest) const {
  write_file_atomic(root_ / "manifest.json", manifest_to_json(manifest), hook_);
}

ManifestEntry ParametricCorpus::put(const LowRankAdapter& adapter, bool overwrite) {
  const std::string bytes = serialize(adapter);
  std::lock_guard lock(mutex_);
  if (!overwrite && manifest_.contains(adapter.doc_id)) {
    fail(ErrorCode::kDuplicateEntry, "adapter for " + to_hex(adapter.doc_id) + " already stored");
  }
  ManifestEntry e;
  e.doc_id = adapter.doc_id;
  e.adapter_path = adapter_rel_path(adapter.doc_id);
  e.bytes = bytes.size();
  e.created_at = utc_now();
  e.model_fingerprint = adapter.model_fingerprint;
  e.config = adapter.config;
  write_file_atomic(root_ / e.adapter_path, bytes, hook_);
  auto next = manifest_;
  next[e.doc_id] = e;
  write_manifest_locked(next);
  manifest_ = std::move(next);
  return e;
}

std::optional<LowRankAdapter> ParametricCorpus::get(DocId id) const {
  fs::path file;
  {
    std::lock_guard lock(mutex_);
    const auto it = manifest_.find(id);
    if (it == manifest_.end()) return std::nullopt;
    file = root_ / it->second.adapter_path;
  }
  return deserialize(read_file(file));
}

FetchResult ParametricCorpus::get_many(std::span<const DocId> ids) const {
  FetchResult out;
  for (const DocId id : ids) {
    if (auto a = get(id)) {
      out.adapters.push_back(std::move(*a));
    } else {
      out.missing.push_back(id);
    }
  }
  return out;
}

bool ParametricCorpus::contains(DocId id) const {
  std::lock_guard lock(mutex_);
  return manifest_.contains(id);
}

bool ParametricCorpus::contains(DocId id, std::uint64_t fingerprint) const {
  std::lock_guard lock(mutex_);
  const auto it = manifest_.find(id);
  return it != manifest_.end() && it->second.model_fingerprint == fingerprint;
}

std::optional<ManifestEntry> ParametricCorpus::entry(DocId id) const {
  std::lock_guard lock(mutex_);
  const auto it = manifest_.find(id);
  if (it == manifest_.end()) return std::nullopt;
  return it->second;
}

std::vector<ManifestEntry> ParametricCorpus::entries() const {
  std::lock_guard lock(mutex_);
  std::vector<ManifestEntry> out;
  for (const auto& [id, e] : manifest_) out.push_back(e);
  return out;
}

std::size_t ParametricCorpus::size() const {
  std::lock_guard lock(mutex_);
  return manifest_.size();
}

void ParametricCorpus::put_dataset(const AugmentedDataset& dataset) {
  write_file_atomic(root_ / dataset_rel_path(dataset.doc_id), dataset_to_json(dataset), hook_);
}

std::optional<AugmentedDataset> ParametricCorpus::get_dataset(DocId id) const {
  const fs::path file = root_ / dataset_rel_path(id);
  if (!fs::exists(file)) return std::nullopt;
  return dataset_from_json(read_file(file));
}

StorageEstimate storage_estimate(std::int64_t n_layers, std::int64_t hidden, std::int64_t ffn,
                                 std::int64_t rank, std::int64_t bytes_per_param) {
  const std::uint64_t n = checked(n_layers, "n_layers");
  const std::uint64_t h = checked(hidden, "hidden");
  const std::uint64_t l = checked(ffn, "ffn");
  const std::uint64_t r = checked(rank, "rank");
  const std::uint64_t b = checked(bytes_per_param, "bytes_per_param");
  StorageEstimate e;
  e.param_count = 2 * n * r * (h + l);
  e.bytes = e.param_count * b;
  return e;
}

ComputeCost compute_cost_estimate(std::int64_t doc_tokens) {
  const std::uint64_t d = checked(doc_tokens, "doc_tokens");
  ComputeCost c;
  c.augment_decode = 2 * d;
  c.augment_forward = d;
  c.train_forward = 3 * d;
  c.train_backward = 6 * d;
  c.total = c.augment_decode + c.augment_forward + c.train_forward + c.train_backward;
  return c;
}

OnlineSaving online_saving_estimate(std::int64_t q_tokens, std::int64_t d_tokens,
                                    std::int64_t docs) {
  const std::uint64_t q = checked(q_tokens, "q_tokens");
  const std::uint64_t d = checked(d_tokens, "d_tokens");
  const std::uint64_t t = checked(docs, "docs");
  OnlineSaving s;
  s.in_context_input = t * d + q;
  s.parametric_input = q;
  s.saving = s.in_context_input - s.parametric_input;
  return s;
}

}  // namespace prag
