#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace prag {

enum class ErrorCode {
  kInvalidId,
  kEmptyCorpus,
  kSeqTooLong,
  kFingerprintMismatch,
  kAllMasked,
  kEmptyText,
  kShapeMismatch,
  kEmptyList,
  kBadMagic,
  kVersionUnsupported,
  kTruncatedPayload,
  kChecksumMismatch,
  kInsufficientFacts,
  kEndpointUnreachable,
  kMalformedResponse,
  kOverlong,
  kNonFiniteLoss,
  kDuplicateEntry,
  kIoFailure,
  kNoDocuments,
  kInvalidArgument,
  kNotFound,
};

std::string_view to_string(ErrorCode code);

// All recoverable failures in the library surface as prag::Error.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

// Content hash identifying a document.
struct DocId {
  std::uint64_t value = 0;
  auto operator<=>(const DocId&) const = default;
};

std::string to_hex(std::uint64_t value);
std::string to_hex(DocId id);
// Parses exactly 16 lowercase/uppercase hex digits; returns false otherwise.
bool parse_hex64(std::string_view text, std::uint64_t& out);

// FNV-1a, 64-bit. Used for document ids and model fingerprints.
class Fnv1a64 {
 public:
  void update(const void* data, std::size_t size);
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <typename T>
  void update_pod(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a64(std::string_view s);

std::uint32_t crc32(const void* data, std::size_t size);

}  // namespace prag

template <>
struct std::hash<prag::DocId> {
  std::size_t operator()(const prag::DocId& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
