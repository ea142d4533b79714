#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prag::text {

using TokenId = std::int32_t;

// Byte-level vocabulary: ids 0..255 are raw bytes, then four specials.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kPad = 258;
inline constexpr TokenId kSep = 259;
inline constexpr int kVocabSize = 260;

inline constexpr bool is_special(TokenId id) { return id >= 256 && id < kVocabSize; }

std::vector<TokenId> encode_bytes(std::string_view text);

// Inverse of encode_bytes. Malformed UTF-8 is replaced by U+FFFD per maximal
// invalid subsequence. Throws InvalidId on ids outside 0..255.
std::string decode_bytes(std::span<const TokenId> ids);

// Lowercased, whitespace-split, punctuation-trimmed words for the retriever.
std::vector<std::string> tokenize_words(std::string_view text);

}  // namespace prag::text
