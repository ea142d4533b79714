#include "prag/text.hpp"

#include <cctype>

#include "prag/common.hpp"

namespace prag::text {
namespace {

constexpr std::string_view kReplacement = "\xEF\xBF\xBD";

bool in_range(unsigned char c, unsigned char lo, unsigned char hi) {
  return c >= lo && c <= hi;
}

// Length in bytes of the whitespace code point starting at s[i], or 0.
std::size_t whitespace_len(std::string_view s, std::size_t i) {
  const auto c = static_cast<unsigned char>(s[i]);
  if (c == ' ' || (c >= 0x09 && c <= 0x0D) || (c >= 0x1C && c <= 0x1F)) return 1;
  auto at = [&](std::size_t k) -> int {
    return i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : -1;
  };
  if (c == 0xC2 && (at(1) == 0x85 || at(1) == 0xA0)) return 2;
  if (c == 0xE1 && at(1) == 0x9A && at(2) == 0x80) return 3;
  if (c == 0xE2 && at(1) == 0x80) {
    const int c2 = at(2);
    if ((c2 >= 0x80 && c2 <= 0x8A) || c2 == 0xA8 || c2 == 0xA9 || c2 == 0xAF) return 3;
  }
  if (c == 0xE2 && at(1) == 0x81 && at(2) == 0x9F) return 3;
  if (c == 0xE3 && at(1) == 0x80 && at(2) == 0x80) return 3;
  return 0;
}

bool is_ascii_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

void push_word(std::string_view raw, std::vector<std::string>& out) {
  std::size_t b = 0;
  std::size_t e = raw.size();
  while (b < e && is_ascii_punct(raw[b])) ++b;
  while (e > b && is_ascii_punct(raw[e - 1])) --e;
  if (b == e) return;
  std::string word(raw.substr(b, e - b));
  for (char& c : word) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  out.push_back(std::move(word));
}

}  // namespace

std::vector<TokenId> encode_bytes(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string decode_bytes(std::span<const TokenId> ids) {
  std::string bytes;
  bytes.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0 || id >= 256) {
      fail(ErrorCode::kInvalidId, "token id " + std::to_string(id) + " is not a byte");
    }
    bytes.push_back(static_cast<char>(id));
  }

  std::string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  const std::size_t n = bytes.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    }
    int need = 0;
    unsigned char lo = 0x80, hi = 0xBF;
    if (in_range(c, 0xC2, 0xDF)) {
      need = 1;
    } else if (c == 0xE0) {
      need = 2, lo = 0xA0;
    } else if (in_range(c, 0xE1, 0xEC) || in_range(c, 0xEE, 0xEF)) {
      need = 2;
    } else if (c == 0xED) {
      need = 2, hi = 0x9F;
    } else if (c == 0xF0) {
      need = 3, lo = 0x90;
    } else if (in_range(c, 0xF1, 0xF3)) {
      need = 3;
    } else if (c == 0xF4) {
      need = 3, hi = 0x8F;
    } else {
      out += kReplacement;
      ++i;
      continue;
    }
    // Consume the maximal valid prefix; a broken sequence yields one U+FFFD.
    std::size_t j = i + 1;
    int got = 0;
    while (got < need && j < n) {
      const auto cc = static_cast<unsigned char>(bytes[j]);
      const bool ok = got == 0 ? in_range(cc, lo, hi) : in_range(cc, 0x80, 0xBF);
      if (!ok) break;
      ++j;
      ++got;
    }
    if (got == need) {
      out.append(bytes, i, j - i);
    } else {
      out += kReplacement;
    }
    i = j;
  }
  return out;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t ws = whitespace_len(text, i);
    if (ws == 0) {
      ++i;
      continue;
    }
    if (i > start) push_word(text.substr(start, i - start), words);
    i += ws;
    start = i;
  }
  if (start < text.size()) push_word(text.substr(start), words);
  return words;
}

}  // namespace prag::text
