#pragma once

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <array>
#include <string>
#include <string_view>
#include <utility>

#include "takit/error.hpp"
#include "takit/utf8.hpp"

namespace takit::textnorm {

namespace detail {

inline const icu::Normalizer2& nfkc_instance() {
  UErrorCode ec = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFKCInstance(ec);
  if (U_FAILURE(ec) || n == nullptr) {
    throw Error(std::string("ICU NFKC unavailable: ") + u_errorName(ec));
  }
  return *n;
}

inline std::string nfkc(std::string_view s) {
  const icu::Normalizer2& n = nfkc_instance();
  UErrorCode ec = U_ZERO_ERROR;
  icu::UnicodeString in = icu::UnicodeString::fromUTF8(
      icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString out = n.normalize(in, ec);
  if (U_FAILURE(ec)) {
    throw Error(std::string("NFKC normalization failed: ") + u_errorName(ec));
  }
  std::string res;
  out.toUTF8String(res);
  return res;
}

inline bool is_zero_width(char32_t c) {
  return (c >= 0x200B && c <= 0x200D) || c == 0xFEFF;
}

inline bool is_cjk_punct_block(char32_t c) {
  return c >= 0x3000 && c <= 0x303F;  // CJK Symbols and Punctuation
}

inline bool is_punct(char32_t c) {
  return u_ispunct(static_cast<UChar32>(c)) != 0;  // general category P*
}

inline bool is_space(char32_t c) {
  return u_isUWhiteSpace(static_cast<UChar32>(c)) != 0;  // White_Space property
}

// Removing characters can expose new compositions / compatibility forms, so
// each pipeline below is iterated to a fixpoint (2 passes in practice).
template <typename Fn>
std::string fixpoint(std::string s, Fn&& pass) {
  for (int i = 0; i < 8; ++i) {
    std::string next = pass(s);
    if (next == s) break;
    s = std::move(next);
  }
  return s;
}

}  // namespace detail

/// CJK punctuation variants normalized by normalize_r2t. Versioned with the
/// tool; exportable via punctuation_table_tsv for audit.
inline constexpr std::array<std::pair<char32_t, char32_t>, 15> kCjkPunctTable = {{
    {U'，', U','},   // fullwidth comma
    {U'。', U'.'},   // ideographic full stop
    {U'：', U':'},   // fullwidth colon
    {U'；', U';'},   // fullwidth semicolon
    {U'！', U'!'},   // fullwidth exclamation mark
    {U'？', U'?'},   // fullwidth question mark
    {U'（', U'('},   // fullwidth left parenthesis
    {U'）', U')'},   // fullwidth right parenthesis
    {U'【', U'['},   // left black lenticular bracket
    {U'】', U']'},   // right black lenticular bracket
    {U'“', U'"'},   // left double quotation mark
    {U'”', U'"'},   // right double quotation mark
    {U'‘', U'\''},  // left single quotation mark
    {U'’', U'\''},  // right single quotation mark
    {U'、', U','},   // ideographic comma
}};

inline std::string punctuation_table_tsv() {
  std::string out;
  for (const auto& [from, to] : kCjkPunctTable) {
    utf8::append(out, from);
    out += '\t';
    utf8::append(out, to);
    out += '\n';
  }
  return out;
}

/// Merge key used when grouping T2R instances: NFKC, then drop all
/// whitespace, all punctuation (category P* plus U+3000..U+303F), and
/// zero-width characters. Case is preserved. Empty output is legal.
inline std::string canonicalize_t2r(std::string_view s) {
  return detail::fixpoint(std::string(s), [](const std::string& in) {
    const std::u32string cps = utf8::decode(detail::nfkc(in));
    std::string out;
    out.reserve(in.size());
    for (char32_t c : cps) {
      if (detail::is_space(c) || detail::is_punct(c) || detail::is_cjk_punct_block(c) ||
          detail::is_zero_width(c)) {
        continue;
      }
      utf8::append(out, c);
    }
    return out;
  });
}

/// Reading-accuracy normalization: NFKC, fixed CJK->ASCII punctuation table,
/// zero-width removal, whitespace collapsed to single spaces and trimmed.
/// Case is preserved.
inline std::string normalize_r2t(std::string_view s) {
  return detail::fixpoint(std::string(s), [](const std::string& in) {
    const std::u32string cps = utf8::decode(detail::nfkc(in));
    std::string out;
    out.reserve(in.size());
    bool pending_space = false;
    bool at_start = true;
    for (char32_t c : cps) {
      if (detail::is_zero_width(c)) continue;
      if (detail::is_space(c)) {
        pending_space = true;
        continue;
      }
      for (const auto& [from, to] : kCjkPunctTable) {
        if (c == from) {
          c = to;
          break;
        }
      }
      if (pending_space && !at_start) out += ' ';
      pending_space = false;
      at_start = false;
      utf8::append(out, c);
    }
    return out;
  });
}

/// Consensus transcript comparison: collapse runs of whitespace to a single
/// ASCII space and trim. No case conversion, no punctuation changes.
inline std::string normalize_ws(std::string_view s) {
  const std::u32string cps = utf8::decode(s);
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  bool at_start = true;
  for (char32_t c : cps) {
    if (detail::is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space && !at_start) out += ' ';
    pending_space = false;
    at_start = false;
    utf8::append(out, c);
  }
  return out;
}

}  // namespace takit::textnorm
