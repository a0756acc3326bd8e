#pragma once

#include <string>
#include <string_view>

namespace segkit::unicode {

// Decodes UTF-8; invalid sequences become U+FFFD.
std::u32string decode_utf8(std::string_view text);
std::string encode_utf8(std::u32string_view text);
void append_utf8(std::string& out, char32_t cp);

// Character classes used by the uncased word-piece pre-tokenizer.
bool is_control(char32_t cp);      // general category C*, except \t \n \r
bool is_whitespace(char32_t cp);   // space, \t, \n, \r and category Zs
bool is_punctuation(char32_t cp);  // ASCII non-alphanumerics and category P*
bool is_split_space(char32_t cp);  // whitespace as seen by str.split()
bool is_nonspacing_mark(char32_t cp);
bool is_cjk(char32_t cp);

// Full lowercase mapping with the Final_Sigma context rule.
std::u32string to_lower(std::u32string_view text);

// Canonical decomposition (NFD), including canonical reordering.
std::u32string nfd(std::u32string_view text);

// NFD followed by removal of non-spacing marks.
std::u32string strip_accents(std::u32string_view text);

}  // namespace segkit::unicode
