#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace semforge::text {

bool is_unicode_space(char32_t cp);

/// Splits on Unicode whitespace; no empty tokens.
std::vector<std::string_view> split_whitespace(std::string_view s);

std::size_t word_count(std::string_view s);

/// Number of code points (invalid bytes count as one each).
std::size_t codepoint_count(std::string_view s);

/// Length in bytes of the UTF-8 sequence starting at s[i] (1 on invalid lead).
std::size_t utf8_seq_len(std::string_view s, std::size_t i);

/// Rounds a byte offset down / up to the nearest code point boundary.
std::size_t floor_boundary(std::string_view s, std::size_t i);
std::size_t ceil_boundary(std::string_view s, std::size_t i);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool icontains(std::string_view haystack, std::string_view needle);
bool iequals(std::string_view a, std::string_view b);

/// Lowercased alphanumeric token set, sorted and unique.
std::vector<std::string> token_set(std::string_view s);

/// |A ∩ B| / |A ∪ B| over token_set; two empty sets score 1.
double jaccard(std::string_view a, std::string_view b);

std::vector<std::string> split_lines(std::string_view s);

}  // namespace semforge::text
