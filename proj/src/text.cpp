#include "semforge/text.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace semforge::text {

namespace {

// Decodes one code point at s[i]; returns U+FFFD for malformed input.
char32_t decode_at(std::string_view s, std::size_t i, std::size_t& len) {
  len = utf8_seq_len(s, i);
  auto b0 = static_cast<unsigned char>(s[i]);
  if (len == 1) return b0 < 0x80 ? b0 : 0xFFFD;
  char32_t cp = len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
  return cp;
}

bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

}  // namespace

bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::size_t utf8_seq_len(std::string_view s, std::size_t i) {
  auto c = static_cast<unsigned char>(s[i]);
  std::size_t n = 1;
  if (c >= 0xF0 && c < 0xF8) n = 4;
  else if (c >= 0xE0) n = 3;
  else if (c >= 0xC0) n = 2;
  if (c >= 0xF8) return 1;
  if (i + n > s.size()) return 1;
  for (std::size_t k = 1; k < n; ++k)
    if (!is_continuation(static_cast<unsigned char>(s[i + k]))) return 1;
  return n;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0, start = std::string_view::npos;
  while (i < s.size()) {
    std::size_t len;
    char32_t cp = decode_at(s, i, len);
    if (is_unicode_space(cp)) {
      if (start != std::string_view::npos) {
        out.push_back(s.substr(start, i - start));
        start = std::string_view::npos;
      }
    } else if (start == std::string_view::npos) {
      start = i;
    }
    i += len;
  }
  if (start != std::string_view::npos) out.push_back(s.substr(start));
  return out;
}

std::size_t word_count(std::string_view s) { return split_whitespace(s).size(); }

std::size_t codepoint_count(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); i += utf8_seq_len(s, i)) ++n;
  return n;
}

std::size_t floor_boundary(std::string_view s, std::size_t i) {
  if (i >= s.size()) return s.size();
  while (i > 0 && is_continuation(static_cast<unsigned char>(s[i]))) --i;
  return i;
}

std::size_t ceil_boundary(std::string_view s, std::size_t i) {
  while (i < s.size() && is_continuation(static_cast<unsigned char>(s[i]))) ++i;
  return std::min(i, s.size());
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  auto words = split_whitespace(s);
  if (words.empty()) return {};
  auto begin = words.front().data() - s.data();
  auto end = words.back().data() + words.back().size() - s.data();
  return std::string(s.substr(begin, end - begin));
}

bool icontains(std::string_view haystack, std::string_view needle) {
  return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && to_lower(a) == to_lower(b);
}

std::vector<std::string> token_set(std::string_view s) {
  std::set<std::string> tokens;
  std::string cur;
  for (char ch : s) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.insert(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.insert(std::move(cur));
  return {tokens.begin(), tokens.end()};
}

double jaccard(std::string_view a, std::string_view b) {
  auto ta = token_set(a), tb = token_set(b);
  if (ta.empty() && tb.empty()) return 1.0;
  std::vector<std::string> inter;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(inter));
  auto uni = ta.size() + tb.size() - inter.size();
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < s.size()) lines.emplace_back(s.substr(start));
      break;
    }
    lines.emplace_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

}  // namespace semforge::text
