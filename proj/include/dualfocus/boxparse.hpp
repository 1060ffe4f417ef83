#pragma once

#include <array>
#include <cctype>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dualfocus/error.hpp"
#include "dualfocus/geometry.hpp"

namespace dualfocus {

enum class CoordinateMode { Normalized, Pixel };

constexpr std::string_view to_string(CoordinateMode m) {
  return m == CoordinateMode::Normalized ? "normalized" : "pixel";
}

struct ParseOutcome {
  NormBox box;
  std::size_t span_begin;  // offset of the first parsed number
  std::size_t span_end;    // one past the last parsed number
  CoordinateMode mode;
};

/// Values at or below this are read as fractions; anything larger means pixels.
inline constexpr double kNormalizedCeiling = 1.5;

namespace detail {

struct NumberToken {
  double value;
  std::size_t begin;
  std::size_t end;
};

inline bool is_word_char(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Scans decimal literals (optional sign, optional fraction, optional exponent).
// Numbers glued to letters ("v2", "3rd") are not coordinates.
inline std::vector<NumberToken> scan_numbers(std::string_view text) {
  std::vector<NumberToken> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    const bool starts_number = is_digit(c) || (c == '.' && i + 1 < n && is_digit(text[i + 1]));
    const bool signed_start = (c == '-' || c == '+') && i + 1 < n &&
                              (is_digit(text[i + 1]) ||
                               (text[i + 1] == '.' && i + 2 < n && is_digit(text[i + 2]))) &&
                              (i == 0 || !(is_digit(text[i - 1]) || is_word_char(text[i - 1])));
    if (!starts_number && !signed_start) {
      ++i;
      continue;
    }
    std::size_t j = i;
    if (signed_start) ++j;
    while (j < n && is_digit(text[j])) ++j;
    if (j < n && text[j] == '.') {
      ++j;
      while (j < n && is_digit(text[j])) ++j;
    }
    if (j < n && (text[j] == 'e' || text[j] == 'E')) {
      std::size_t k = j + 1;
      if (k < n && (text[k] == '+' || text[k] == '-')) ++k;
      if (k < n && is_digit(text[k])) {
        while (k < n && is_digit(text[k])) ++k;
        j = k;
      }
    }
    // A trailing '.' is sentence punctuation, not part of the number.
    std::size_t end = j;
    if (end > i && text[end - 1] == '.' && end - 1 > i && is_digit(text[end - 2]) &&
        (end == n || !is_digit(text[end]))) {
      --end;
    }
    const bool glued_before = i > 0 && (is_word_char(text[i - 1]) || is_digit(text[i - 1]) ||
                                        text[i - 1] == '.');
    const bool glued_after = end < n && is_word_char(text[end]);
    if (!glued_before && !glued_after) {
      const std::string literal(text.substr(i, end - i));
      out.push_back({std::strtod(literal.c_str(), nullptr), i, end});
    }
    i = std::max(j, i + 1);
  }
  return out;
}

inline bool is_separator_gap(std::string_view gap) {
  if (gap.empty()) return false;
  int commas = 0;
  for (char c : gap) {
    if (c == ',') {
      if (++commas > 1) return false;
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      return false;
    }
  }
  return true;
}

inline char closer_for(char open) {
  switch (open) {
    case '(': return ')';
    case '[': return ']';
    case '{': return '}';
    default: return '\0';
  }
}

inline bool is_bracketed(std::string_view text, std::size_t begin, std::size_t end) {
  std::size_t l = begin;
  while (l > 0 && std::isspace(static_cast<unsigned char>(text[l - 1]))) --l;
  if (l == 0) return false;
  const char want = closer_for(text[l - 1]);
  if (want == '\0') return false;
  std::size_t r = end;
  while (r < text.size() && std::isspace(static_cast<unsigned char>(text[r]))) ++r;
  return r < text.size() && text[r] == want;
}

}  // namespace detail

/// Extracts the first box quadruple from free-form model output.
///
/// A candidate is a maximal run of numbers separated by whitespace and at
/// most one comma, optionally wrapped in (), [] or {}. Runs shorter than four
/// are skipped; a bracketed run longer than four is skipped; an unbracketed
/// run longer than four is AmbiguousCount. When all four values are <= 1.5
/// they are read as fractions, otherwise as pixels scaled by the image
/// dimensions. The result is passed through clamp_to_unit.
inline ParseOutcome parse_box(std::string_view text, int image_w, int image_h) {
  if (image_w < 1 || image_h < 1) {
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be >= 1");
  }
  const auto numbers = detail::scan_numbers(text);
  std::size_t i = 0;
  while (i < numbers.size()) {
    std::size_t j = i + 1;
    while (j < numbers.size() &&
           detail::is_separator_gap(
               text.substr(numbers[j - 1].end, numbers[j].begin - numbers[j - 1].end))) {
      ++j;
    }
    const std::size_t run = j - i;
    const std::size_t begin = numbers[i].begin;
    const std::size_t end = numbers[j - 1].end;
    if (run == 4) {
      std::array<double, 4> v{numbers[i].value, numbers[i + 1].value, numbers[i + 2].value,
                              numbers[i + 3].value};
      CoordinateMode mode = CoordinateMode::Normalized;
      for (double x : v) {
        if (x > kNormalizedCeiling) mode = CoordinateMode::Pixel;
      }
      if (mode == CoordinateMode::Pixel) {
        v[0] /= image_w;
        v[2] /= image_w;
        v[1] /= image_h;
        v[3] /= image_h;
      }
      return {clamp_to_unit(v), begin, end, mode};
    }
    if (run > 4 && !detail::is_bracketed(text, begin, end)) {
      throw Error(ErrorCode::AmbiguousCount,
                  std::to_string(run) + " undelimited numbers: " + std::string(text.substr(begin, end - begin)));
    }
    i = j;
  }
  throw Error(ErrorCode::NoCoordinates, "no run of four numbers in model output");
}

}  // namespace dualfocus
