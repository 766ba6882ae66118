#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace patuntrack::text {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Trims and collapses every internal whitespace run to a single space.
std::string collapse_whitespace(std::string_view s);

/// Splits on '\n' (a trailing '\r' is dropped from each line).
std::vector<std::string> split_lines(std::string_view s);

/// Splits into lines, normalizes each with collapse_whitespace and drops
/// lines that end up empty.
std::vector<std::string> normalized_lines(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool contains_ci(std::string_view haystack, std::string_view needle);
bool starts_with(std::string_view s, std::string_view prefix);

/// Lower-cased alphanumeric tokens with stopwords and 1-char tokens removed,
/// in order of appearance (duplicates kept).
std::vector<std::string> keyword_tokens(std::string_view s);

}  // namespace patuntrack::text
