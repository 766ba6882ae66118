#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace patuntrack {

/// How score functions turn two texts into a distance.
enum class DistanceMode { raw, normalized };

std::string to_string(DistanceMode mode);
DistanceMode distance_mode_from_string(std::string_view s);

/// Classic Levenshtein distance over bytes (unit insert/delete/substitute).
std::size_t levenshtein(std::string_view a, std::string_view b);

/// levenshtein / max(|a|, |b|), with 0/0 defined as 0. Always in [0, 1].
double normalized_levenshtein(std::string_view a, std::string_view b);

/// 1 - normalized_levenshtein.
double edit_similarity(std::string_view a, std::string_view b);

double text_distance(std::string_view a, std::string_view b, DistanceMode mode);

}  // namespace patuntrack
