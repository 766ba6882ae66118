#include "patuntrack/distance.hpp"

#include <algorithm>
#include <vector>

#include "patuntrack/error.hpp"

namespace patuntrack {

std::string to_string(DistanceMode mode) {
    return mode == DistanceMode::raw ? "raw" : "normalized";
}

DistanceMode distance_mode_from_string(std::string_view s) {
    if (s == "raw") return DistanceMode::raw;
    if (s == "normalized") return DistanceMode::normalized;
    throw UsageError("unknown distance mode: " + std::string(s));
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    // Keep the row over the shorter string.
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;

    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diagonal = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t above = row[j];
            const std::size_t substitute = diagonal + (a[i - 1] == b[j - 1] ? 0 : 1);
            row[j] = std::min({above + 1, row[j - 1] + 1, substitute});
            diagonal = above;
        }
    }
    return row[b.size()];
}

double normalized_levenshtein(std::string_view a, std::string_view b) {
    const std::size_t longest = std::max(a.size(), b.size());
    if (longest == 0) return 0.0;
    return static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

double edit_similarity(std::string_view a, std::string_view b) {
    return 1.0 - normalized_levenshtein(a, b);
}

double text_distance(std::string_view a, std::string_view b, DistanceMode mode) {
    return mode == DistanceMode::raw ? static_cast<double>(levenshtein(a, b))
                                     : normalized_levenshtein(a, b);
}

}  // namespace patuntrack
