#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace patuntrack {

/// Lines of a unified diff, each normalized with normalize_line. Lines that
/// normalize to nothing are dropped.
struct GroundTruthDiff {
    std::vector<std::string> minus_lines;
    std::vector<std::string> plus_lines;
    std::vector<std::string> context_lines;

    bool operator==(const GroundTruthDiff&) const = default;
    bool empty() const { return minus_lines.empty() && plus_lines.empty() && context_lines.empty(); }
};

/// Trim plus whitespace-run collapse.
std::string normalize_line(std::string_view line);

/// Throws ParseError (1-based line number) on lines that are neither diff
/// content nor recognized headers.
GroundTruthDiff parse_unified_diff(std::string_view diff);

/// Heuristic: has a hunk header or a ---/+++ file header pair.
bool looks_like_unified_diff(std::string_view text);

/// Line-level LCS diff from `before` to `after` with `context` lines of
/// context around each change. Empty string when the inputs have equal lines.
std::string render_unified_diff(std::string_view before, std::string_view after, int context = 3,
                                std::string_view before_label = "a/code", std::string_view after_label = "b/code");

/// The ground truth for a labeled pair: `patch` is used as-is when it already
/// is a unified diff, otherwise it is diffed against `insecure_code`.
GroundTruthDiff ground_truth_diff(std::string_view insecure_code, std::string_view patch);

}  // namespace patuntrack
