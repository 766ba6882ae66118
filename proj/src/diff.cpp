#include "patuntrack/diff.hpp"

#include <algorithm>
#include <charconv>
#include <optional>

#include "patuntrack/error.hpp"
#include "patuntrack/text.hpp"

namespace patuntrack {

std::string normalize_line(std::string_view line) { return text::collapse_whitespace(line); }

namespace {

struct HunkHeader {
    int old_count = 0;
    int new_count = 0;
};

int parse_count(std::string_view range) {
    // "-12,5" / "+3" / "-0,0"
    const auto comma = range.find(',');
    if (comma == std::string_view::npos) return 1;
    int n = 0;
    const auto part = range.substr(comma + 1);
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), n);
    if (ec != std::errc{} || ptr != part.data() + part.size()) return -1;
    return n;
}

std::optional<HunkHeader> parse_hunk_header(std::string_view line) {
    if (!text::starts_with(line, "@@ ")) return std::nullopt;
    const auto close = line.find(" @@", 3);
    if (close == std::string_view::npos) return std::nullopt;
    const auto ranges = line.substr(3, close - 3);
    const auto space = ranges.find(' ');
    if (space == std::string_view::npos) return std::nullopt;
    const auto old_range = ranges.substr(0, space);
    const auto new_range = ranges.substr(space + 1);
    if (old_range.empty() || old_range[0] != '-' || new_range.empty() || new_range[0] != '+') return std::nullopt;
    HunkHeader h{parse_count(old_range), parse_count(new_range)};
    if (h.old_count < 0 || h.new_count < 0) return std::nullopt;
    return h;
}

void push(std::vector<std::string>& out, std::string_view content) {
    auto n = normalize_line(content);
    if (!n.empty()) out.push_back(std::move(n));
}

bool is_meta_header(std::string_view line) {
    static constexpr std::string_view kPrefixes[] = {"diff ",          "index ",           "new file mode",
                                                     "deleted file mode", "old mode",      "new mode",
                                                     "similarity index", "rename from",     "rename to",
                                                     "Binary files "};
    return std::any_of(std::begin(kPrefixes), std::end(kPrefixes),
                       [&](std::string_view p) { return text::starts_with(line, p); });
}

}  // namespace

GroundTruthDiff parse_unified_diff(std::string_view diff) {
    GroundTruthDiff out;
    const auto lines = text::split_lines(diff);
    int old_left = 0, new_left = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        const std::size_t lineno = i + 1;
        if (old_left > 0 || new_left > 0) {
            if (line.empty() || line[0] == ' ') {
                push(out.context_lines, line.empty() ? std::string_view{} : std::string_view(line).substr(1));
                --old_left;
                --new_left;
            } else if (line[0] == '-') {
                push(out.minus_lines, std::string_view(line).substr(1));
                --old_left;
            } else if (line[0] == '+') {
                push(out.plus_lines, std::string_view(line).substr(1));
                --new_left;
            } else if (line[0] == '\\') {
                continue;
            } else {
                throw ParseError("line " + std::to_string(lineno) + ": hunk ended early", lineno);
            }
            if (old_left < 0 || new_left < 0) {
                throw ParseError("line " + std::to_string(lineno) + ": hunk longer than its header", lineno);
            }
            continue;
        }
        if (text::starts_with(line, "@@")) {
            auto h = parse_hunk_header(line);
            if (!h) throw ParseError("line " + std::to_string(lineno) + ": malformed hunk header", lineno);
            old_left = h->old_count;
            new_left = h->new_count;
            continue;
        }
        if (is_meta_header(line)) continue;
        if (text::starts_with(line, "--- ") && i + 1 < lines.size() && text::starts_with(lines[i + 1], "+++ ")) {
            ++i;
            continue;
        }
        if (line.empty()) continue;
        switch (line[0]) {
            case ' ': push(out.context_lines, std::string_view(line).substr(1)); break;
            case '-': push(out.minus_lines, std::string_view(line).substr(1)); break;
            case '+': push(out.plus_lines, std::string_view(line).substr(1)); break;
            case '\\': break;
            default:
                throw ParseError("line " + std::to_string(lineno) + ": not a unified diff line", lineno);
        }
    }
    return out;
}

bool looks_like_unified_diff(std::string_view s) {
    const auto lines = text::split_lines(s);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (parse_hunk_header(lines[i])) return true;
        if (text::starts_with(lines[i], "--- ") && i + 1 < lines.size() && text::starts_with(lines[i + 1], "+++ ")) {
            return true;
        }
    }
    return false;
}

namespace {

enum class Op { keep, del, add };

struct DiffLine {
    Op op;
    std::string text;
};

std::vector<DiffLine> line_diff(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<int>> lcs(n + 1, std::vector<int>(m + 1, 0));
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = m; j-- > 0;) {
            lcs[i][j] = a[i] == b[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
        }
    }
    std::vector<DiffLine> out;
    std::size_t i = 0, j = 0;
    while (i < n || j < m) {
        if (i < n && j < m && a[i] == b[j]) {
            out.push_back({Op::keep, a[i]});
            ++i;
            ++j;
        } else if (j < m && (i == n || lcs[i][j + 1] > lcs[i + 1][j])) {
            out.push_back({Op::add, b[j++]});
        } else {
            out.push_back({Op::del, a[i++]});
        }
    }
    return out;
}

std::string range(std::size_t start, std::size_t count) {
    // Unified diff convention: an empty range names the line before it.
    const std::size_t shown = count == 0 ? start : start + 1;
    return std::to_string(shown) + "," + std::to_string(count);
}

}  // namespace

std::string render_unified_diff(std::string_view before, std::string_view after, int context,
                                std::string_view before_label, std::string_view after_label) {
    if (context < 0) throw UsageError("context must be non-negative");
    auto a = text::split_lines(before);
    auto b = text::split_lines(after);
    if (!a.empty() && a.back().empty()) a.pop_back();
    if (!b.empty() && b.back().empty()) b.pop_back();
    const auto ops = line_diff(a, b);

    std::vector<std::size_t> changes;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        if (ops[i].op != Op::keep) changes.push_back(i);
    }
    if (changes.empty()) return {};

    std::string out = "--- " + std::string(before_label) + "\n+++ " + std::string(after_label) + "\n";
    const auto ctx = static_cast<std::size_t>(context);
    std::size_t c = 0;
    while (c < changes.size()) {
        const std::size_t start = changes[c] > ctx ? changes[c] - ctx : 0;
        std::size_t last = changes[c];
        while (c + 1 < changes.size() && changes[c + 1] <= last + 2 * ctx + 1) last = changes[++c];
        ++c;
        const std::size_t end = std::min(ops.size(), last + ctx + 1);

        std::size_t old_start = 0, new_start = 0;
        for (std::size_t i = 0; i < start; ++i) {
            if (ops[i].op != Op::add) ++old_start;
            if (ops[i].op != Op::del) ++new_start;
        }
        std::size_t old_count = 0, new_count = 0;
        std::string body;
        for (std::size_t i = start; i < end; ++i) {
            switch (ops[i].op) {
                case Op::keep:
                    body += " " + ops[i].text + "\n";
                    ++old_count;
                    ++new_count;
                    break;
                case Op::del:
                    body += "-" + ops[i].text + "\n";
                    ++old_count;
                    break;
                case Op::add:
                    body += "+" + ops[i].text + "\n";
                    ++new_count;
                    break;
            }
        }
        out += "@@ -" + range(old_start, old_count) + " +" + range(new_start, new_count) + " @@\n" + body;
    }
    return out;
}

GroundTruthDiff ground_truth_diff(std::string_view insecure_code, std::string_view patch) {
    if (looks_like_unified_diff(patch)) return parse_unified_diff(patch);
    return parse_unified_diff(render_unified_diff(insecure_code, patch));
}

}  // namespace patuntrack
