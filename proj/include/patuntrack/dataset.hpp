#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patuntrack/diagnostic.hpp"
#include "patuntrack/knowledge.hpp"
#include "patuntrack/verdict.hpp"
#include "patuntrack/vtp.hpp"

namespace patuntrack {

enum class SegmentKind { text, code, screenshot_text };

std::string to_string(SegmentKind kind);
SegmentKind segment_kind_from_string(std::string_view s);

struct Segment {
    SegmentKind kind = SegmentKind::text;
    std::string content;

    bool operator==(const Segment&) const = default;
};

struct IssueReport {
    std::string id;
    std::string title;
    std::vector<Segment> body_segments;
    std::optional<std::string> cve_id;
    std::optional<VulType> vul_type_label;
    std::optional<std::string> gt_insecure_code;
    std::optional<std::string> gt_patch;
    std::optional<std::string> gt_vtp_serialized;
    std::optional<std::vector<CandidateVerdict>> verdicts;
    /// Ground-truth patch type, when annotated; only used for patch-type accuracy.
    std::optional<std::string> patch_type_label;

    bool operator==(const IssueReport&) const = default;

    /// Both ground-truth code labels present and nonempty.
    bool label_complete() const;
    /// Title and segments joined with their [CODE]/[SCR] tags.
    std::string tagged_text() const;
};

/// Throws UsageError when an IssueReport invariant is broken.
void validate(const IssueReport& ir);

void to_json(nlohmann::json& j, const IssueReport& ir);
IssueReport issue_report_from_json(const nlohmann::json& j);

/// Reads a JSON Lines corpus; ParseError carries the 1-based line number.
/// Ids must be unique.
std::vector<IssueReport> read_corpus(const std::string& path);
std::vector<IssueReport> parse_corpus(std::string_view jsonl);
void write_corpus(const std::string& path, const std::vector<IssueReport>& corpus);

/// A raw issue as scraped: markup body plus OCR text collected out of band,
/// keyed by image URL.
struct MarkupDocument {
    std::string id;
    std::string title;
    std::string body;
    std::map<std::string, std::string> screenshot_text;
};

using TextHook = std::function<std::string(std::string)>;

struct PreprocessOptions {
    double merge_threshold = 0.9;
    /// Applied to every text segment after whitespace normalization.
    TextHook normalize_text;
};

struct PreprocessResult {
    IssueReport ir;
    Diagnostics warnings;
};

/// Turns an XML-like issue body into ordered text/code/screenshot segments.
/// <code> and <pre> become code segments; <img src> and links to image files
/// become screenshot_text segments when pre-extracted text exists (from
/// `screenshot_text`, else the alt attribute), otherwise they are dropped with
/// a warning. All other tags are stripped. Throws ParseError with a byte offset
/// on malformed markup.
PreprocessResult preprocess_ir(const MarkupDocument& raw, const PreprocessOptions& options = {});

/// Inverse rendering used to re-run preprocessing on processed reports.
MarkupDocument render_markup(const IssueReport& ir);

/// Collapses same-kind segments whose edit similarity is >= threshold, keeping
/// the earlier position and the longer content. Repeats until no such pair is
/// left.
std::vector<Segment> merge_similar_segments(std::vector<Segment> segments, double threshold);

struct DenoiseRules {
    /// Case-insensitive phrases that mark a report as not being a vulnerability.
    std::vector<std::string> negation_phrases;

    static DenoiseRules defaults();
};

struct Removal {
    std::string id;
    std::string reason;  // "negation_rule" | "deprecated_cve"
    std::string detail;

    bool operator==(const Removal&) const = default;
};

struct DenoiseResult {
    std::vector<IssueReport> kept;
    std::vector<Removal> removed;
};

DenoiseResult denoise_corpus(const std::vector<IssueReport>& corpus, const KnowledgeStore& kb,
                             const DenoiseRules& rules = DenoiseRules::defaults());

struct CorpusSplit {
    std::vector<std::string> prompt_set;
    std::vector<std::string> eval_set;
    std::uint64_t seed = 0;
    double ratio = 0.8;
    Diagnostics warnings;
};

void to_json(nlohmann::json& j, const CorpusSplit& s);
CorpusSplit corpus_split_from_json(const nlohmann::json& j);

/// Label-complete reports are shuffled under `seed` (after sorting ids) and the
/// first floor(ratio * eligible) go to the prompt set; everything else is
/// evaluation. Both lists come back sorted by id.
CorpusSplit split_dataset(const std::vector<IssueReport>& corpus, double ratio, std::uint64_t seed);

}  // namespace patuntrack
