#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "patuntrack/dataset.hpp"
#include "patuntrack/diagnostic.hpp"
#include "patuntrack/diff.hpp"
#include "patuntrack/distance.hpp"
#include "patuntrack/patch_pair.hpp"
#include "patuntrack/verdict.hpp"

namespace patuntrack {

/// |multiset intersection of normalized lines| / |target|. Both empty gives 1,
/// an empty target with generated lines gives 0.
double match_rate(const std::vector<std::string>& generated, const std::vector<std::string>& target);

struct MatchScores {
    double line = 0;
    double trig = 0;
    double fix = 0;

    bool operator==(const MatchScores&) const = default;
};

/// Lines a candidate's patch adds relative to its insecure code (or the "+"
/// lines directly when the patch is itself a unified diff).
std::vector<std::string> added_lines(const PatchPair& pair);

/// Scores of a single candidate. MatchLine targets every line of
/// full_gt_code when given, else the minus and context lines of the diff.
MatchScores candidate_match(const PatchPair& pair, const GroundTruthDiff& gt,
                            const std::optional<std::string>& full_gt_code = std::nullopt);

/// Per-metric maximum over the candidates; all zero for an empty list.
MatchScores match_metrics(const std::vector<PatchPair>& candidates, const GroundTruthDiff& gt,
                          const std::optional<std::string>& full_gt_code = std::nullopt);

struct TrigFix {
    double trig = 0;
    double fix = 0;
};

/// Share of IRs with a triggered (resp. triggered and fixed) candidate among
/// ranks 1..k. Zero for an empty input.
TrigFix trig_fix_at_k(const std::vector<std::vector<CandidateVerdict>>& verdicts, int k);

/// (cwe accuracy + error-type accuracy) / 2. Throws UsageError on empty or
/// misaligned input.
double acc_type(const std::vector<VulType>& predicted, const std::vector<VulType>& gt);
double acc_patch_type(const std::vector<std::string>& predicted, const std::vector<std::string>& gt);

enum class IterBucket { iter_1_3, iter_4_7, iter_8_plus };

inline constexpr IterBucket kAllBuckets[] = {IterBucket::iter_1_3, IterBucket::iter_4_7, IterBucket::iter_8_plus};

std::string to_string(IterBucket b);
/// 1 <= it < 4, 4 <= it < 8, it >= 8. Counts below 1 (IRs that failed
/// before the loop ran) land in the first bucket.
IterBucket bucket_for(int iterations);

enum class VerdictProviderKind { dataset, threshold };

std::string to_string(VerdictProviderKind k);
VerdictProviderKind verdict_provider_from_string(std::string_view s);

/// Source of triggered/fixed bits for generated candidates.
class VerdictProvider {
public:
    virtual ~VerdictProvider() = default;
    virtual std::string name() const = 0;
    /// nullopt when the provider has no information for this IR.
    virtual std::optional<std::vector<CandidateVerdict>> verdicts(const IssueReport& ir,
                                                                  const std::vector<PatchPair>& pairs) const = 0;
};

/// Uses the verdicts stored with the IR.
class DatasetVerdicts : public VerdictProvider {
public:
    std::string name() const override { return "dataset"; }
    std::optional<std::vector<CandidateVerdict>> verdicts(const IssueReport& ir,
                                                          const std::vector<PatchPair>& pairs) const override;
};

/// MatchTrig >= tau marks a candidate triggered; additionally MatchFix >= tau
/// marks it fixed. Needs ground-truth code labels.
class ThresholdVerdicts : public VerdictProvider {
public:
    explicit ThresholdVerdicts(double tau);
    std::string name() const override { return "threshold"; }
    std::optional<std::vector<CandidateVerdict>> verdicts(const IssueReport& ir,
                                                          const std::vector<PatchPair>& pairs) const override;

private:
    double tau_;
};

std::unique_ptr<VerdictProvider> make_verdict_provider(VerdictProviderKind kind, double tau);

/// Everything evalkit needs about one processed IR.
struct IrEvaluation {
    std::string ir_id;
    int iterations = 0;
    bool failed = false;
    /// Present when the IR carries code labels.
    std::optional<MatchScores> match;
    std::optional<std::vector<CandidateVerdict>> verdicts;
    std::optional<VulType> predicted_vul_type;
    std::optional<VulType> gt_vul_type;
    std::optional<std::string> predicted_patch_type;
    std::optional<std::string> gt_patch_type;
};

struct EvaluateOptions {
    bool full_gt = false;
};

/// Builds the evaluation of one IR from its generated candidates.
IrEvaluation evaluate_ir(const IssueReport& ir, const std::vector<PatchPair>& pairs, int iterations, bool failed,
                         const std::optional<VulType>& predicted_vul_type,
                         const std::optional<std::string>& predicted_patch_type, const VerdictProvider& provider,
                         const EvaluateOptions& options = {});

struct MetricBlock {
    std::size_t ir_count = 0;
    std::size_t matched_ir_count = 0;
    std::size_t verdict_ir_count = 0;
    std::optional<double> match_line;
    std::optional<double> match_trig;
    std::optional<double> match_fix;
    std::optional<double> acc_type;
    std::optional<double> acc_patch_type;
    std::map<int, double> trig_at;
    std::map<int, double> fix_at;
};

MetricBlock aggregate(const std::vector<IrEvaluation>& evaluations, const std::vector<int>& ks);

/// Partitions by bucket_for(iterations); every bucket is present.
std::map<IterBucket, std::vector<IrEvaluation>> bucket_by_iterations(const std::vector<IrEvaluation>& evaluations);

struct ReportHeader {
    std::vector<std::string> ablations;
    int k = 10;
    std::vector<int> ks{1, 5, 10};
    std::string verdict_provider = "threshold";
    double tau = 0.8;
    DistanceMode distance_mode = DistanceMode::raw;
    bool full_gt = false;
};

struct EvalReport {
    ReportHeader header;
    std::size_t failed_count = 0;
    MetricBlock overall;
    std::map<IterBucket, MetricBlock> buckets;
    std::vector<IrEvaluation> per_ir;
    Diagnostics warnings;
};

/// Aggregates per-IR evaluations into a report. Per-IR rows are sorted by id
/// so the report does not depend on processing order.
EvalReport build_report(ReportHeader header, std::vector<IrEvaluation> evaluations);

void to_json(nlohmann::json& j, const MatchScores& m);
void to_json(nlohmann::json& j, const IrEvaluation& e);
void to_json(nlohmann::json& j, const MetricBlock& b);
void to_json(nlohmann::json& j, const EvalReport& r);

/// Aligned plain-text rendering of the overall and per-bucket blocks.
std::string render_report_table(const EvalReport& r);
/// Same, from the JSON form written by `eval`.
std::string render_report_table(const nlohmann::json& report);

}  // namespace patuntrack
