#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patuntrack/dataset.hpp"
#include "patuntrack/distance.hpp"
#include "patuntrack/knowledge.hpp"
#include "patuntrack/patch_pair.hpp"
#include "patuntrack/prompt.hpp"
#include "patuntrack/stage.hpp"
#include "patuntrack/vtp.hpp"

namespace patuntrack {

enum class ScoreTask { extract_complete, vulcok, generate };

std::string to_string(ScoreTask t);

/// Lower is better. total is the sum of parts.
struct ScoreReport {
    ScoreTask task = ScoreTask::extract_complete;
    double total = 0;
    std::map<std::string, double> parts;
    DistanceMode mode = DistanceMode::raw;
};

void to_json(nlohmann::json& j, const ScoreReport& r);

struct TrainingSample {
    IssueReport ir;
    std::string gt_vtp_serialized;
    std::string gt_insecure_code;
    std::string gt_patch;
};

/// Throws UsageError when the IR lacks any of the three labels.
TrainingSample training_sample(const IssueReport& ir);

struct ScoreConfig {
    DistanceMode mode = DistanceMode::raw;
    /// Charged per expected item when retrieval comes back empty, and per
    /// member when a generation produced no pair.
    double penalty = 100.0;
    std::size_t expected_items = 1;
};

ScoreReport score_extract_complete(const TrainingSample& sample, const VtpGraph& predicted_vtp,
                                   const std::vector<std::string>& hidden, const std::vector<std::string>& predictions,
                                   const ScoreConfig& cfg = {});

ScoreReport score_vulcok(const TrainingSample& sample, const std::vector<GoldenKnowledgeItem>& retrieved,
                         const ScoreConfig& cfg = {});

ScoreReport score_generate(const TrainingSample& sample, const PatchPair& pair, const ScoreConfig& cfg = {});

/// The best (minimum total) of score_generate over the candidates.
ScoreReport score_generate_topk(const TrainingSample& sample, const std::vector<PatchPair>& pairs,
                                const ScoreConfig& cfg = {});

/// The four templates compared in every epoch.
enum class Candidate { current, insert, remove, modify };

inline constexpr Candidate kAllCandidates[] = {Candidate::current, Candidate::insert, Candidate::remove,
                                               Candidate::modify};

std::string to_string(Candidate c);

/// Total per candidate; nullopt for a candidate that could not be built.
using CandidateScores = std::array<std::optional<double>, 4>;

inline std::optional<double>& at(CandidateScores& s, Candidate c) { return s[static_cast<std::size_t>(c)]; }
inline const std::optional<double>& at(const CandidateScores& s, Candidate c) {
    return s[static_cast<std::size_t>(c)];
}

/// Argmin; ties go to current, then insert, modify, delete. Throws UsageError
/// when current has no score.
Candidate select_candidate(const CandidateScores& scores);

/// Scores one template on one sample. Throwing marks the sample skipped.
using SampleScorer = std::function<ScoreReport(const PromptTemplate&, const TrainingSample&)>;

struct WorstSample {
    std::size_t index = 0;
    VulType vul_type;
    ScoreReport report;
};

/// Supplies the focus entry a mutation inserts, deletes or rewrites;
/// nullopt leaves that candidate out of the epoch.
using CandidateSource =
    std::function<std::optional<FocusEntry>(MutationAction, const PromptTemplate&, const WorstSample&)>;

struct SkipRecord {
    std::size_t sample_index = 0;
    std::string ir_id;
    std::string candidate;
    std::string reason;
};

struct EpochRecord {
    int epoch = 0;
    TemplateId template_id = TemplateId::extract;
    CandidateScores scores;
    Candidate adopted = Candidate::current;
    int adopted_version = 0;
    double best_score = 0;
    std::vector<SkipRecord> skipped;
    Diagnostics notes;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct OptimizeOptions {
    int epochs = 10;
    /// Stop after this many consecutive epochs without improvement (0 = never).
    int patience = 3;
    /// Added to a template's total for each sample its scorer skipped.
    double skip_penalty = 100.0;
};

struct OptimizeResult {
    PromptTemplate best;
    std::vector<EpochRecord> history;
};

/// Each epoch scores the current template and its insert/delete/modify
/// variants over all samples and adopts the lowest total. Scores are cached by
/// template content, so an unchanged template is never rescored. Throws
/// OptimizerError when every sample is skipped for the current template.
OptimizeResult optimize_prompt(const PromptTemplate& t, const std::vector<TrainingSample>& samples,
                               const SampleScorer& scorer, const CandidateSource& candidate_source,
                               const OptimizeOptions& options = {},
                               const std::function<void(const EpochRecord&, const PromptTemplate&)>& on_epoch = {});

/// Default source: the worst sample's vul type, with the focus text written
/// by one gateway call (stage "focus", reply {"focus": "..."}). Deletion
/// needs no call.
CandidateSource llm_candidate_source(Gateway& gateway, const Taxonomy& taxonomy, int theta);

}  // namespace patuntrack
