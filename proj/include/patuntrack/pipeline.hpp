#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "patuntrack/autoprompt.hpp"
#include "patuntrack/dataset.hpp"
#include "patuntrack/evalkit.hpp"
#include "patuntrack/knowledge.hpp"
#include "patuntrack/llm.hpp"
#include "patuntrack/patchgen.hpp"
#include "patuntrack/prompt.hpp"
#include "patuntrack/stage.hpp"
#include "patuntrack/vulcok.hpp"

namespace patuntrack {

enum class Ablation {
    no_vul_type,
    no_completer,
    no_extractor,
    no_vulcok,
    cok_plain,
    no_patch_type,
    no_joint,
    no_focus_list,
    no_autoprompt,
    icl_stub,
};

inline constexpr Ablation kAllAblations[] = {
    Ablation::no_vul_type,   Ablation::no_completer, Ablation::no_extractor,  Ablation::no_vulcok,
    Ablation::cok_plain,     Ablation::no_patch_type, Ablation::no_joint,     Ablation::no_focus_list,
    Ablation::no_autoprompt, Ablation::icl_stub,
};

std::string to_string(Ablation a);
Ablation ablation_from_string(std::string_view s);

struct PipelineConfig {
    BackendConfig backend;
    int theta = 10;
    int k = 10;
    /// Per-purpose RNG seeds: "split", "mask".
    std::map<std::string, std::uint64_t> seeds;
    DistanceMode distance_mode = DistanceMode::raw;
    /// "error_types" / "patch_types" -> file holding a JSON list of names.
    std::map<std::string, std::string> taxonomies;
    std::set<Ablation> ablations;
    VerdictProviderKind verdict_provider = VerdictProviderKind::threshold;
    double tau = 0.8;

    int concurrency = 1;
    std::size_t top_r = 3;
    double penalty = 100.0;
    double mask_fraction = 0.2;
    int epochs = 10;
    int patience = 3;
    int pairs_per_call = 5;
    bool llm_queries = false;
    bool full_gt = false;
    double split_ratio = 0.8;
    double temperature = 0.0;
    double generation_temperature = 0.7;
    int max_tokens = 2048;
    /// Wall-clock stage timings make records non-reproducible; off by default.
    bool record_timings = false;

    bool has(Ablation a) const { return ablations.count(a) > 0; }
    std::uint64_t seed(const std::string& purpose) const;
    std::vector<std::string> ablation_names() const;
    /// Throws UsageError on out-of-range values.
    void check() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
/// Flat keys as written by to_json; unknown keys are rejected.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);

/// Taxonomy::defaults() overridden by the configured files.
Taxonomy load_taxonomy(const PipelineConfig& cfg);

/// Thrown by a pipeline stage; run_ir records the stage name.
class StageFailure : public Error {
public:
    StageFailure(std::string stage, const std::string& message) : Error(message), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

struct VtpOutcome {
    VtpGraph graph;
    int iterations = 0;
    bool completed = false;
};

/// Completion reply nodes replace same-id nodes (keeping known fields the
/// reply leaves blank) or are appended; edges are unioned.
VtpGraph merge_completion(const VtpGraph& g, const VtpGraph& additions);

/// Extraction, then the extract<->complete loop under the theta cap. Each
/// iteration checks completeness and, when something is missing, makes one
/// complete call. Throws StageFailure("extract") when no extraction decodes.
VtpOutcome generate_vtp(StageContext& ctx, const PipelineConfig& cfg);

struct RunRecord {
    std::string ir_id;
    std::string status = "ok";
    std::optional<std::string> failed_stage;
    std::optional<std::string> error;
    std::string vtp_before;
    std::string vtp_after;
    std::optional<VtpGraph> graph;
    int iterations = 0;
    bool vtp_completed = false;
    int vulcok_iterations = 0;
    std::vector<CorrectionRecord> corrections;
    std::optional<PatchTypePrediction> prediction;
    std::vector<PatchPair> pairs;
    bool shortfall = false;
    std::map<std::string, int> gateway_calls;
    std::size_t focus_entries_used = 0;
    Diagnostics warnings;
    std::map<std::string, double> timings_ms;

    bool failed() const { return status != "ok"; }
};

void to_json(nlohmann::json& j, const RunRecord& r);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Shared, read-only inputs of a pipeline run.
struct PipelineDeps {
    Gateway& gateway;
    const TemplateSet& templates;
    const Taxonomy& taxonomy;
    const KnowledgeStore& store;
};

/// Produces the patch-type prediction for a graph; lets run_corpus order
/// co-occurrence table updates.
using Predictor = std::function<PatchTypePrediction(const VtpGraph&, StageContext&)>;

StageContext make_context(const PipelineDeps& deps, const IssueReport& ir, const PipelineConfig& cfg);

/// generate_vtp -> run_vulcok -> predict -> select + generate. A failing
/// stage is recorded and the later stages are skipped.
RunRecord run_ir(const IssueReport& ir, const PipelineConfig& cfg, const PipelineDeps& deps, const Predictor& predict);

/// Convenience overload that predicts with and records into `table` directly.
RunRecord run_ir(const IssueReport& ir, const PipelineConfig& cfg, const PipelineDeps& deps, CooccurrenceTable& table);

struct CorpusRun {
    std::vector<RunRecord> records;
    EvalReport report;
    CooccurrenceTable table;
};

ReportHeader report_header(const PipelineConfig& cfg);

/// Evaluates records against the IRs they came from (matched by id).
EvalReport evaluate_records(const std::vector<RunRecord>& records, const std::vector<IssueReport>& irs,
                            const PipelineConfig& cfg);

/// Runs every IR in `eval_set` (in order) with up to cfg.concurrency workers.
/// Table updates happen in eval_set order whatever the concurrency, so the
/// output is identical for any worker count.
CorpusRun run_corpus(const std::vector<IssueReport>& eval_set, const PipelineConfig& cfg, const PipelineDeps& deps,
                     CooccurrenceTable table = {});

struct OptimizeAllResult {
    TemplateSet templates;
    std::map<TemplateId, std::vector<EpochRecord>> history;
    Diagnostics warnings;
};

/// Ground-truth VTP for a sample that lacks one: one extraction over the
/// ground-truth code (stage "bootstrap"). The result is unverified.
std::optional<std::string> bootstrap_gt_vtp(const IssueReport& ir, const PipelineDeps& deps,
                                            const PipelineConfig& cfg);

/// The scorer optimize_all uses for template `id`.
SampleScorer stage_scorer(TemplateId id, const TemplateSet& base, const PipelineConfig& cfg,
                          const PipelineDeps& deps);

/// Optimizes the six templates in pipeline order, each run seeing the
/// templates adopted before it. no_autoprompt returns `start` unchanged;
/// icl_stub inserts one fixed exemplar focus entry per sample vul type
/// instead of searching. `on_epoch` sees every epoch as it completes.
OptimizeAllResult optimize_all(const std::vector<IssueReport>& prompt_set, const PipelineConfig& cfg,
                               const PipelineDeps& deps,
                               const std::function<void(const EpochRecord&, const PromptTemplate&)>& on_epoch = {});

}  // namespace patuntrack
