#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patuntrack/knowledge.hpp"
#include "patuntrack/stage.hpp"
#include "patuntrack/vtp.hpp"

namespace patuntrack {

/// Deterministic retrieval queries: the node's CWE id, the joined keywords of
/// its description, then adjacent keyword bigrams. At most `max_queries`.
std::vector<std::string> fallback_queries(const OpNode& node, std::size_t max_queries = 5);

struct QueryResult {
    std::vector<std::string> queries;
    bool used_fallback = false;
};

/// With via_llm, one gateway call (stage "queries") returning
/// {"queries": [...]}; falls back to fallback_queries when that fails.
QueryResult generate_queries(const OpNode& node, bool via_llm, StageContext* ctx, std::size_t max_queries = 5);

struct BfsResult {
    std::vector<std::string> order;
    /// Nodes appended after the traversal because no root reaches them.
    std::vector<std::string> unreachable;
};

/// Multi-source BFS. Roots are nodes without incoming edges that have at least
/// one outgoing edge (every in-degree-0 node when no such node exists), in
/// lexicographic order; neighbors are visited in lexicographic order.
BfsResult bfs_order(const VtpGraph& g);

enum class Verdict { clean, type_hallucination, desc_hallucination };

std::string to_string(Verdict v);
/// Accepts {"verdict": "..."} or a reply naming exactly one verdict.
Verdict decode_verdict(std::string_view reply);

struct DetectOutcome {
    Verdict verdict = Verdict::clean;
    /// True when the reply never decoded and the node was treated as clean.
    bool fail_open = false;
};

DetectOutcome detect_hallucination(const OpNode& node, const std::vector<OpNode>& neighbors,
                                   const std::vector<GoldenKnowledgeItem>& kb_hits, StageContext& ctx);

enum class CorrectionKind { none, type_corrected, desc_corrected };

std::string to_string(CorrectionKind k);

struct CorrectionRecord {
    std::string node_id;
    CorrectionKind kind = CorrectionKind::none;
    std::string before;
    std::string after;
    std::vector<std::string> evidence_kb_ids;
    std::string note;

    bool operator==(const CorrectionRecord&) const = default;
};

void to_json(nlohmann::json& j, const CorrectionRecord& r);

struct CorrectionResult {
    VtpGraph graph;
    CorrectionRecord record;
    /// Type corrections that the same reply applied to connected nodes.
    std::vector<CorrectionRecord> connected;

    bool mutated() const { return record.kind != CorrectionKind::none || !connected.empty(); }
};

/// Applies one halCorrect reply. Type corrections must name a CWE found among
/// kb_hits; description corrections may replace the node's outgoing edges. A
/// correction that leaves the graph invalid, lacks evidence, or changes
/// nothing is rejected: the input graph is returned with a kind=none record.
CorrectionResult correct_node(const VtpGraph& g, const std::string& node_id, Verdict verdict,
                              const std::vector<GoldenKnowledgeItem>& kb_hits, StageContext& ctx);

struct VulcokOptions {
    bool use_kb = true;
    /// When false, type_hallucination verdicts are logged but never applied.
    bool correct_types = true;
    bool llm_queries = false;
    std::size_t top_r = 3;
    std::size_t max_queries = 5;
};

struct VulcokResult {
    VtpGraph graph;
    std::vector<CorrectionRecord> records;
    int iterations = 0;
    bool completed = false;
    std::optional<std::string> error;
    /// Every distinct knowledge item retrieved during the run, first-seen order.
    std::vector<GoldenKnowledgeItem> retrieved;
};

/// First pass visits every node in BFS order; each later pass revisits only the
/// nodes corrected in the previous pass. At most ctx.theta passes.
VulcokResult run_vulcok(const VtpGraph& g, const KnowledgeStore& store, StageContext& ctx,
                        const VulcokOptions& options = {});

}  // namespace patuntrack
