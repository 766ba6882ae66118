#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace patuntrack {

inline constexpr std::string_view kUnknownCwe = "CWE-UNKNOWN";
inline constexpr std::string_view kUnknownError = "ERR-UNKNOWN";
inline constexpr std::string_view kUnknownPatch = "PATCH-UNKNOWN";

/// Error-type and patch-type vocabularies. Loaded from configuration; the
/// built-in lists are placeholders with the expected cardinalities (7 / 12).
struct Taxonomy {
    std::vector<std::string> error_types;
    std::vector<std::string> patch_types;

    static Taxonomy defaults();
    /// Reads {"error_types": [...], "patch_types": [...]}; missing keys keep
    /// the defaults.
    static Taxonomy load(const std::string& path);

    bool has_error_type(std::string_view e) const;
    /// Case-insensitive lookup returning the canonical spelling.
    std::optional<std::string> find_patch_type(std::string_view p) const;
};

struct VulType {
    std::string cwe_id = std::string(kUnknownCwe);
    std::string error_type = std::string(kUnknownError);

    bool operator==(const VulType&) const = default;
    auto operator<=>(const VulType&) const = default;

    bool cwe_known() const { return !cwe_id.empty() && cwe_id != kUnknownCwe; }
    bool error_known() const { return !error_type.empty() && error_type != kUnknownError; }
    std::string str() const { return cwe_id + "/" + error_type; }
};

bool is_valid_cwe_id(std::string_view cwe);

/// Coerces invalid components to their sentinels.
VulType normalize_vul_type(VulType v, const Taxonomy& taxonomy);

enum class OpType { SrcLoad, FuncCall, VulDataTransmit, SecDataTransmit, VulTrigger };

std::string to_string(OpType t);
/// Accepts "SrcLoad", "Src-Load", "src_load" and similar spellings.
OpType op_type_from_string(std::string_view s);

struct OpNode {
    std::string node_id;
    OpType op_type = OpType::FuncCall;
    std::string op_desc;
    VulType vul_type;

    bool operator==(const OpNode&) const = default;
};

struct Edge {
    std::string from;
    std::string to;

    bool operator==(const Edge&) const = default;
    auto operator<=>(const Edge&) const = default;
};

struct VtpGraph {
    std::vector<OpNode> nodes;
    std::vector<Edge> edges;

    bool operator==(const VtpGraph&) const = default;

    const OpNode* find(std::string_view id) const;
    OpNode* find(std::string_view id);
    std::vector<std::string> successors(std::string_view id) const;
    std::vector<std::string> predecessors(std::string_view id) const;
    /// The VulTrigger node's vul_type, else the first node's, else unknown.
    VulType primary_vul_type() const;
    std::vector<VulType> vul_types() const;
};

/// Zero-padded node id for extractor output order ("n00", "n01", ...).
std::string node_id_for_index(std::size_t index);

/// Throws StructureError on empty/duplicate node ids, dangling edges,
/// self-loops or cycles.
void validate(const VtpGraph& g);

/// Returns one cycle (closed: first == last) if the graph has one.
std::optional<std::vector<std::string>> find_cycle(const VtpGraph& g);

struct CompletenessReport {
    struct Field {
        std::string node_id;
        std::string field;
        bool operator==(const Field&) const = default;
    };

    bool complete = true;
    std::vector<Field> missing_op_info;
    std::vector<Edge> missing_intermediate;
    std::vector<Edge> missing_transitions;

    std::string describe() const;
};

/// Node id used in CompletenessReport for graph-level deficits.
inline constexpr std::string_view kGraphLevel = "<graph>";

struct CompletenessOptions {
    /// Skip the cwe/error checks (used when vul types are ablated away).
    bool ignore_vul_type = false;
};

CompletenessReport check_completeness(const VtpGraph& g, const CompletenessOptions& options = {});

/// Deterministic text form: one `op_type|cwe|error|op_desc` line per node in
/// topological order (node_id tie-break), then sorted `from->to` lines.
/// Throws StructureError naming a cycle.
std::string canonical_serialize(const VtpGraph& g);

/// Subgraph induced by `keep` (order of g.nodes preserved).
VtpGraph induced_subgraph(const VtpGraph& g, const std::vector<std::string>& keep);

struct MaskedSpan {
    std::string mask_token;
    std::string original_text;
    std::string node_id;
};

struct MaskResult {
    std::string masked_text;
    std::vector<MaskedSpan> hidden;
    std::vector<std::string> skipped_node_ids;
};

struct MaskOptions {
    double fraction = 0.2;
    std::uint64_t seed = 0;
    std::size_t min_anchor_length = 8;
};

MaskResult mask_nodes(const VtpGraph& g, std::string_view ir_text, const MaskOptions& options);

void to_json(nlohmann::json& j, const VulType& v);
void from_json(const nlohmann::json& j, VulType& v);
void to_json(nlohmann::json& j, const OpNode& n);
void to_json(nlohmann::json& j, const VtpGraph& g);
/// Decodes a graph object. Missing node ids are assigned by index and edges may
/// use either ids or integer indices. Does not validate.
VtpGraph graph_from_json(const nlohmann::json& j);

}  // namespace patuntrack
