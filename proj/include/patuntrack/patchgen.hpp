#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "patuntrack/patch_pair.hpp"
#include "patuntrack/stage.hpp"
#include "patuntrack/vtp.hpp"

namespace patuntrack {

struct PatchTypePrediction {
    std::string patch_type = std::string(kUnknownPatch);
    double confidence_freq = 0.0;

    bool operator==(const PatchTypePrediction&) const = default;
};

void to_json(nlohmann::json& j, const PatchTypePrediction& p);

/// Counts of (vul type, patch type) over the IRs predicted so far.
class CooccurrenceTable {
public:
    using Key = std::pair<VulType, std::string>;

    int count(const VulType& v, std::string_view patch_type) const;
    int predicted_ir_count() const { return predicted_ir_count_; }
    const std::map<Key, int>& counts() const { return counts_; }

    /// One more predicted IR with this (vul type, patch type).
    void record(const VulType& v, const std::string& patch_type);
    /// Direct setters for loading and tests. Throw UsageError on negatives.
    void set_count(const VulType& v, const std::string& patch_type, int n);
    void set_predicted_ir_count(int n);

    bool operator==(const CooccurrenceTable&) const = default;

private:
    std::map<Key, int> counts_;
    int predicted_ir_count_ = 0;
};

void to_json(nlohmann::json& j, const CooccurrenceTable& t);
CooccurrenceTable cooccurrence_table_from_json(const nlohmann::json& j);

/// counts[(v, p)] / predicted_ir_count; 0 when the denominator is 0.
double freq(const CooccurrenceTable& table, const VulType& v, std::string_view patch_type);

/// Decodes {"patch_type": "..."} or a bare taxonomy name. Throws DecodeError
/// when the named type is not in the taxonomy.
std::string decode_patch_type(std::string_view reply, const Taxonomy& taxonomy);

/// One typePredict call (stage "type_predict") whose prompt carries the
/// current freq values for the graph's vul types. Falls back to PATCH-UNKNOWN
/// after theta undecodable replies. Does not touch the table; see
/// predict_and_record.
PatchTypePrediction predict_patch_type(const VtpGraph& g, const CooccurrenceTable& table, StageContext& ctx);

/// predict_patch_type, then records the IR under the graph's primary vul type.
PatchTypePrediction predict_and_record(const VtpGraph& g, CooccurrenceTable& table, StageContext& ctx);

/// Node ids dropped by the deterministic selection fallback: non-trigger
/// operations whose description is about loading third-party code.
std::vector<std::string> third_party_node_ids(const VtpGraph& g);

/// One call (stage "select") returning {"node_ids": [...]}; the induced
/// subgraph is returned, with every VulTrigger node re-added when the reply
/// omits it. Uses the third-party fallback when no reply decodes.
VtpGraph select_developer_subgraph(const VtpGraph& g, StageContext& ctx);

struct GenerateOptions {
    bool joint = true;
    int pairs_per_call = 5;
};

struct GenerationResult {
    std::vector<PatchPair> pairs;
    bool shortfall = false;
    int calls = 0;
    /// Number of earlier pairs replaced in place by a revision.
    int revisions = 0;
};

/// Collects k pairs within a budget of theta * ceil(k / pairs_per_call) calls.
/// Joint mode (stage "generate") needs both members per item; an item with
/// "revises": r replaces pair r in place. Without joint, code and patches
/// come from separate calls (stages "generate_code", "generate_patch").
GenerationResult generate_pairs(const VtpGraph& g_sel, const PatchTypePrediction& pred, int k, StageContext& ctx,
                                const GenerateOptions& options = {});

/// One JSONL row: {ir_id, rank, insecure_code, patch, vul_type, patch_type, diff}.
nlohmann::json pair_row(const std::string& ir_id, const PatchPair& pair);

}  // namespace patuntrack
