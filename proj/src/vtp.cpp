#include "patuntrack/vtp.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "patuntrack/error.hpp"
#include "patuntrack/text.hpp"

namespace patuntrack {
namespace {

std::string squash_op_name(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (c == '-' || c == '_' || c == ' ') continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::string escape_field(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

// Kahn's algorithm with a min-heap on node_id. Returns fewer ids than nodes
// when the graph has a cycle.
std::vector<std::string> topological_order(const VtpGraph& g) {
    std::map<std::string, int> indegree;
    std::unordered_map<std::string, std::vector<std::string>> out;
    for (const auto& n : g.nodes) indegree[n.node_id];
    for (const auto& e : g.edges) {
        ++indegree[e.to];
        out[e.from].push_back(e.to);
    }
    std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
    for (const auto& [id, deg] : indegree) {
        if (deg == 0) ready.push(id);
    }
    std::vector<std::string> order;
    while (!ready.empty()) {
        std::string id = ready.top();
        ready.pop();
        order.push_back(id);
        for (const auto& next : out[id]) {
            if (--indegree[next] == 0) ready.push(next);
        }
    }
    return order;
}

}  // namespace

Taxonomy Taxonomy::defaults() {
    return Taxonomy{
        .error_types = {"InputValidationError", "MemoryError", "AccessControlError",
                        "ResourceManagementError", "ConcurrencyError", "ConfigurationError",
                        "LogicError"},
        .patch_types = {"InputValidation", "BoundsCheck", "NullCheck", "ExceptionHandling",
                        "ResourceRelease", "AccessControlCheck", "OutputSanitization",
                        "APIReplacement", "ConfigurationChange", "Synchronization",
                        "LogicCorrection", "DependencyUpgrade"},
    };
}

Taxonomy Taxonomy::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open taxonomy file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("taxonomy " + path + ": " + e.what(), 0);
    }
    Taxonomy t = defaults();
    if (j.contains("error_types")) t.error_types = j.at("error_types").get<std::vector<std::string>>();
    if (j.contains("patch_types")) t.patch_types = j.at("patch_types").get<std::vector<std::string>>();
    return t;
}

bool Taxonomy::has_error_type(std::string_view e) const {
    return std::find(error_types.begin(), error_types.end(), e) != error_types.end();
}

std::optional<std::string> Taxonomy::find_patch_type(std::string_view p) const {
    const std::string wanted = text::to_lower(text::trim(p));
    for (const auto& t : patch_types) {
        if (text::to_lower(t) == wanted) return t;
    }
    return std::nullopt;
}

bool is_valid_cwe_id(std::string_view cwe) {
    if (cwe == kUnknownCwe) return true;
    if (!text::starts_with(cwe, "CWE-") || cwe.size() == 4) return false;
    return std::all_of(cwe.begin() + 4, cwe.end(),
                       [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; });
}

VulType normalize_vul_type(VulType v, const Taxonomy& taxonomy) {
    v.cwe_id = text::trim(v.cwe_id);
    if (!v.cwe_id.empty()) {
        std::string upper = v.cwe_id;
        std::transform(upper.begin(), upper.end(), upper.begin(),
                       [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        v.cwe_id = upper;
    }
    if (!is_valid_cwe_id(v.cwe_id)) v.cwe_id = std::string(kUnknownCwe);
    if (!taxonomy.has_error_type(v.error_type)) v.error_type = std::string(kUnknownError);
    return v;
}

std::string to_string(OpType t) {
    switch (t) {
        case OpType::SrcLoad: return "SrcLoad";
        case OpType::FuncCall: return "FuncCall";
        case OpType::VulDataTransmit: return "VulDataTransmit";
        case OpType::SecDataTransmit: return "SecDataTransmit";
        case OpType::VulTrigger: return "VulTrigger";
    }
    return "FuncCall";
}

OpType op_type_from_string(std::string_view s) {
    const std::string k = squash_op_name(s);
    if (k == "srcload") return OpType::SrcLoad;
    if (k == "funccall") return OpType::FuncCall;
    if (k == "vuldatatransmit") return OpType::VulDataTransmit;
    if (k == "secdatatransmit") return OpType::SecDataTransmit;
    if (k == "vultrigger") return OpType::VulTrigger;
    throw UsageError("unknown op_type: " + std::string(s));
}

const OpNode* VtpGraph::find(std::string_view id) const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const OpNode& n) { return n.node_id == id; });
    return it == nodes.end() ? nullptr : &*it;
}

OpNode* VtpGraph::find(std::string_view id) {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const OpNode& n) { return n.node_id == id; });
    return it == nodes.end() ? nullptr : &*it;
}

std::vector<std::string> VtpGraph::successors(std::string_view id) const {
    std::vector<std::string> out;
    for (const auto& e : edges) {
        if (e.from == id) out.push_back(e.to);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::string> VtpGraph::predecessors(std::string_view id) const {
    std::vector<std::string> out;
    for (const auto& e : edges) {
        if (e.to == id) out.push_back(e.from);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

VulType VtpGraph::primary_vul_type() const {
    for (const auto& n : nodes) {
        if (n.op_type == OpType::VulTrigger) return n.vul_type;
    }
    return nodes.empty() ? VulType{} : nodes.front().vul_type;
}

std::vector<VulType> VtpGraph::vul_types() const {
    std::vector<VulType> out;
    for (const auto& n : nodes) {
        if (std::find(out.begin(), out.end(), n.vul_type) == out.end()) out.push_back(n.vul_type);
    }
    return out;
}

std::string node_id_for_index(std::size_t index) {
    std::ostringstream os;
    os << 'n';
    if (index < 10) os << '0';
    os << index;
    return os.str();
}

std::optional<std::vector<std::string>> find_cycle(const VtpGraph& g) {
    std::unordered_map<std::string, std::vector<std::string>> out;
    for (const auto& e : g.edges) out[e.from].push_back(e.to);
    for (auto& [_, v] : out) std::sort(v.begin(), v.end());

    enum class Mark { white, grey, black };
    std::unordered_map<std::string, Mark> mark;
    std::vector<std::string> stack;
    std::optional<std::vector<std::string>> cycle;

    std::function<bool(const std::string&)> visit = [&](const std::string& id) {
        mark[id] = Mark::grey;
        stack.push_back(id);
        for (const auto& next : out[id]) {
            if (mark[next] == Mark::grey) {
                auto it = std::find(stack.begin(), stack.end(), next);
                cycle = std::vector<std::string>(it, stack.end());
                cycle->push_back(next);
                return true;
            }
            if (mark[next] == Mark::white && visit(next)) return true;
        }
        stack.pop_back();
        mark[id] = Mark::black;
        return false;
    };

    std::vector<std::string> ids;
    for (const auto& n : g.nodes) ids.push_back(n.node_id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
        if (mark[id] == Mark::white && visit(id)) return cycle;
    }
    return std::nullopt;
}

namespace {

void validate_without_cycles(const VtpGraph& g) {
    std::unordered_set<std::string> ids;
    for (const auto& n : g.nodes) {
        if (n.node_id.empty()) throw StructureError("node with empty node_id");
        if (!ids.insert(n.node_id).second) throw StructureError("duplicate node_id: " + n.node_id);
    }
    for (const auto& e : g.edges) {
        if (!ids.count(e.from)) throw StructureError("dangling edge endpoint: " + e.from);
        if (!ids.count(e.to)) throw StructureError("dangling edge endpoint: " + e.to);
        if (e.from == e.to) throw StructureError("self-loop on " + e.from);
    }
}

std::string cycle_message(const std::vector<std::string>& cycle) {
    return "cycle detected: " + text::join(cycle, "->");
}

}  // namespace

void validate(const VtpGraph& g) {
    validate_without_cycles(g);
    if (auto cycle = find_cycle(g)) throw StructureError(cycle_message(*cycle));
}

std::string CompletenessReport::describe() const {
    std::ostringstream os;
    for (const auto& f : missing_op_info) os << "missing operation info: " << f.node_id << "." << f.field << "\n";
    for (const auto& e : missing_intermediate)
        os << "missing intermediate operation between " << e.from << " and " << e.to << "\n";
    for (const auto& e : missing_transitions)
        os << "missing transition path from " << e.from << " to " << e.to << "\n";
    return complete ? "complete\n" : os.str();
}

CompletenessReport check_completeness(const VtpGraph& g, const CompletenessOptions& options) {
    validate(g);
    CompletenessReport report;
    const std::string graph_level(kGraphLevel);

    std::vector<std::string> triggers;
    for (const auto& n : g.nodes) {
        if (text::trim(n.op_desc).empty()) report.missing_op_info.push_back({n.node_id, "op_desc"});
        if (!options.ignore_vul_type) {
            if (!n.vul_type.cwe_known()) report.missing_op_info.push_back({n.node_id, "cwe_id"});
            if (!n.vul_type.error_known()) report.missing_op_info.push_back({n.node_id, "error_type"});
        }
        if (n.op_type == OpType::VulTrigger) triggers.push_back(n.node_id);
    }
    std::sort(triggers.begin(), triggers.end());
    if (g.nodes.empty()) report.missing_op_info.push_back({graph_level, "source"});
    if (triggers.empty()) report.missing_op_info.push_back({graph_level, "vul_trigger"});
    if (triggers.size() > 1) report.missing_op_info.push_back({graph_level, "vul_trigger_unique"});

    for (const auto& e : g.edges) {
        const OpNode* from = g.find(e.from);
        const OpNode* to = g.find(e.to);
        if (from->op_type == OpType::SrcLoad && to->op_type == OpType::VulTrigger) {
            report.missing_intermediate.push_back(e);
        }
    }

    // Every node must reach the end operation; without a trigger the last node
    // in topological order stands in for it.
    std::vector<std::string> targets = triggers;
    if (targets.empty() && !g.nodes.empty()) targets.push_back(topological_order(g).back());

    std::unordered_set<std::string> reaches;
    std::queue<std::string> frontier;
    for (const auto& t : targets) {
        reaches.insert(t);
        frontier.push(t);
    }
    while (!frontier.empty()) {
        auto id = frontier.front();
        frontier.pop();
        for (const auto& p : g.predecessors(id)) {
            if (reaches.insert(p).second) frontier.push(p);
        }
    }
    for (const auto& n : g.nodes) {
        if (!reaches.count(n.node_id)) report.missing_transitions.push_back({n.node_id, targets.front()});
    }

    report.complete = report.missing_op_info.empty() && report.missing_intermediate.empty() &&
                      report.missing_transitions.empty();
    return report;
}

std::string canonical_serialize(const VtpGraph& g) {
    validate_without_cycles(g);
    auto order = topological_order(g);
    if (order.size() != g.nodes.size()) {
        throw StructureError(cycle_message(find_cycle(g).value_or(std::vector<std::string>{})));
    }
    std::vector<std::string> lines;
    lines.reserve(g.nodes.size() + g.edges.size());
    for (const auto& id : order) {
        const OpNode& n = *g.find(id);
        lines.push_back(to_string(n.op_type) + "|" + escape_field(n.vul_type.cwe_id) + "|" +
                        escape_field(n.vul_type.error_type) + "|" + escape_field(n.op_desc));
    }
    std::vector<std::string> edge_lines;
    for (const auto& e : g.edges) edge_lines.push_back(e.from + "->" + e.to);
    std::sort(edge_lines.begin(), edge_lines.end());
    lines.insert(lines.end(), edge_lines.begin(), edge_lines.end());
    return text::join(lines, "\n");
}

VtpGraph induced_subgraph(const VtpGraph& g, const std::vector<std::string>& keep) {
    std::unordered_set<std::string> wanted(keep.begin(), keep.end());
    VtpGraph out;
    for (const auto& n : g.nodes) {
        if (wanted.count(n.node_id)) out.nodes.push_back(n);
    }
    for (const auto& e : g.edges) {
        if (wanted.count(e.from) && wanted.count(e.to)) out.edges.push_back(e);
    }
    return out;
}

MaskResult mask_nodes(const VtpGraph& g, std::string_view ir_text, const MaskOptions& options) {
    if (!(options.fraction > 0.0 && options.fraction <= 1.0)) {
        throw UsageError("mask fraction must be in (0, 1]");
    }
    MaskResult result;
    result.masked_text = std::string(ir_text);
    if (g.nodes.empty()) return result;

    std::vector<std::string> ids;
    for (const auto& n : g.nodes) ids.push_back(n.node_id);
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(options.seed);
    for (std::size_t i = ids.size(); i > 1; --i) {
        std::swap(ids[i - 1], ids[rng() % i]);
    }
    const auto wanted = static_cast<std::size_t>(std::llround(options.fraction * static_cast<double>(ids.size())));
    ids.resize(std::clamp<std::size_t>(wanted, 1, ids.size()));

    struct Span {
        std::size_t start;
        std::size_t length;
        std::size_t token;
    };
    std::vector<Span> spans;
    std::vector<bool> used(ir_text.size(), false);

    for (const auto& id : ids) {
        const std::string& desc = g.find(id)->op_desc;
        // Longest common substring restricted to unmasked text positions.
        std::vector<std::size_t> prev(ir_text.size() + 1, 0), cur(ir_text.size() + 1, 0);
        std::size_t best_len = 0, best_end = 0;
        for (std::size_t i = 0; i < desc.size(); ++i) {
            for (std::size_t j = 0; j < ir_text.size(); ++j) {
                if (!used[j] && desc[i] == ir_text[j]) {
                    cur[j + 1] = prev[j] + 1;
                    if (cur[j + 1] > best_len) {
                        best_len = cur[j + 1];
                        best_end = j + 1;
                    }
                } else {
                    cur[j + 1] = 0;
                }
            }
            std::swap(prev, cur);
        }
        if (best_len < options.min_anchor_length || best_len == 0) {
            result.skipped_node_ids.push_back(id);
            continue;
        }
        const std::size_t start = best_end - best_len;
        for (std::size_t p = start; p < best_end; ++p) used[p] = true;
        const std::size_t token = result.hidden.size();
        result.hidden.push_back(MaskedSpan{"[MASK_" + std::to_string(token) + "]",
                                           std::string(ir_text.substr(start, best_len)), id});
        spans.push_back(Span{start, best_len, token});
    }

    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.start > b.start; });
    for (const auto& s : spans) {
        result.masked_text.replace(s.start, s.length, result.hidden[s.token].mask_token);
    }
    return result;
}

void to_json(nlohmann::json& j, const VulType& v) {
    j = nlohmann::json{{"cwe_id", v.cwe_id}, {"error_type", v.error_type}};
}

void from_json(const nlohmann::json& j, VulType& v) {
    if (j.is_string()) {
        v = VulType{j.get<std::string>(), std::string(kUnknownError)};
        return;
    }
    v = VulType{};
    if (j.contains("cwe_id") && j.at("cwe_id").is_string()) v.cwe_id = j.at("cwe_id").get<std::string>();
    if (j.contains("error_type") && j.at("error_type").is_string())
        v.error_type = j.at("error_type").get<std::string>();
}

void to_json(nlohmann::json& j, const OpNode& n) {
    j = nlohmann::json{{"node_id", n.node_id},
                       {"op_type", to_string(n.op_type)},
                       {"op_desc", n.op_desc},
                       {"vul_type", n.vul_type}};
}

void to_json(nlohmann::json& j, const VtpGraph& g) {
    j = nlohmann::json::object();
    j["nodes"] = nlohmann::json::array();
    for (const auto& n : g.nodes) j["nodes"].push_back(n);
    j["edges"] = nlohmann::json::array();
    for (const auto& e : g.edges) j["edges"].push_back({{"from", e.from}, {"to", e.to}});
}

VtpGraph graph_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("nodes") || !j.at("nodes").is_array()) {
        throw UsageError("graph object needs a nodes array");
    }
    VtpGraph g;
    const auto& nodes = j.at("nodes");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto& jn = nodes[i];
        if (!jn.is_object()) throw UsageError("node entry is not an object");
        OpNode n;
        n.node_id = jn.contains("node_id") && jn.at("node_id").is_string() ? jn.at("node_id").get<std::string>()
                                                                            : node_id_for_index(i);
        n.op_type = op_type_from_string(jn.at("op_type").get<std::string>());
        n.op_desc = jn.value("op_desc", std::string{});
        if (jn.contains("vul_type")) n.vul_type = jn.at("vul_type").get<VulType>();
        g.nodes.push_back(std::move(n));
    }
    auto endpoint = [&](const nlohmann::json& v) -> std::string {
        if (v.is_number_integer()) {
            const auto idx = v.get<long long>();
            if (idx < 0 || static_cast<std::size_t>(idx) >= g.nodes.size())
                throw UsageError("edge index out of range");
            return g.nodes[static_cast<std::size_t>(idx)].node_id;
        }
        return v.get<std::string>();
    };
    if (j.contains("edges")) {
        for (const auto& je : j.at("edges")) {
            if (je.is_array() && je.size() == 2) {
                g.edges.push_back({endpoint(je[0]), endpoint(je[1])});
            } else {
                g.edges.push_back({endpoint(je.at("from")), endpoint(je.at("to"))});
            }
        }
    }
    return g;
}

}  // namespace patuntrack
