#include "patuntrack/prompt.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "patuntrack/error.hpp"
#include "patuntrack/text.hpp"

namespace patuntrack {

void to_json(nlohmann::json& j, const PatchPair& p) {
    j = nlohmann::json{{"rank", p.rank},
                       {"insecure_code", p.insecure_code},
                       {"patch", p.patch},
                       {"vul_type", p.vul_type},
                       {"patch_type", p.patch_type}};
}

PatchPair patch_pair_from_json(const nlohmann::json& j) {
    PatchPair p;
    p.rank = j.value("rank", 1);
    p.insecure_code = j.at("insecure_code").get<std::string>();
    p.patch = j.at("patch").get<std::string>();
    if (j.contains("vul_type")) p.vul_type = j.at("vul_type").get<VulType>();
    p.patch_type = j.value("patch_type", std::string(kUnknownPatch));
    return p;
}

std::string to_string(TemplateId id) {
    switch (id) {
        case TemplateId::extract: return "extract";
        case TemplateId::complete: return "complete";
        case TemplateId::halDetect: return "halDetect";
        case TemplateId::halCorrect: return "halCorrect";
        case TemplateId::typePredict: return "typePredict";
        case TemplateId::generate: return "generate";
    }
    return "extract";
}

TemplateId template_id_from_string(std::string_view s) {
    for (auto id : kAllTemplates) {
        if (to_string(id) == s) return id;
    }
    throw UsageError("unknown template id: " + std::string(s));
}

std::string to_string(MutationAction a) {
    switch (a) {
        case MutationAction::insert: return "insert";
        case MutationAction::remove: return "delete";
        case MutationAction::modify: return "modify";
    }
    return "insert";
}

void to_json(nlohmann::json& j, const FocusEntry& f) {
    j = nlohmann::json{{"vul_type", f.vul_type}, {"focus", f.focus}};
}

void from_json(const nlohmann::json& j, FocusEntry& f) {
    f.vul_type = j.at("vul_type").get<VulType>();
    f.focus = j.at("focus").get<std::string>();
}

void to_json(nlohmann::json& j, const PromptTemplate& t) {
    j = nlohmann::json{{"template_id", to_string(t.template_id)},
                       {"task_definition", t.task_definition},
                       {"schema_block", t.schema_block},
                       {"focus_list", t.focus_list},
                       {"version", t.version}};
}

PromptTemplate prompt_template_from_json(const nlohmann::json& j) {
    PromptTemplate t;
    t.template_id = template_id_from_string(j.at("template_id").get<std::string>());
    t.task_definition = j.at("task_definition").get<std::string>();
    t.schema_block = j.at("schema_block").get<std::string>();
    t.focus_list = j.value("focus_list", std::vector<FocusEntry>{});
    t.version = j.value("version", 0);
    if (text::trim(t.task_definition).empty()) throw UsageError("template with empty task_definition");
    return t;
}

namespace {

constexpr std::string_view kGraphReplyFormat =
    "Reply with one JSON object of the form\n"
    "{\"nodes\": [{\"node_id\": \"n00\", \"op_type\": \"SrcLoad\", \"op_desc\": \"...\",\n"
    "  \"vul_type\": {\"cwe_id\": \"CWE-<n>\", \"error_type\": \"...\"}}],\n"
    " \"edges\": [{\"from\": \"n00\", \"to\": \"n01\"}]}";

std::string task_text(TemplateId id) {
    switch (id) {
        case TemplateId::extract:
            return "Read the vulnerable issue report below and extract the vulnerability-triggering path: the "
                   "operations that lead from loading the vulnerable source data to the vulnerability being "
                   "triggered, and the one-way transitions between them. Use only operation types from the "
                   "definitions. Assign each operation the CWE type and error type it relates to.\n" +
                   std::string(kGraphReplyFormat);
        case TemplateId::complete:
            return "The vulnerability-triggering path below is incomplete. Operation-level completeness: every "
                   "operation has a description, a CWE type and an error type, the path has a source operation "
                   "and ends in exactly one VulTrigger operation, and no intermediate operation is skipped. "
                   "Transition-level completeness: every operation reaches the VulTrigger operation through "
                   "transitions. Fill in the missing information, add missing intermediate operations and add "
                   "missing transitions. Return only new or changed operations and new transitions; reuse "
                   "existing node_id values for changed operations.\n" +
                   std::string(kGraphReplyFormat);
        case TemplateId::halDetect:
            return "Check the current operation of the vulnerability-triggering path against its connected "
                   "operations and the retrieved vulnerability knowledge. A type hallucination is a CWE type or "
                   "error type that the knowledge contradicts. A description hallucination is an operation "
                   "description that cannot happen as written for this vulnerability.\n"
                   "Reply with {\"verdict\": \"type_hallucination\" | \"desc_hallucination\" | \"clean\"}.";
        case TemplateId::halCorrect:
            return "Correct the hallucination found in the current operation using the retrieved vulnerability "
                   "knowledge. For a type hallucination reply with "
                   "{\"vul_type\": {\"cwe_id\": ..., \"error_type\": ...}, \"connected\": {\"<node_id>\": "
                   "{\"cwe_id\": ..., \"error_type\": ...}}}. For a description hallucination reply with "
                   "{\"op_desc\": \"...\", \"successors\": [\"<node_id>\", ...]} where successors, when given, "
                   "replace the transitions leaving the current operation.";
        case TemplateId::typePredict:
            return "Predict the patch type that fixes the vulnerability described by the triggering path. Choose "
                   "exactly one patch type from the definitions; the co-occurrence frequencies observed so far "
                   "are given in the context.\nReply with {\"patch_type\": \"...\"}.";
        case TemplateId::generate:
            return "Using the selected operations of the triggering path and the predicted patch type, jointly "
                   "generate pairs of an insecure code example and its patch. Keep each pair consistent: when "
                   "you revise one member of an earlier pair, revise the pair as a whole.\n"
                   "Reply with {\"pairs\": [{\"insecure_code\": \"...\", \"patch\": \"...\", \"vul_type\": "
                   "{\"cwe_id\": ..., \"error_type\": ...}, \"patch_type\": \"...\"}]}; to revise an earlier "
                   "pair add \"revises\": <rank>.";
    }
    return {};
}

std::string schema_text(TemplateId id, const Taxonomy& taxonomy) {
    std::ostringstream os;
    os << "Operation node: <op_type, op_desc, vul_type>.\n"
          "  SrcLoad: the program loads vulnerability-related source data (packages, tainted variables).\n"
          "  FuncCall: a function call that participates in triggering the vulnerability.\n"
          "  VulDataTransmit: vulnerable data moves from a source towards a sink.\n"
          "  SecDataTransmit: other, non-harmful data moves along the call process.\n"
          "  VulTrigger: the vulnerability is triggered; the single end operation.\n"
          "Edge: a one-way transition Op_i -> Op_j; Op_i is a prerequisite of Op_j.\n"
          "Vulnerability type: a CWE identifier (CWE-<number>) plus one error type: "
       << text::join(taxonomy.error_types, ", ") << ".\n";
    if (id == TemplateId::typePredict || id == TemplateId::generate) {
        os << "Patch types: " << text::join(taxonomy.patch_types, ", ") << ".\n";
    }
    return os.str();
}

std::string escape_field(const std::string& s) {
    return s.empty() ? "-" : s;
}

}  // namespace

PromptTemplate default_template(TemplateId id, const Taxonomy& taxonomy) {
    return PromptTemplate{id, task_text(id), schema_text(id, taxonomy), {}, 0};
}

TemplateSet TemplateSet::defaults(const Taxonomy& taxonomy) {
    TemplateSet set;
    for (auto id : kAllTemplates) set.templates_[id] = default_template(id, taxonomy);
    return set;
}

const PromptTemplate& TemplateSet::get(TemplateId id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw UsageError("template set lacks " + to_string(id));
    return it->second;
}

void TemplateSet::set(PromptTemplate t) {
    const auto id = t.template_id;
    templates_[id] = std::move(t);
}

void TemplateSet::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const auto& [id, t] : templates_) {
        const std::string body = nlohmann::json(t).dump(2) + "\n";
        std::ofstream(fs::path(dir) / (to_string(id) + ".json")) << body;
        std::ofstream(fs::path(dir) / (to_string(id) + ".v" + std::to_string(t.version) + ".json")) << body;
    }
}

TemplateSet TemplateSet::load(const std::string& dir, const Taxonomy& taxonomy) {
    namespace fs = std::filesystem;
    TemplateSet set = defaults(taxonomy);
    for (auto id : kAllTemplates) {
        const auto path = fs::path(dir) / (to_string(id) + ".json");
        if (!fs::exists(path)) continue;
        std::ifstream in(path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ": " + e.what(), 0);
        }
        set.set(prompt_template_from_json(j));
    }
    return set;
}

bool focus_matches(const FocusEntry& entry, const VulType& v) {
    if (entry.vul_type.cwe_known()) return entry.vul_type.cwe_id == v.cwe_id;
    return entry.vul_type.error_known() && entry.vul_type.error_type == v.error_type;
}

RenderedPrompt render_prompt_ex(const PromptTemplate& t, const IssueReport& ir, const VtpGraph* g,
                                const PromptContext& extra, const RenderOptions& options) {
    if (g == nullptr && t.template_id != TemplateId::extract) {
        throw UsageError("template " + to_string(t.template_id) + " needs a VTP graph");
    }
    RenderedPrompt out;
    std::ostringstream os;
    os << "## Task Definition\n" << t.task_definition << "\n\n";

    os << "## Details of VTP Description\n" << t.schema_block;
    if (!t.schema_block.empty() && t.schema_block.back() != '\n') os << "\n";
    if (g != nullptr) {
        VtpGraph shown = *g;
        if (options.hide_vul_types) {
            for (auto& n : shown.nodes) n.vul_type = VulType{"", ""};
        }
        os << "[VTP]\n";
        for (const auto& n : shown.nodes) {
            os << n.node_id << ": " << to_string(n.op_type) << " | " << escape_field(n.vul_type.cwe_id) << " | "
               << escape_field(n.vul_type.error_type) << " | " << n.op_desc << "\n";
        }
        std::vector<std::string> edges;
        for (const auto& e : shown.edges) edges.push_back(e.from + " -> " + e.to);
        std::sort(edges.begin(), edges.end());
        for (const auto& e : edges) os << e << "\n";
    }
    os << "[IR]\n" << ir.tagged_text();
    if (!extra.empty()) {
        os << "[CONTEXT]\n";
        for (const auto& [k, v] : extra) os << k << ": " << v << "\n";
    }
    os << "\n## Focus-List\n";
    std::vector<VulType> present;
    if (g != nullptr && !options.hide_vul_types) present = g->vul_types();
    for (const auto& f : t.focus_list) {
        if (options.omit_focus_list) break;
        const bool keep = g == nullptr || std::any_of(present.begin(), present.end(), [&](const VulType& v) {
                              return focus_matches(f, v);
                          });
        if (!keep) continue;
        os << "- " << f.vul_type.cwe_id << " / " << f.vul_type.error_type << ": " << f.focus << "\n";
        ++out.focus_entries;
    }
    if (out.focus_entries == 0) os << "- none\n";
    out.text = os.str();
    return out;
}

std::string render_prompt(const PromptTemplate& t, const IssueReport& ir, const VtpGraph* g,
                          const PromptContext& extra, const RenderOptions& options) {
    return render_prompt_ex(t, ir, g, extra, options).text;
}

FocusMutation mutate_focus(std::vector<FocusEntry> focus_list, MutationAction action, const FocusEntry& item) {
    FocusMutation out;
    auto it = std::find_if(focus_list.begin(), focus_list.end(),
                           [&](const FocusEntry& f) { return f.vul_type == item.vul_type; });
    switch (action) {
        case MutationAction::insert:
            if (text::trim(item.focus).empty()) throw UsageError("focus text must be nonempty");
            if (it != focus_list.end()) {
                it->focus = item.focus;
                out.notes.push_back({"insert_replaced_duplicate",
                                     "entry for " + item.vul_type.str() + " replaced instead of duplicated"});
            } else {
                focus_list.push_back(item);
            }
            break;
        case MutationAction::remove:
            if (it == focus_list.end()) {
                out.notes.push_back({"delete_absent", "no focus entry for " + item.vul_type.str()});
            } else {
                focus_list.erase(it);
            }
            break;
        case MutationAction::modify:
            if (it == focus_list.end()) {
                out.notes.push_back({"modify_absent", "no focus entry for " + item.vul_type.str()});
            } else {
                if (text::trim(item.focus).empty()) throw UsageError("focus text must be nonempty");
                it->focus = item.focus;
            }
            break;
    }
    out.focus_list = std::move(focus_list);
    return out;
}

std::vector<nlohmann::json> embedded_json_values(std::string_view reply) {
    std::vector<nlohmann::json> values;
    std::size_t i = 0;
    while (i < reply.size()) {
        const char open = reply[i];
        if (open != '{' && open != '[') {
            ++i;
            continue;
        }
        // Find the matching close bracket, skipping string literals.
        std::vector<char> stack{open};
        bool in_string = false;
        bool escaped = false;
        std::size_t j = i + 1;
        for (; j < reply.size() && !stack.empty(); ++j) {
            const char c = reply[j];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '{' || c == '[') stack.push_back(c);
            else if (c == '}' || c == ']') {
                const char expected = stack.back() == '{' ? '}' : ']';
                if (c != expected) break;
                stack.pop_back();
            }
        }
        if (stack.empty()) {
            auto parsed = nlohmann::json::parse(reply.substr(i, j - i), nullptr, false);
            if (!parsed.is_discarded()) {
                values.push_back(std::move(parsed));
                i = j;
                continue;
            }
        }
        ++i;
    }
    return values;
}

VtpGraph parse_vtp_reply(std::string_view reply) {
    std::string last_problem = "no JSON object with a nodes array";
    for (const auto& value : embedded_json_values(reply)) {
        const nlohmann::json* candidate = &value;
        if (value.is_object() && !value.contains("nodes") && value.contains("graph")) candidate = &value.at("graph");
        if (!candidate->is_object() || !candidate->contains("nodes")) continue;
        try {
            VtpGraph g = graph_from_json(*candidate);
            validate(g);
            return g;
        } catch (const Error& e) {
            last_problem = e.what();
        } catch (const nlohmann::json::exception& e) {
            last_problem = e.what();
        }
    }
    throw DecodeError("reply holds no valid VTP graph: " + last_problem, std::string(reply));
}

namespace {

const nlohmann::json* find_pair_list(const std::vector<nlohmann::json>& values) {
    for (const auto& v : values) {
        if (v.is_object() && v.contains("pairs") && v.at("pairs").is_array()) return &v.at("pairs");
        if (v.is_array() && std::all_of(v.begin(), v.end(), [](const nlohmann::json& e) { return e.is_object(); })) {
            return &v;
        }
    }
    return nullptr;
}

std::optional<std::string> string_member(const nlohmann::json& item, const char* key, std::string_view reply) {
    if (!item.contains(key) || item.at(key).is_null()) return std::nullopt;
    if (!item.at(key).is_string()) {
        throw DecodeError(std::string("field '") + key + "' is not a string", std::string(reply));
    }
    return item.at(key).get<std::string>();
}

}  // namespace

std::vector<PairReplyItem> decode_pair_items(std::string_view reply) {
    const auto values = embedded_json_values(reply);
    const nlohmann::json* list = find_pair_list(values);
    if (list == nullptr) throw DecodeError("reply holds no list of pairs", std::string(reply));
    std::vector<PairReplyItem> items;
    for (const auto& item : *list) {
        PairReplyItem p;
        p.insecure_code = string_member(item, "insecure_code", reply);
        p.patch = string_member(item, "patch", reply);
        p.patch_type = string_member(item, "patch_type", reply);
        if (item.contains("vul_type") && !item.at("vul_type").is_null()) p.vul_type = item.at("vul_type").get<VulType>();
        if (item.contains("revises") && item.at("revises").is_number_integer()) p.revises = item.at("revises").get<int>();
        items.push_back(std::move(p));
    }
    return items;
}

std::vector<PatchPair> parse_pair_reply(std::string_view reply) {
    std::vector<PatchPair> pairs;
    int rank = 0;
    for (const auto& item : decode_pair_items(reply)) {
        ++rank;
        if (!item.insecure_code || item.insecure_code->empty()) {
            throw DecodeError("pair " + std::to_string(rank) + " is missing field 'insecure_code'", std::string(reply));
        }
        if (!item.patch || item.patch->empty()) {
            throw DecodeError("pair " + std::to_string(rank) + " is missing field 'patch'", std::string(reply));
        }
        PatchPair p;
        p.rank = rank;
        p.insecure_code = *item.insecure_code;
        p.patch = *item.patch;
        if (item.vul_type) p.vul_type = *item.vul_type;
        if (item.patch_type) p.patch_type = *item.patch_type;
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace patuntrack
