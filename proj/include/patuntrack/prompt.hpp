#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "patuntrack/dataset.hpp"
#include "patuntrack/diagnostic.hpp"
#include "patuntrack/patch_pair.hpp"
#include "patuntrack/vtp.hpp"

namespace patuntrack {

enum class TemplateId { extract, complete, halDetect, halCorrect, typePredict, generate };

inline constexpr TemplateId kAllTemplates[] = {TemplateId::extract,    TemplateId::complete,
                                               TemplateId::halDetect,  TemplateId::halCorrect,
                                               TemplateId::typePredict, TemplateId::generate};

std::string to_string(TemplateId id);
TemplateId template_id_from_string(std::string_view s);

struct FocusEntry {
    VulType vul_type;
    std::string focus;

    bool operator==(const FocusEntry&) const = default;
};

struct PromptTemplate {
    TemplateId template_id = TemplateId::extract;
    std::string task_definition;
    std::string schema_block;
    std::vector<FocusEntry> focus_list;
    /// Bumped each time the optimizer adopts a change.
    int version = 0;

    bool operator==(const PromptTemplate&) const = default;
};

void to_json(nlohmann::json& j, const FocusEntry& f);
void from_json(const nlohmann::json& j, FocusEntry& f);
void to_json(nlohmann::json& j, const PromptTemplate& t);
PromptTemplate prompt_template_from_json(const nlohmann::json& j);

/// Shipped template for `id`: original task text, a schema block with the VTP
/// node/edge and vulnerability-type definitions, an empty focus list.
PromptTemplate default_template(TemplateId id, const Taxonomy& taxonomy);

/// The six templates a pipeline run uses.
class TemplateSet {
public:
    static TemplateSet defaults(const Taxonomy& taxonomy);

    const PromptTemplate& get(TemplateId id) const;
    void set(PromptTemplate t);
    bool operator==(const TemplateSet&) const = default;

    /// Writes <dir>/<id>.json and <dir>/<id>.v<version>.json per template.
    void save(const std::string& dir) const;
    /// Reads <dir>/<id>.json; ids without a file keep the defaults.
    static TemplateSet load(const std::string& dir, const Taxonomy& taxonomy);

private:
    std::map<TemplateId, PromptTemplate> templates_;
};

/// Ordered key/value context appended to the VTP details block.
using PromptContext = std::vector<std::pair<std::string, std::string>>;

struct RenderOptions {
    /// Blank vul_type components in the serialized graph.
    bool hide_vul_types = false;
    /// Render the focus-list block as empty regardless of the template.
    bool omit_focus_list = false;
};

struct RenderedPrompt {
    std::string text;
    std::size_t focus_entries = 0;
};

/// Task Definition, then Details of VTP Description (schema, serialized graph,
/// tagged IR segments, extra context), then Focus-List. With a graph, only
/// focus entries matching a vul type of the graph are rendered.
/// Throws UsageError when `g` is missing for a template other than extract.
RenderedPrompt render_prompt_ex(const PromptTemplate& t, const IssueReport& ir, const VtpGraph* g,
                                const PromptContext& extra = {}, const RenderOptions& options = {});

std::string render_prompt(const PromptTemplate& t, const IssueReport& ir, const VtpGraph* g,
                          const PromptContext& extra = {}, const RenderOptions& options = {});

/// True when `entry` applies to a graph containing `v`: same CWE, or same
/// error type for entries without a known CWE.
bool focus_matches(const FocusEntry& entry, const VulType& v);

enum class MutationAction { insert, remove, modify };

inline constexpr MutationAction kAllActions[] = {MutationAction::insert, MutationAction::remove,
                                                 MutationAction::modify};

std::string to_string(MutationAction a);

struct FocusMutation {
    std::vector<FocusEntry> focus_list;
    Diagnostics notes;
};

/// insert appends (replacing in place on a duplicate vul_type, with a note);
/// remove drops the entry with the same vul_type; modify replaces its text.
/// remove/modify on an absent vul_type leave the list unchanged with a warning.
FocusMutation mutate_focus(std::vector<FocusEntry> focus_list, MutationAction action, const FocusEntry& item);

/// Every JSON object or array embedded in `reply`, in order of appearance.
/// Prose and code fences around them are ignored.
std::vector<nlohmann::json> embedded_json_values(std::string_view reply);

/// First structurally valid VtpGraph in the reply. Throws DecodeError.
VtpGraph parse_vtp_reply(std::string_view reply);

/// A decoded generation item. A member may be missing only when `revises`
/// names an earlier rank to inherit it from.
struct PairReplyItem {
    std::optional<std::string> insecure_code;
    std::optional<std::string> patch;
    std::optional<VulType> vul_type;
    std::optional<std::string> patch_type;
    std::optional<int> revises;
};

/// Lenient decoding used by the generator. Throws DecodeError when no list
/// of pair objects is present.
std::vector<PairReplyItem> decode_pair_items(std::string_view reply);

/// Strict decoding: every item needs insecure_code and patch; ranks 1..n.
/// Throws DecodeError naming the missing field.
std::vector<PatchPair> parse_pair_reply(std::string_view reply);

}  // namespace patuntrack
