#include "patuntrack/patchgen.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "patuntrack/diff.hpp"
#include "patuntrack/text.hpp"

namespace patuntrack {

void to_json(nlohmann::json& j, const PatchTypePrediction& p) {
    j = nlohmann::json{{"patch_type", p.patch_type}, {"confidence_freq", p.confidence_freq}};
}

int CooccurrenceTable::count(const VulType& v, std::string_view patch_type) const {
    auto it = counts_.find(Key{v, std::string(patch_type)});
    return it == counts_.end() ? 0 : it->second;
}

void CooccurrenceTable::record(const VulType& v, const std::string& patch_type) {
    ++counts_[Key{v, patch_type}];
    ++predicted_ir_count_;
}

void CooccurrenceTable::set_count(const VulType& v, const std::string& patch_type, int n) {
    if (n < 0) throw UsageError("co-occurrence counts must be non-negative");
    if (n == 0) {
        counts_.erase(Key{v, patch_type});
    } else {
        counts_[Key{v, patch_type}] = n;
    }
}

void CooccurrenceTable::set_predicted_ir_count(int n) {
    if (n < 0) throw UsageError("predicted_ir_count must be non-negative");
    predicted_ir_count_ = n;
}

void to_json(nlohmann::json& j, const CooccurrenceTable& t) {
    nlohmann::json counts = nlohmann::json::array();
    for (const auto& [key, n] : t.counts()) {
        counts.push_back({{"vul_type", key.first}, {"patch_type", key.second}, {"count", n}});
    }
    j = nlohmann::json{{"predicted_ir_count", t.predicted_ir_count()}, {"counts", counts}};
}

CooccurrenceTable cooccurrence_table_from_json(const nlohmann::json& j) {
    CooccurrenceTable t;
    t.set_predicted_ir_count(j.value("predicted_ir_count", 0));
    for (const auto& c : j.value("counts", nlohmann::json::array())) {
        t.set_count(c.at("vul_type").get<VulType>(), c.at("patch_type").get<std::string>(), c.at("count").get<int>());
    }
    return t;
}

double freq(const CooccurrenceTable& table, const VulType& v, std::string_view patch_type) {
    if (table.predicted_ir_count() <= 0) return 0.0;
    return static_cast<double>(table.count(v, patch_type)) / static_cast<double>(table.predicted_ir_count());
}

std::string decode_patch_type(std::string_view reply, const Taxonomy& taxonomy) {
    for (const auto& v : embedded_json_values(reply)) {
        if (v.is_object() && v.contains("patch_type") && v.at("patch_type").is_string()) {
            const auto name = v.at("patch_type").get<std::string>();
            if (auto canonical = taxonomy.find_patch_type(text::trim(name))) return *canonical;
            throw DecodeError("patch type '" + name + "' is not in the taxonomy", std::string(reply));
        }
    }
    std::string bare = text::trim(reply);
    if (bare.size() >= 2 && bare.front() == '"' && bare.back() == '"') bare = bare.substr(1, bare.size() - 2);
    if (auto canonical = taxonomy.find_patch_type(bare)) return *canonical;
    throw DecodeError("reply names no patch type", std::string(reply));
}

namespace {

std::string format_ratio(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", r);
    return buf;
}

std::string freq_block(const VtpGraph& g, const CooccurrenceTable& table) {
    std::set<VulType> types;
    for (const auto& v : g.vul_types()) types.insert(v);
    std::string out;
    for (const auto& v : types) {
        for (const auto& [key, n] : table.counts()) {
            if (key.first != v) continue;
            out += "\n  " + v.str() + " -> " + key.second + ": " + format_ratio(freq(table, v, key.second));
        }
    }
    out = "predicted IRs so far: " + std::to_string(table.predicted_ir_count()) + out;
    return out;
}

}  // namespace

PatchTypePrediction predict_patch_type(const VtpGraph& g, const CooccurrenceTable& table, StageContext& ctx) {
    const std::string prompt =
        ctx.render(TemplateId::typePredict, &g, {{"co_occurrence", freq_block(g, table)}});
    auto decoded = ctx.ask<std::string>("type_predict", prompt, ctx.temperature, [&](const std::string& r) {
        return decode_patch_type(r, ctx.taxonomy);
    });
    PatchTypePrediction p;
    if (decoded) {
        p.patch_type = *decoded;
    } else {
        ctx.warnings.push_back({"patch_type_unknown", "no decodable patch type for " + ctx.ir.id});
    }
    p.confidence_freq = freq(table, g.primary_vul_type(), p.patch_type);
    return p;
}

PatchTypePrediction predict_and_record(const VtpGraph& g, CooccurrenceTable& table, StageContext& ctx) {
    auto p = predict_patch_type(g, table, ctx);
    table.record(g.primary_vul_type(), p.patch_type);
    return p;
}

std::vector<std::string> third_party_node_ids(const VtpGraph& g) {
    static constexpr std::string_view kMarkers[] = {"third-party", "third party", "library", "package",
                                                    "dependency",  "import",      "vendor"};
    std::vector<std::string> out;
    for (const auto& n : g.nodes) {
        if (n.op_type == OpType::VulTrigger) continue;
        const bool external = std::any_of(std::begin(kMarkers), std::end(kMarkers),
                                          [&](std::string_view m) { return text::contains_ci(n.op_desc, m); });
        if (external) out.push_back(n.node_id);
    }
    return out;
}

VtpGraph select_developer_subgraph(const VtpGraph& g, StageContext& ctx) {
    const std::string prompt = ctx.render(
        TemplateId::generate, &g,
        {{"sub_task",
          "Select the operations and transitions that reflect how the developer wrote the insecure code. Leave out "
          "operations inside third-party libraries. Reply with {\"node_ids\": [\"...\"]}."}});
    auto selected = ctx.ask<std::vector<std::string>>("select", prompt, ctx.temperature, [&](const std::string& r) {
        for (const auto& v : embedded_json_values(r)) {
            if (!v.is_object() || !v.contains("node_ids") || !v.at("node_ids").is_array()) continue;
            std::vector<std::string> ids;
            for (const auto& id : v.at("node_ids")) {
                if (!id.is_string()) continue;
                const auto s = id.get<std::string>();
                if (g.find(s) == nullptr) throw DecodeError("selection names unknown node " + s, r);
                ids.push_back(s);
            }
            if (!ids.empty()) return ids;
        }
        throw DecodeError("reply holds no node selection", r);
    });

    std::vector<std::string> keep;
    if (selected) {
        keep = *selected;
    } else {
        ctx.warnings.push_back({"select_fallback", "developer subgraph for " + ctx.ir.id + " chosen by fallback"});
        const auto drop = third_party_node_ids(g);
        for (const auto& n : g.nodes) {
            if (std::find(drop.begin(), drop.end(), n.node_id) == drop.end()) keep.push_back(n.node_id);
        }
    }
    for (const auto& n : g.nodes) {
        if (n.op_type != OpType::VulTrigger) continue;
        if (std::find(keep.begin(), keep.end(), n.node_id) == keep.end()) {
            keep.push_back(n.node_id);
            ctx.warnings.push_back({"vul_trigger_readded", "selection omitted VulTrigger node " + n.node_id});
        }
    }
    return induced_subgraph(g, keep);
}

namespace {

std::string first_line(const std::string& s) {
    const auto lines = text::normalized_lines(s);
    return lines.empty() ? std::string() : lines.front();
}

std::string pairs_summary(const std::vector<PatchPair>& pairs) {
    if (pairs.empty()) return "(none yet)";
    std::string out;
    for (const auto& p : pairs) out += "\n  " + std::to_string(p.rank) + ": " + first_line(p.insecure_code);
    return out;
}

bool nonempty(const std::optional<std::string>& s) { return s && !text::trim(*s).empty(); }

std::vector<std::string> string_list(const std::string& reply, const char* key) {
    for (const auto& v : embedded_json_values(reply)) {
        if (!v.is_object() || !v.contains(key) || !v.at(key).is_array()) continue;
        std::vector<std::string> out;
        for (const auto& s : v.at(key)) {
            if (s.is_string() && !text::trim(s.get<std::string>()).empty()) out.push_back(s.get<std::string>());
        }
        return out;
    }
    throw DecodeError(std::string("reply holds no '") + key + "' list", reply);
}

}  // namespace

GenerationResult generate_pairs(const VtpGraph& g_sel, const PatchTypePrediction& pred, int k, StageContext& ctx,
                                const GenerateOptions& options) {
    if (k < 1) throw UsageError("k must be >= 1");
    if (options.pairs_per_call < 1) throw UsageError("pairs_per_call must be >= 1");
    const int budget = ctx.theta * ((k + options.pairs_per_call - 1) / options.pairs_per_call);
    const VulType default_vul = g_sel.primary_vul_type();

    GenerationResult result;
    auto make_pair = [&](std::string code, std::string patch, const std::optional<VulType>& v,
                         const std::optional<std::string>& pt) {
        PatchPair p;
        p.rank = static_cast<int>(result.pairs.size()) + 1;
        p.insecure_code = std::move(code);
        p.patch = std::move(patch);
        p.vul_type = v ? normalize_vul_type(*v, ctx.taxonomy) : default_vul;
        p.patch_type = pred.patch_type;
        if (pt) {
            if (auto canonical = ctx.taxonomy.find_patch_type(*pt)) p.patch_type = *canonical;
        }
        return p;
    };
    auto context_for = [&](int needed) {
        return PromptContext{{"patch_type", pred.patch_type},
                             {"pairs_needed", std::to_string(needed)},
                             {"existing_pairs", pairs_summary(result.pairs)}};
    };

    if (options.joint) {
        while (static_cast<int>(result.pairs.size()) < k && result.calls < budget) {
            const int needed = std::min(options.pairs_per_call, k - static_cast<int>(result.pairs.size()));
            const std::string prompt = ctx.render(TemplateId::generate, &g_sel, context_for(needed));
            ++result.calls;
            const std::string reply = ctx.complete("generate", prompt, ctx.generation_temperature);
            std::vector<PairReplyItem> items;
            try {
                items = decode_pair_items(reply);
            } catch (const DecodeError& e) {
                ctx.warnings.push_back({"decode_retry", ctx.tag("generate") + ": " + e.what()});
                continue;
            } catch (const nlohmann::json::exception& e) {
                ctx.warnings.push_back({"decode_retry", ctx.tag("generate") + ": " + e.what()});
                continue;
            }
            for (const auto& item : items) {
                if (item.revises) {
                    const int r = *item.revises;
                    if (r < 1 || r > static_cast<int>(result.pairs.size())) {
                        ctx.warnings.push_back({"revision_ignored", "revision of unknown rank " + std::to_string(r)});
                        continue;
                    }
                    PatchPair& target = result.pairs[static_cast<std::size_t>(r - 1)];
                    if (nonempty(item.insecure_code)) target.insecure_code = *item.insecure_code;
                    if (nonempty(item.patch)) target.patch = *item.patch;
                    if (item.vul_type) target.vul_type = normalize_vul_type(*item.vul_type, ctx.taxonomy);
                    if (item.patch_type) {
                        if (auto canonical = ctx.taxonomy.find_patch_type(*item.patch_type)) {
                            target.patch_type = *canonical;
                        }
                    }
                    ++result.revisions;
                    continue;
                }
                if (!nonempty(item.insecure_code) || !nonempty(item.patch)) {
                    ctx.warnings.push_back({"pair_incomplete", "dropped a pair missing one of its members"});
                    continue;
                }
                if (static_cast<int>(result.pairs.size()) >= k) break;
                result.pairs.push_back(make_pair(*item.insecure_code, *item.patch, item.vul_type, item.patch_type));
            }
        }
    } else {
        std::vector<std::string> codes, patches;
        while (static_cast<int>(result.pairs.size()) < k && result.calls < budget) {
            const int needed = std::min(options.pairs_per_call, k - static_cast<int>(result.pairs.size()));
            const bool want_code = codes.size() <= patches.size();
            const char* stage = want_code ? "generate_code" : "generate_patch";
            const std::string instruction =
                want_code ? "Generate " + std::to_string(needed) +
                                " insecure code examples only. Reply with {\"insecure_code\": [\"...\"]}."
                          : "Generate " + std::to_string(needed) +
                                " patches only. Reply with {\"patches\": [\"...\"]}.";
            auto ctx_entries = context_for(needed);
            ctx_entries.emplace_back("sub_task", instruction);
            const std::string prompt = ctx.render(TemplateId::generate, &g_sel, ctx_entries);
            ++result.calls;
            const std::string reply = ctx.complete(stage, prompt, ctx.generation_temperature);
            try {
                auto got = string_list(reply, want_code ? "insecure_code" : "patches");
                auto& dest = want_code ? codes : patches;
                dest.insert(dest.end(), got.begin(), got.end());
            } catch (const DecodeError& e) {
                ctx.warnings.push_back({"decode_retry", ctx.tag(stage) + ": " + e.what()});
                continue;
            }
            while (result.pairs.size() < std::min(codes.size(), patches.size()) &&
                   static_cast<int>(result.pairs.size()) < k) {
                const auto i = result.pairs.size();
                result.pairs.push_back(make_pair(codes[i], patches[i], std::nullopt, std::nullopt));
            }
        }
    }
    result.shortfall = static_cast<int>(result.pairs.size()) < k;
    if (result.shortfall) {
        ctx.warnings.push_back({"pair_shortfall", std::to_string(result.pairs.size()) + " of " + std::to_string(k) +
                                                      " pairs within " + std::to_string(budget) + " calls"});
    }
    return result;
}

nlohmann::json pair_row(const std::string& ir_id, const PatchPair& pair) {
    return nlohmann::json{{"ir_id", ir_id},
                          {"rank", pair.rank},
                          {"insecure_code", pair.insecure_code},
                          {"patch", pair.patch},
                          {"vul_type", pair.vul_type},
                          {"patch_type", pair.patch_type},
                          {"diff", render_unified_diff(pair.insecure_code, pair.patch)}};
}

}  // namespace patuntrack
