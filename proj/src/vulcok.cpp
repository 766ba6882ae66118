#include "patuntrack/vulcok.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <unordered_set>

#include "patuntrack/text.hpp"

namespace patuntrack {

std::vector<std::string> fallback_queries(const OpNode& node, std::size_t max_queries) {
    std::vector<std::string> queries{node.vul_type.cwe_id};
    auto add = [&](std::string q) {
        if (queries.size() < max_queries && std::find(queries.begin(), queries.end(), q) == queries.end()) {
            queries.push_back(std::move(q));
        }
    };
    auto keywords = text::keyword_tokens(node.op_desc);
    if (keywords.size() > 6) keywords.resize(6);
    if (!keywords.empty()) add(text::join(keywords, " "));
    for (std::size_t i = 0; i + 1 < keywords.size(); ++i) add(keywords[i] + " " + keywords[i + 1]);
    return queries;
}

QueryResult generate_queries(const OpNode& node, bool via_llm, StageContext* ctx, std::size_t max_queries) {
    if (via_llm && ctx != nullptr) {
        VtpGraph local{{node}, {}};
        const std::string prompt = ctx->render(
            TemplateId::halDetect, &local,
            {{"sub_task", "Write up to " + std::to_string(max_queries) +
                              " short search queries for retrieving vulnerability knowledge about the current "
                              "operation. Reply with {\"queries\": [\"...\"]}."},
             {"current_node", node.node_id}});
        auto decoded = ctx->ask<std::vector<std::string>>("queries", prompt, ctx->temperature, [&](const std::string& r) {
            for (const auto& v : embedded_json_values(r)) {
                if (v.is_object() && v.contains("queries") && v.at("queries").is_array()) {
                    std::vector<std::string> out;
                    for (const auto& q : v.at("queries")) {
                        if (q.is_string() && !text::trim(q.get<std::string>()).empty()) {
                            out.push_back(text::trim(q.get<std::string>()));
                        }
                    }
                    if (!out.empty()) {
                        if (out.size() > max_queries) out.resize(max_queries);
                        return out;
                    }
                }
            }
            throw DecodeError("no queries in reply", r);
        });
        if (decoded) return QueryResult{std::move(*decoded), false};
        ctx->warnings.push_back({"query_fallback", "query generation for " + node.node_id + " fell back"});
    }
    return QueryResult{fallback_queries(node, max_queries), true};
}

BfsResult bfs_order(const VtpGraph& g) {
    std::set<std::string> ids;
    std::set<std::string> has_incoming, has_outgoing;
    for (const auto& n : g.nodes) ids.insert(n.node_id);
    for (const auto& e : g.edges) {
        has_incoming.insert(e.to);
        has_outgoing.insert(e.from);
    }
    std::vector<std::string> roots;
    for (const auto& id : ids) {
        if (!has_incoming.count(id) && has_outgoing.count(id)) roots.push_back(id);
    }
    if (roots.empty()) {
        for (const auto& id : ids) {
            if (!has_incoming.count(id)) roots.push_back(id);
        }
    }

    BfsResult result;
    std::unordered_set<std::string> seen;
    std::deque<std::string> queue;
    for (const auto& r : roots) {
        seen.insert(r);
        queue.push_back(r);
    }
    while (!queue.empty()) {
        auto id = queue.front();
        queue.pop_front();
        result.order.push_back(id);
        for (const auto& next : g.successors(id)) {
            if (seen.insert(next).second) queue.push_back(next);
        }
    }
    for (const auto& id : ids) {
        if (!seen.count(id)) {
            result.order.push_back(id);
            result.unreachable.push_back(id);
        }
    }
    return result;
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::clean: return "clean";
        case Verdict::type_hallucination: return "type_hallucination";
        case Verdict::desc_hallucination: return "desc_hallucination";
    }
    return "clean";
}

Verdict decode_verdict(std::string_view reply) {
    auto from_word = [](const std::string& w) -> std::optional<Verdict> {
        const auto l = text::to_lower(text::trim(w));
        if (l == "clean") return Verdict::clean;
        if (l == "type_hallucination") return Verdict::type_hallucination;
        if (l == "desc_hallucination") return Verdict::desc_hallucination;
        return std::nullopt;
    };
    for (const auto& v : embedded_json_values(reply)) {
        if (v.is_object() && v.contains("verdict") && v.at("verdict").is_string()) {
            if (auto verdict = from_word(v.at("verdict").get<std::string>())) return *verdict;
        }
    }
    const auto lowered = text::to_lower(reply);
    std::vector<Verdict> named;
    for (auto v : {Verdict::clean, Verdict::type_hallucination, Verdict::desc_hallucination}) {
        if (lowered.find(to_string(v)) != std::string::npos) named.push_back(v);
    }
    if (named.size() == 1) return named.front();
    throw DecodeError("reply names no single verdict", std::string(reply));
}

namespace {

std::string knowledge_block(const std::vector<GoldenKnowledgeItem>& hits) {
    if (hits.empty()) return "(none retrieved)";
    std::string out;
    for (const auto& h : hits) {
        out += "\n  [" + h.kb_id + "] " + h.source_db + " " + h.cwe_id + " " + h.title + ": " + h.description;
        if (!h.insecure_code.empty()) out += "\n    insecure code: " + h.insecure_code;
    }
    return out;
}

VtpGraph local_graph(const OpNode& node, const std::vector<OpNode>& neighbors) {
    VtpGraph g{{node}, {}};
    for (const auto& n : neighbors) {
        if (g.find(n.node_id)) continue;
        g.nodes.push_back(n);
        g.edges.push_back({node.node_id, n.node_id});
    }
    return g;
}

std::string describe_desc(const VtpGraph& g, const std::string& id) {
    return g.find(id)->op_desc + " => [" + text::join(g.successors(id), ",") + "]";
}

CorrectionRecord rejected(const std::string& node_id, std::string note) {
    CorrectionRecord r;
    r.node_id = node_id;
    r.kind = CorrectionKind::none;
    r.note = std::move(note);
    return r;
}

}  // namespace

DetectOutcome detect_hallucination(const OpNode& node, const std::vector<OpNode>& neighbors,
                                   const std::vector<GoldenKnowledgeItem>& kb_hits, StageContext& ctx) {
    const VtpGraph local = local_graph(node, neighbors);
    std::vector<std::string> conn;
    for (const auto& n : neighbors) conn.push_back(n.node_id);
    const std::string prompt = ctx.render(TemplateId::halDetect, &local,
                                          {{"current_node", node.node_id},
                                           {"connected_operations", conn.empty() ? "(none)" : text::join(conn, ", ")},
                                           {"golden_knowledge", knowledge_block(kb_hits)}});
    auto verdict = ctx.ask<Verdict>("detect", prompt, ctx.temperature,
                                    [](const std::string& r) { return decode_verdict(r); });
    if (verdict) return DetectOutcome{*verdict, false};
    ctx.warnings.push_back({"detect_fail_open", "verdict for " + node.node_id + " undecodable; treated as clean"});
    return DetectOutcome{Verdict::clean, true};
}

std::string to_string(CorrectionKind k) {
    switch (k) {
        case CorrectionKind::none: return "none";
        case CorrectionKind::type_corrected: return "type_corrected";
        case CorrectionKind::desc_corrected: return "desc_corrected";
    }
    return "none";
}

void to_json(nlohmann::json& j, const CorrectionRecord& r) {
    j = nlohmann::json{{"node_id", r.node_id},
                       {"kind", to_string(r.kind)},
                       {"before", r.before},
                       {"after", r.after},
                       {"evidence_kb_ids", r.evidence_kb_ids}};
    if (!r.note.empty()) j["note"] = r.note;
}

CorrectionResult correct_node(const VtpGraph& g, const std::string& node_id, Verdict verdict,
                              const std::vector<GoldenKnowledgeItem>& kb_hits, StageContext& ctx) {
    if (verdict == Verdict::clean) throw UsageError("correct_node needs a hallucination verdict");
    const OpNode* node = g.find(node_id);
    if (node == nullptr) throw UsageError("unknown node " + node_id);

    CorrectionResult result{g, rejected(node_id, ""), {}};
    std::vector<OpNode> neighbors;
    for (const auto& s : g.successors(node_id)) neighbors.push_back(*g.find(s));
    const VtpGraph local = local_graph(*node, neighbors);
    const std::string prompt =
        ctx.render(TemplateId::halCorrect, &local,
                   {{"current_node", node_id},
                    {"hallucination", to_string(verdict)},
                    {"golden_knowledge", knowledge_block(kb_hits)}});

    auto reply = ctx.ask<nlohmann::json>("correct", prompt, ctx.temperature, [&](const std::string& r) {
        for (const auto& v : embedded_json_values(r)) {
            if (!v.is_object()) continue;
            if (verdict == Verdict::type_hallucination && v.contains("vul_type")) return v;
            if (verdict == Verdict::desc_hallucination && (v.contains("op_desc") || v.contains("successors"))) return v;
        }
        throw DecodeError("no correction object in reply", r);
    });
    if (!reply) {
        result.record.note = "correction reply undecodable";
        return result;
    }
    if (kb_hits.empty()) {
        result.record.note = "no retrieved knowledge to back the correction";
        return result;
    }

    VtpGraph updated = g;
    if (verdict == Verdict::type_hallucination) {
        auto backed = [&](const VulType& v, std::vector<std::string>& evidence) {
            for (const auto& h : kb_hits) {
                if (h.cwe_id == v.cwe_id) evidence.push_back(h.kb_id);
            }
            return !evidence.empty();
        };
        VulType fresh;
        try {
            fresh = normalize_vul_type(reply->at("vul_type").get<VulType>(), ctx.taxonomy);
        } catch (const nlohmann::json::exception& e) {
            result.record.note = std::string("malformed vul_type: ") + e.what();
            return result;
        }
        CorrectionRecord main;
        main.node_id = node_id;
        main.before = node->vul_type.str();
        main.after = fresh.str();
        if (fresh == node->vul_type) {
            main.note = "correction leaves the type unchanged";
        } else if (!backed(fresh, main.evidence_kb_ids)) {
            main.note = "corrected CWE " + fresh.cwe_id + " not found in retrieved knowledge";
            main.evidence_kb_ids.clear();
        } else {
            main.kind = CorrectionKind::type_corrected;
            updated.find(node_id)->vul_type = fresh;
        }

        if (reply->contains("connected") && reply->at("connected").is_object()) {
            const auto succ = g.successors(node_id);
            for (const auto& [cid, jv] : reply->at("connected").items()) {
                if (std::find(succ.begin(), succ.end(), cid) == succ.end()) {
                    ctx.warnings.push_back({"correction_ignored", "node " + cid + " is not connected to " + node_id});
                    continue;
                }
                VulType cv;
                try {
                    cv = normalize_vul_type(jv.get<VulType>(), ctx.taxonomy);
                } catch (const nlohmann::json::exception&) {
                    continue;
                }
                OpNode* target = updated.find(cid);
                CorrectionRecord rec;
                rec.node_id = cid;
                rec.before = target->vul_type.str();
                rec.after = cv.str();
                if (cv == target->vul_type || !backed(cv, rec.evidence_kb_ids)) continue;
                rec.kind = CorrectionKind::type_corrected;
                target->vul_type = cv;
                result.connected.push_back(std::move(rec));
            }
        }
        if (main.kind == CorrectionKind::none && main.note.empty()) main.note = "no change";
        main.after = main.kind == CorrectionKind::none ? main.before : main.after;
        result.record = std::move(main);
    } else {
        OpNode* target = updated.find(node_id);
        if (reply->contains("op_desc") && reply->at("op_desc").is_string() &&
            !text::trim(reply->at("op_desc").get<std::string>()).empty()) {
            target->op_desc = reply->at("op_desc").get<std::string>();
        }
        if (reply->contains("successors") && reply->at("successors").is_array()) {
            std::vector<Edge> edges;
            for (const auto& e : updated.edges) {
                if (e.from != node_id) edges.push_back(e);
            }
            for (const auto& s : reply->at("successors")) {
                if (s.is_string()) edges.push_back({node_id, s.get<std::string>()});
            }
            updated.edges = std::move(edges);
        }
        CorrectionRecord rec;
        rec.node_id = node_id;
        rec.before = describe_desc(g, node_id);
        try {
            validate(updated);
        } catch (const StructureError& e) {
            rec.after = rec.before;
            rec.note = std::string("corrected graph rejected: ") + e.what();
            result.record = std::move(rec);
            return result;
        }
        rec.after = describe_desc(updated, node_id);
        if (rec.after == rec.before) {
            rec.note = "no change";
        } else {
            rec.kind = CorrectionKind::desc_corrected;
            for (const auto& h : kb_hits) rec.evidence_kb_ids.push_back(h.kb_id);
        }
        result.record = std::move(rec);
    }

    if (result.mutated()) {
        try {
            validate(updated);
            result.graph = std::move(updated);
        } catch (const StructureError& e) {
            result.connected.clear();
            result.record = rejected(node_id, std::string("corrected graph rejected: ") + e.what());
        }
    }
    return result;
}

VulcokResult run_vulcok(const VtpGraph& g, const KnowledgeStore& store, StageContext& ctx,
                        const VulcokOptions& options) {
    validate(g);
    VulcokResult result;
    result.graph = g;
    std::set<std::string> retrieved_ids;
    std::vector<std::string> pending = bfs_order(g).order;

    auto pass = [&](int) {
        std::set<std::string> corrected;
        for (const auto& id : pending) {
            const OpNode* node = result.graph.find(id);
            if (node == nullptr) continue;
            std::vector<GoldenKnowledgeItem> hits;
            if (options.use_kb) {
                auto queries = generate_queries(*node, options.llm_queries, &ctx, options.max_queries);
                hits = store.retrieve(queries.queries, options.top_r);
                for (const auto& h : hits) {
                    if (retrieved_ids.insert(h.kb_id).second) result.retrieved.push_back(h);
                }
            }
            std::vector<OpNode> neighbors;
            for (const auto& s : result.graph.successors(id)) neighbors.push_back(*result.graph.find(s));
            const auto detection = detect_hallucination(*node, neighbors, hits, ctx);
            if (detection.verdict == Verdict::clean) continue;
            if (detection.verdict == Verdict::type_hallucination && !options.correct_types) {
                result.records.push_back(rejected(id, "type corrections disabled"));
                continue;
            }

            auto correction = correct_node(result.graph, id, detection.verdict, hits, ctx);
            if (correction.mutated()) {
                result.graph = std::move(correction.graph);
                if (correction.record.kind != CorrectionKind::none) corrected.insert(id);
                for (const auto& c : correction.connected) corrected.insert(c.node_id);
            }
            result.records.push_back(std::move(correction.record));
            for (auto& c : correction.connected) result.records.push_back(std::move(c));
        }
        if (corrected.empty()) return StepResult::done;
        std::vector<std::string> next;
        for (const auto& id : bfs_order(result.graph).order) {
            if (corrected.count(id)) next.push_back(id);
        }
        pending = std::move(next);
        return StepResult::proceed;
    };

    try {
        const auto outcome = run_bounded_loop(pass, ctx.theta);
        result.iterations = outcome.iterations;
        result.completed = outcome.completed;
    } catch (const LoopError& e) {
        result.iterations = e.iterations();
        result.completed = false;
        result.error = e.what();
    }
    return result;
}

}  // namespace patuntrack
