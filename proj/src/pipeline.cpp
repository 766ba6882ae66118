#include "patuntrack/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "patuntrack/text.hpp"

namespace patuntrack {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::no_vul_type: return "no_vul_type";
        case Ablation::no_completer: return "no_completer";
        case Ablation::no_extractor: return "no_extractor";
        case Ablation::no_vulcok: return "no_vulcok";
        case Ablation::cok_plain: return "cok_plain";
        case Ablation::no_patch_type: return "no_patch_type";
        case Ablation::no_joint: return "no_joint";
        case Ablation::no_focus_list: return "no_focus_list";
        case Ablation::no_autoprompt: return "no_autoprompt";
        case Ablation::icl_stub: return "icl_stub";
    }
    return "no_vul_type";
}

Ablation ablation_from_string(std::string_view s) {
    for (auto a : kAllAblations) {
        if (to_string(a) == s) return a;
    }
    throw UsageError("unknown ablation: " + std::string(s));
}

std::uint64_t PipelineConfig::seed(const std::string& purpose) const {
    auto it = seeds.find(purpose);
    return it == seeds.end() ? 0 : it->second;
}

std::vector<std::string> PipelineConfig::ablation_names() const {
    std::vector<std::string> out;
    for (auto a : ablations) out.push_back(to_string(a));
    std::sort(out.begin(), out.end());
    return out;
}

void PipelineConfig::check() const {
    if (theta < 1) throw UsageError("theta must be >= 1");
    if (k < 1) throw UsageError("k must be >= 1");
    if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("tau must be in (0, 1]");
    if (concurrency < 1) throw UsageError("concurrency must be >= 1");
    if (top_r < 1) throw UsageError("top_r must be >= 1");
    if (penalty < 0) throw UsageError("penalty must be >= 0");
    if (!(mask_fraction > 0.0 && mask_fraction <= 1.0)) throw UsageError("mask_fraction must be in (0, 1]");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (patience < 0) throw UsageError("patience must be >= 0");
    if (pairs_per_call < 1) throw UsageError("pairs_per_call must be >= 1");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw UsageError("split_ratio must be in (0, 1)");
    if (temperature < 0 || generation_temperature < 0) throw UsageError("temperatures must be >= 0");
    if (max_tokens < 1) throw UsageError("max_tokens must be >= 1");
    for (const auto& [name, _] : taxonomies) {
        if (name != "error_types" && name != "patch_types") throw UsageError("unknown taxonomy: " + name);
    }
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{{"backend", c.backend},
                       {"theta", c.theta},
                       {"k", c.k},
                       {"seeds", c.seeds},
                       {"distance_mode", to_string(c.distance_mode)},
                       {"taxonomies", c.taxonomies},
                       {"ablations", c.ablation_names()},
                       {"verdict_provider", to_string(c.verdict_provider)},
                       {"tau", c.tau},
                       {"concurrency", c.concurrency},
                       {"top_r", c.top_r},
                       {"penalty", c.penalty},
                       {"mask_fraction", c.mask_fraction},
                       {"epochs", c.epochs},
                       {"patience", c.patience},
                       {"pairs_per_call", c.pairs_per_call},
                       {"llm_queries", c.llm_queries},
                       {"full_gt", c.full_gt},
                       {"split_ratio", c.split_ratio},
                       {"temperature", c.temperature},
                       {"generation_temperature", c.generation_temperature},
                       {"max_tokens", c.max_tokens},
                       {"record_timings", c.record_timings}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    static const std::set<std::string> kKeys = {
        "backend",     "theta",          "k",           "seeds",          "distance_mode", "taxonomies",
        "ablations",   "verdict_provider", "tau",       "concurrency",    "top_r",         "penalty",
        "mask_fraction", "epochs",       "patience",    "pairs_per_call", "llm_queries",   "full_gt",
        "split_ratio", "temperature",    "generation_temperature", "max_tokens", "record_timings"};
    for (const auto& [key, _] : j.items()) {
        if (!kKeys.count(key)) throw UsageError("unknown config key: " + key);
    }
    PipelineConfig c;
    try {
        if (j.contains("backend")) c.backend = j.at("backend").get<BackendConfig>();
        c.theta = j.value("theta", c.theta);
        c.k = j.value("k", c.k);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
        if (j.contains("distance_mode")) c.distance_mode = distance_mode_from_string(j.at("distance_mode").get<std::string>());
        if (j.contains("taxonomies")) c.taxonomies = j.at("taxonomies").get<std::map<std::string, std::string>>();
        for (const auto& a : j.value("ablations", std::vector<std::string>{})) c.ablations.insert(ablation_from_string(a));
        if (j.contains("verdict_provider")) {
            c.verdict_provider = verdict_provider_from_string(j.at("verdict_provider").get<std::string>());
        }
        c.tau = j.value("tau", c.tau);
        c.concurrency = j.value("concurrency", c.concurrency);
        c.top_r = j.value("top_r", c.top_r);
        c.penalty = j.value("penalty", c.penalty);
        c.mask_fraction = j.value("mask_fraction", c.mask_fraction);
        c.epochs = j.value("epochs", c.epochs);
        c.patience = j.value("patience", c.patience);
        c.pairs_per_call = j.value("pairs_per_call", c.pairs_per_call);
        c.llm_queries = j.value("llm_queries", c.llm_queries);
        c.full_gt = j.value("full_gt", c.full_gt);
        c.split_ratio = j.value("split_ratio", c.split_ratio);
        c.temperature = j.value("temperature", c.temperature);
        c.generation_temperature = j.value("generation_temperature", c.generation_temperature);
        c.max_tokens = j.value("max_tokens", c.max_tokens);
        c.record_timings = j.value("record_timings", c.record_timings);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    c.check();
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
    auto c = pipeline_config_from_json(j);
    const auto base = std::filesystem::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.backend.script_path);
    for (auto& [_, p] : c.taxonomies) resolve(p);
    return c;
}

Taxonomy load_taxonomy(const PipelineConfig& cfg) {
    Taxonomy t = Taxonomy::defaults();
    for (const auto& [name, path] : cfg.taxonomies) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open taxonomy: " + path);
        nlohmann::json j;
        try {
            in >> j;
            if (j.is_object()) j = j.at(name);
            auto names = j.get<std::vector<std::string>>();
            if (names.empty()) throw UsageError("taxonomy " + path + " is empty");
            (name == "error_types" ? t.error_types : t.patch_types) = std::move(names);
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("taxonomy " + path + ": " + e.what());
        }
    }
    return t;
}

// --------------------------------------------------------------------------

VtpGraph merge_completion(const VtpGraph& g, const VtpGraph& additions) {
    VtpGraph out = g;
    for (const auto& n : additions.nodes) {
        OpNode* existing = out.find(n.node_id);
        if (existing == nullptr) {
            out.nodes.push_back(n);
            continue;
        }
        existing->op_type = n.op_type;
        if (!text::trim(n.op_desc).empty()) existing->op_desc = n.op_desc;
        if (n.vul_type.cwe_known()) existing->vul_type.cwe_id = n.vul_type.cwe_id;
        if (n.vul_type.error_known()) existing->vul_type.error_type = n.vul_type.error_type;
    }
    for (const auto& e : additions.edges) {
        if (std::find(out.edges.begin(), out.edges.end(), e) == out.edges.end()) out.edges.push_back(e);
    }
    return out;
}

namespace {

VtpGraph decode_completion(const VtpGraph& g, const std::string& reply) {
    std::string last_error = "reply holds no graph object";
    for (const auto& v : embedded_json_values(reply)) {
        const nlohmann::json* obj = &v;
        if (v.is_object() && v.contains("graph")) obj = &v.at("graph");
        if (!obj->is_object() || !obj->contains("nodes")) continue;
        try {
            auto merged = merge_completion(g, graph_from_json(*obj));
            validate(merged);
            return merged;
        } catch (const Error& e) {
            last_error = e.what();
        } catch (const nlohmann::json::exception& e) {
            last_error = e.what();
        }
    }
    throw DecodeError(last_error, reply);
}

VtpGraph prepare_graph(VtpGraph g, const PipelineConfig& cfg, const Taxonomy& taxonomy) {
    for (auto& n : g.nodes) n.vul_type = cfg.has(Ablation::no_vul_type) ? VulType{} : normalize_vul_type(n.vul_type, taxonomy);
    return g;
}

}  // namespace

VtpOutcome generate_vtp(StageContext& ctx, const PipelineConfig& cfg) {
    VtpGraph g;
    if (cfg.has(Ablation::no_extractor)) {
        g.nodes.push_back(OpNode{node_id_for_index(0), OpType::VulTrigger, ctx.ir.title, VulType{}});
    } else {
        auto extracted = ctx.ask<VtpGraph>("extract", ctx.render(TemplateId::extract, nullptr), ctx.temperature,
                                           [](const std::string& r) { return parse_vtp_reply(r); });
        if (!extracted) {
            throw StageFailure("extract", "no decodable VTP after " + std::to_string(ctx.theta) + " attempts");
        }
        g = *extracted;
    }
    g = prepare_graph(std::move(g), cfg, ctx.taxonomy);

    const CompletenessOptions copts{cfg.has(Ablation::no_vul_type)};
    auto step = [&](int iteration) {
        const auto report = check_completeness(g, copts);
        if (report.complete || cfg.has(Ablation::no_completer)) return StepResult::done;
        const std::string prompt = ctx.render(TemplateId::complete, &g, {{"missing", report.describe()}});
        const std::string reply = ctx.complete("complete", prompt, ctx.temperature);
        try {
            g = prepare_graph(decode_completion(g, reply), cfg, ctx.taxonomy);
        } catch (const DecodeError& e) {
            ctx.warnings.push_back(
                {"decode_retry", ctx.tag("complete") + " iteration " + std::to_string(iteration) + ": " + e.what()});
            return StepResult::proceed;
        }
        return check_completeness(g, copts).complete ? StepResult::done : StepResult::proceed;
    };
    const auto loop = run_bounded_loop(step, ctx.theta);
    VtpOutcome out;
    out.iterations = loop.iterations;
    out.completed = check_completeness(g, copts).complete;
    out.graph = std::move(g);
    if (!out.completed) {
        ctx.warnings.push_back({"vtp_incomplete", "VTP still incomplete after " + std::to_string(out.iterations) +
                                                      " iterations"});
    }
    return out;
}

// --------------------------------------------------------------------------

namespace {

CorrectionKind correction_kind_from_string(const std::string& s) {
    if (s == "type_corrected") return CorrectionKind::type_corrected;
    if (s == "desc_corrected") return CorrectionKind::desc_corrected;
    return CorrectionKind::none;
}

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void to_json(nlohmann::json& j, const RunRecord& r) {
    j = nlohmann::json{{"ir_id", r.ir_id},
                       {"status", r.status},
                       {"failed_stage", opt(r.failed_stage)},
                       {"error", opt(r.error)},
                       {"iterations", r.iterations},
                       {"vtp_completed", r.vtp_completed},
                       {"vulcok_iterations", r.vulcok_iterations},
                       {"vtp_before", r.vtp_before},
                       {"vtp_after", r.vtp_after},
                       {"graph", opt(r.graph)},
                       {"corrections", r.corrections},
                       {"prediction", opt(r.prediction)},
                       {"pairs", r.pairs},
                       {"shortfall", r.shortfall},
                       {"gateway_calls", r.gateway_calls},
                       {"focus_entries_used", r.focus_entries_used},
                       {"warnings", r.warnings}};
    if (!r.timings_ms.empty()) j["timings_ms"] = r.timings_ms;
}

RunRecord run_record_from_json(const nlohmann::json& j) {
    RunRecord r;
    try {
        r.ir_id = j.at("ir_id").get<std::string>();
        r.status = j.value("status", std::string("ok"));
        if (j.contains("failed_stage") && j.at("failed_stage").is_string()) r.failed_stage = j.at("failed_stage");
        if (j.contains("error") && j.at("error").is_string()) r.error = j.at("error");
        r.iterations = j.value("iterations", 0);
        r.vtp_completed = j.value("vtp_completed", false);
        r.vulcok_iterations = j.value("vulcok_iterations", 0);
        r.vtp_before = j.value("vtp_before", std::string{});
        r.vtp_after = j.value("vtp_after", std::string{});
        if (j.contains("graph") && j.at("graph").is_object()) r.graph = graph_from_json(j.at("graph"));
        for (const auto& c : j.value("corrections", nlohmann::json::array())) {
            CorrectionRecord rec;
            rec.node_id = c.at("node_id").get<std::string>();
            rec.kind = correction_kind_from_string(c.value("kind", std::string("none")));
            rec.before = c.value("before", std::string{});
            rec.after = c.value("after", std::string{});
            rec.evidence_kb_ids = c.value("evidence_kb_ids", std::vector<std::string>{});
            rec.note = c.value("note", std::string{});
            r.corrections.push_back(std::move(rec));
        }
        if (j.contains("prediction") && j.at("prediction").is_object()) {
            const auto& p = j.at("prediction");
            r.prediction = PatchTypePrediction{p.value("patch_type", std::string(kUnknownPatch)),
                                               p.value("confidence_freq", 0.0)};
        }
        for (const auto& p : j.value("pairs", nlohmann::json::array())) r.pairs.push_back(patch_pair_from_json(p));
        r.shortfall = j.value("shortfall", false);
        r.gateway_calls = j.value("gateway_calls", std::map<std::string, int>{});
        r.focus_entries_used = j.value("focus_entries_used", std::size_t{0});
        for (const auto& w : j.value("warnings", nlohmann::json::array())) {
            r.warnings.push_back({w.value("code", std::string{}), w.value("message", std::string{})});
        }
        r.timings_ms = j.value("timings_ms", std::map<std::string, double>{});
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("run record: ") + e.what());
    }
    return r;
}

StageContext make_context(const PipelineDeps& deps, const IssueReport& ir, const PipelineConfig& cfg) {
    StageContext ctx(deps.gateway, deps.templates, deps.taxonomy, ir);
    ctx.theta = cfg.theta;
    ctx.render_options.hide_vul_types = cfg.has(Ablation::no_vul_type);
    ctx.render_options.omit_focus_list = cfg.has(Ablation::no_focus_list);
    ctx.temperature = cfg.temperature;
    ctx.generation_temperature = cfg.generation_temperature;
    ctx.max_tokens = cfg.max_tokens;
    return ctx;
}

namespace {

VulcokOptions vulcok_options(const PipelineConfig& cfg) {
    VulcokOptions o;
    o.use_kb = !cfg.has(Ablation::cok_plain);
    o.correct_types = !cfg.has(Ablation::no_vul_type);
    o.llm_queries = cfg.llm_queries;
    o.top_r = cfg.top_r;
    return o;
}

class StageClock {
public:
    StageClock(bool enabled, std::map<std::string, double>& sink) : enabled_(enabled), sink_(sink) {}

    template <typename F>
    auto operator()(const std::string& stage, F&& f) {
        if (!enabled_) return f();
        const auto start = std::chrono::steady_clock::now();
        struct Stop {
            std::chrono::steady_clock::time_point start;
            double& slot;
            ~Stop() {
                slot = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            }
        } stop{start, sink_[stage]};
        return f();
    }

private:
    bool enabled_;
    std::map<std::string, double>& sink_;
};

}  // namespace

RunRecord run_ir(const IssueReport& ir, const PipelineConfig& cfg, const PipelineDeps& deps, const Predictor& predict) {
    RunRecord rec;
    rec.ir_id = ir.id;
    StageContext ctx = make_context(deps, ir, cfg);
    StageClock clock(cfg.record_timings, rec.timings_ms);
    std::string stage = "vtp";
    try {
        auto vtp = clock("vtp", [&] { return generate_vtp(ctx, cfg); });
        rec.iterations = vtp.iterations;
        rec.vtp_completed = vtp.completed;
        rec.vtp_before = canonical_serialize(vtp.graph);
        VtpGraph g = std::move(vtp.graph);

        stage = "vulcok";
        if (!cfg.has(Ablation::no_vulcok)) {
            auto result = clock("vulcok", [&] { return run_vulcok(g, deps.store, ctx, vulcok_options(cfg)); });
            rec.vulcok_iterations = result.iterations;
            rec.corrections = std::move(result.records);
            if (result.error) throw StageFailure("vulcok", *result.error);
            if (!result.completed) {
                ctx.warnings.push_back({"vulcok_cap", "corrections still pending after " +
                                                          std::to_string(result.iterations) + " passes"});
            }
            g = std::move(result.graph);
        }
        rec.vtp_after = canonical_serialize(g);
        rec.graph = g;

        stage = "type_predict";
        if (cfg.has(Ablation::no_patch_type)) {
            rec.prediction = PatchTypePrediction{};
        } else {
            rec.prediction = clock("type_predict", [&] { return predict(g, ctx); });
        }

        stage = "generate";
        auto generated = clock("generate", [&] {
            const VtpGraph selected = select_developer_subgraph(g, ctx);
            return generate_pairs(selected, *rec.prediction, cfg.k, ctx,
                                  GenerateOptions{!cfg.has(Ablation::no_joint), cfg.pairs_per_call});
        });
        rec.pairs = std::move(generated.pairs);
        rec.shortfall = generated.shortfall;
    } catch (const StageFailure& e) {
        rec.status = "failed";
        rec.failed_stage = e.stage();
        rec.error = e.what();
    } catch (const std::exception& e) {
        rec.status = "failed";
        rec.failed_stage = stage;
        rec.error = e.what();
    }
    rec.gateway_calls = ctx.calls;
    rec.focus_entries_used = ctx.focus_entries_rendered;
    rec.warnings = std::move(ctx.warnings);
    return rec;
}

RunRecord run_ir(const IssueReport& ir, const PipelineConfig& cfg, const PipelineDeps& deps, CooccurrenceTable& table) {
    return run_ir(ir, cfg, deps,
                  [&](const VtpGraph& g, StageContext& ctx) { return predict_and_record(g, table, ctx); });
}

ReportHeader report_header(const PipelineConfig& cfg) {
    ReportHeader h;
    h.ablations = cfg.ablation_names();
    h.k = cfg.k;
    h.verdict_provider = to_string(cfg.verdict_provider);
    h.tau = cfg.tau;
    h.distance_mode = cfg.distance_mode;
    h.full_gt = cfg.full_gt;
    return h;
}

EvalReport evaluate_records(const std::vector<RunRecord>& records, const std::vector<IssueReport>& irs,
                            const PipelineConfig& cfg) {
    std::map<std::string, const IssueReport*> by_id;
    for (const auto& ir : irs) by_id[ir.id] = &ir;
    const auto provider = make_verdict_provider(cfg.verdict_provider, cfg.tau);
    std::vector<IrEvaluation> evaluations;
    Diagnostics warnings;
    for (const auto& r : records) {
        auto it = by_id.find(r.ir_id);
        if (it == by_id.end()) {
            warnings.push_back({"record_without_ir", "no issue report with id " + r.ir_id});
            continue;
        }
        std::optional<VulType> vul;
        if (r.graph) vul = r.graph->primary_vul_type();
        std::optional<std::string> patch;
        if (r.prediction) patch = r.prediction->patch_type;
        evaluations.push_back(evaluate_ir(*it->second, r.pairs, r.iterations, r.failed(), vul, patch, *provider,
                                          EvaluateOptions{cfg.full_gt}));
    }
    auto report = build_report(report_header(cfg), std::move(evaluations));
    report.warnings.insert(report.warnings.end(), warnings.begin(), warnings.end());
    return report;
}

CorpusRun run_corpus(const std::vector<IssueReport>& eval_set, const PipelineConfig& cfg, const PipelineDeps& deps,
                     CooccurrenceTable table) {
    cfg.check();
    const std::size_t n = eval_set.size();
    std::vector<RunRecord> records(n);

    std::mutex turn_mutex;
    std::condition_variable turn_cv;
    std::size_t next_turn = 0;
    auto wait_turn = [&](std::size_t i) {
        std::unique_lock lock(turn_mutex);
        turn_cv.wait(lock, [&] { return next_turn == i; });
    };
    auto pass_turn = [&](std::size_t i) {
        {
            std::lock_guard lock(turn_mutex);
            next_turn = i + 1;
        }
        turn_cv.notify_all();
    };

    std::atomic<std::size_t> next_index{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next_index.fetch_add(1);
            if (i >= n) return;
            bool took_turn = false;
            Predictor predict = [&](const VtpGraph& g, StageContext& ctx) {
                wait_turn(i);
                took_turn = true;
                return predict_and_record(g, table, ctx);
            };
            records[i] = run_ir(eval_set[i], cfg, deps, predict);
            if (!took_turn) wait_turn(i);
            pass_turn(i);
        }
    };

    const auto workers = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(cfg.concurrency),
                                                                        std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    CorpusRun run;
    run.report = evaluate_records(records, eval_set, cfg);
    run.records = std::move(records);
    run.table = std::move(table);
    return run;
}

// --------------------------------------------------------------------------

std::optional<std::string> bootstrap_gt_vtp(const IssueReport& ir, const PipelineDeps& deps,
                                            const PipelineConfig& cfg) {
    if (!ir.gt_insecure_code || ir.gt_insecure_code->empty()) return std::nullopt;
    IssueReport code_only;
    code_only.id = ir.id;
    code_only.title = ir.title;
    code_only.body_segments = {Segment{SegmentKind::code, *ir.gt_insecure_code}};
    StageContext ctx = make_context(deps, code_only, cfg);
    auto g = ctx.ask<VtpGraph>("bootstrap", ctx.render(TemplateId::extract, nullptr), ctx.temperature,
                               [](const std::string& r) { return parse_vtp_reply(r); });
    if (!g) return std::nullopt;
    return canonical_serialize(prepare_graph(std::move(*g), cfg, deps.taxonomy));
}

namespace {

std::vector<std::string> fill_masks(StageContext& ctx, const MaskResult& mask) {
    std::vector<std::string> predictions(mask.hidden.size());
    if (mask.hidden.empty()) return predictions;
    std::string tokens;
    for (const auto& h : mask.hidden) tokens += (tokens.empty() ? "" : ", ") + h.mask_token;
    const std::string prompt =
        "Fill in the masked spans (" + tokens +
        ") of the issue report below with the text they most likely hid. Reply with one JSON object mapping each "
        "mask token to its text, for example {\"" +
        mask.hidden.front().mask_token + "\": \"...\"}.\n\n" + mask.masked_text;
    auto decoded = ctx.ask<std::vector<std::string>>("fill_mask", prompt, ctx.temperature, [&](const std::string& r) {
        for (const auto& v : embedded_json_values(r)) {
            if (!v.is_object()) continue;
            std::vector<std::string> out(mask.hidden.size());
            bool any = false;
            for (std::size_t i = 0; i < mask.hidden.size(); ++i) {
                const auto& token = mask.hidden[i].mask_token;
                const std::string bare = token.substr(1, token.size() - 2);
                for (const auto& key : {token, bare}) {
                    if (v.contains(key) && v.at(key).is_string()) {
                        out[i] = v.at(key).get<std::string>();
                        any = true;
                        break;
                    }
                }
            }
            if (any) return out;
        }
        throw DecodeError("reply fills no mask token", r);
    });
    if (decoded) predictions = std::move(*decoded);
    return predictions;
}

}  // namespace

SampleScorer stage_scorer(TemplateId id, const TemplateSet& base, const PipelineConfig& cfg,
                          const PipelineDeps& deps) {
    const ScoreConfig score_cfg{cfg.distance_mode, cfg.penalty, 1};
    return [id, base, cfg, score_cfg, &deps](const PromptTemplate& t, const TrainingSample& sample) {
        TemplateSet templates = base;
        templates.set(t);
        const PipelineDeps local{deps.gateway, templates, deps.taxonomy, deps.store};
        StageContext ctx = make_context(local, sample.ir, cfg);
        auto vtp = generate_vtp(ctx, cfg);
        switch (id) {
            case TemplateId::extract:
            case TemplateId::complete: {
                const auto mask = mask_nodes(vtp.graph, sample.ir.tagged_text(),
                                             MaskOptions{cfg.mask_fraction, cfg.seed("mask"), 8});
                std::vector<std::string> hidden;
                for (const auto& h : mask.hidden) hidden.push_back(h.original_text);
                return score_extract_complete(sample, vtp.graph, hidden, fill_masks(ctx, mask), score_cfg);
            }
            case TemplateId::halDetect:
            case TemplateId::halCorrect: {
                auto result = run_vulcok(vtp.graph, deps.store, ctx, vulcok_options(cfg));
                if (result.error) throw StageFailure("vulcok", *result.error);
                return score_vulcok(sample, result.retrieved, score_cfg);
            }
            case TemplateId::typePredict:
            case TemplateId::generate: {
                VtpGraph g = vtp.graph;
                if (!cfg.has(Ablation::no_vulcok)) {
                    auto result = run_vulcok(g, deps.store, ctx, vulcok_options(cfg));
                    if (result.error) throw StageFailure("vulcok", *result.error);
                    g = std::move(result.graph);
                }
                CooccurrenceTable scratch;
                const auto pred =
                    cfg.has(Ablation::no_patch_type) ? PatchTypePrediction{} : predict_patch_type(g, scratch, ctx);
                const auto generated =
                    generate_pairs(select_developer_subgraph(g, ctx), pred, cfg.k, ctx,
                                   GenerateOptions{!cfg.has(Ablation::no_joint), cfg.pairs_per_call});
                return score_generate_topk(sample, generated.pairs, score_cfg);
            }
        }
        throw UsageError("unknown template");
    };
}

OptimizeAllResult optimize_all(const std::vector<IssueReport>& prompt_set, const PipelineConfig& cfg,
                               const PipelineDeps& deps,
                               const std::function<void(const EpochRecord&, const PromptTemplate&)>& on_epoch) {
    if (prompt_set.empty()) throw OptimizerError("the prompt set is empty");
    OptimizeAllResult result{deps.templates, {}, {}};
    if (cfg.has(Ablation::no_autoprompt)) return result;

    std::vector<TrainingSample> samples;
    for (const auto& ir : prompt_set) {
        if (!ir.label_complete()) {
            result.warnings.push_back({"sample_skipped", ir.id + " lacks code labels"});
            continue;
        }
        IssueReport labeled = ir;
        if (!labeled.gt_vtp_serialized || labeled.gt_vtp_serialized->empty()) {
            labeled.gt_vtp_serialized = bootstrap_gt_vtp(ir, deps, cfg);
            if (!labeled.gt_vtp_serialized) {
                result.warnings.push_back({"sample_skipped", ir.id + " has no ground-truth VTP"});
                continue;
            }
            result.warnings.push_back({"gt_vtp_bootstrapped", ir.id + " uses an unverified bootstrapped VTP"});
        }
        samples.push_back(training_sample(labeled));
    }
    if (samples.empty()) throw OptimizerError("no usable training samples");

    if (cfg.has(Ablation::icl_stub)) {
        for (auto id : kAllTemplates) {
            PromptTemplate t = result.templates.get(id);
            for (const auto& s : samples) {
                const auto lines = text::normalized_lines(s.gt_insecure_code);
                const FocusEntry exemplar{normalize_vul_type(s.ir.vul_type_label.value_or(VulType{}), deps.taxonomy),
                                          "Exemplar insecure statement: " + (lines.empty() ? "" : lines.front())};
                t.focus_list = mutate_focus(std::move(t.focus_list), MutationAction::insert, exemplar).focus_list;
            }
            ++t.version;
            result.templates.set(t);
        }
        return result;
    }

    const auto source = llm_candidate_source(deps.gateway, deps.taxonomy, cfg.theta);
    const OptimizeOptions options{cfg.epochs, cfg.patience, cfg.penalty};
    for (auto id : kAllTemplates) {
        const auto scorer = stage_scorer(id, result.templates, cfg, deps);
        auto optimized = optimize_prompt(result.templates.get(id), samples, scorer, source, options, on_epoch);
        result.templates.set(optimized.best);
        result.history[id] = std::move(optimized.history);
    }
    return result;
}

}  // namespace patuntrack
