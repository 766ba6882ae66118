#include "patuntrack/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "patuntrack/error.hpp"
#include "patuntrack/text.hpp"

namespace patuntrack {

double match_rate(const std::vector<std::string>& generated, const std::vector<std::string>& target) {
    if (target.empty()) return generated.empty() ? 1.0 : 0.0;
    std::unordered_map<std::string, long> available;
    for (const auto& g : generated) ++available[normalize_line(g)];
    std::size_t matched = 0;
    for (const auto& t : target) {
        auto it = available.find(normalize_line(t));
        if (it != available.end() && it->second > 0) {
            --it->second;
            ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(target.size());
}

std::vector<std::string> added_lines(const PatchPair& pair) {
    return ground_truth_diff(pair.insecure_code, pair.patch).plus_lines;
}

MatchScores candidate_match(const PatchPair& pair, const GroundTruthDiff& gt,
                            const std::optional<std::string>& full_gt_code) {
    const auto code_lines = text::normalized_lines(pair.insecure_code);
    std::vector<std::string> line_target;
    if (full_gt_code) {
        line_target = text::normalized_lines(*full_gt_code);
    } else {
        line_target = gt.minus_lines;
        line_target.insert(line_target.end(), gt.context_lines.begin(), gt.context_lines.end());
    }
    return MatchScores{match_rate(code_lines, line_target), match_rate(code_lines, gt.minus_lines),
                       match_rate(added_lines(pair), gt.plus_lines)};
}

MatchScores match_metrics(const std::vector<PatchPair>& candidates, const GroundTruthDiff& gt,
                          const std::optional<std::string>& full_gt_code) {
    MatchScores best;
    for (const auto& c : candidates) {
        const auto s = candidate_match(c, gt, full_gt_code);
        best.line = std::max(best.line, s.line);
        best.trig = std::max(best.trig, s.trig);
        best.fix = std::max(best.fix, s.fix);
    }
    return best;
}

TrigFix trig_fix_at_k(const std::vector<std::vector<CandidateVerdict>>& verdicts, int k) {
    if (k < 1) throw UsageError("k must be >= 1");
    if (verdicts.empty()) return {};
    std::size_t triggered = 0, fixed = 0;
    for (const auto& ir : verdicts) {
        bool t = false, f = false;
        for (const auto& v : ir) {
            if (v.rank() > k) continue;
            t = t || v.triggered();
            f = f || (v.triggered() && v.fixed());
        }
        triggered += t;
        fixed += f;
    }
    const auto n = static_cast<double>(verdicts.size());
    return TrigFix{static_cast<double>(triggered) / n, static_cast<double>(fixed) / n};
}

double acc_type(const std::vector<VulType>& predicted, const std::vector<VulType>& gt) {
    if (predicted.empty()) throw UsageError("acc_type: no IRs to score");
    if (predicted.size() != gt.size()) throw UsageError("acc_type: prediction and label counts differ");
    std::size_t cwe = 0, err = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        cwe += predicted[i].cwe_id == gt[i].cwe_id;
        err += predicted[i].error_type == gt[i].error_type;
    }
    const auto n = static_cast<double>(predicted.size());
    return (static_cast<double>(cwe) / n + static_cast<double>(err) / n) / 2.0;
}

double acc_patch_type(const std::vector<std::string>& predicted, const std::vector<std::string>& gt) {
    if (predicted.empty()) throw UsageError("acc_patch_type: no IRs to score");
    if (predicted.size() != gt.size()) throw UsageError("acc_patch_type: prediction and label counts differ");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == gt[i];
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

std::string to_string(IterBucket b) {
    switch (b) {
        case IterBucket::iter_1_3: return "iter_1_3";
        case IterBucket::iter_4_7: return "iter_4_7";
        case IterBucket::iter_8_plus: return "iter_8_plus";
    }
    return "iter_1_3";
}

IterBucket bucket_for(int iterations) {
    if (iterations < 4) return IterBucket::iter_1_3;
    if (iterations < 8) return IterBucket::iter_4_7;
    return IterBucket::iter_8_plus;
}

std::string to_string(VerdictProviderKind k) { return k == VerdictProviderKind::dataset ? "dataset" : "threshold"; }

VerdictProviderKind verdict_provider_from_string(std::string_view s) {
    if (s == "dataset") return VerdictProviderKind::dataset;
    if (s == "threshold") return VerdictProviderKind::threshold;
    throw UsageError("unknown verdict provider: " + std::string(s));
}

std::optional<std::vector<CandidateVerdict>> DatasetVerdicts::verdicts(const IssueReport& ir,
                                                                       const std::vector<PatchPair>&) const {
    return ir.verdicts;
}

ThresholdVerdicts::ThresholdVerdicts(double tau) : tau_(tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw UsageError("tau must be in (0, 1]");
}

std::optional<std::vector<CandidateVerdict>> ThresholdVerdicts::verdicts(const IssueReport& ir,
                                                                         const std::vector<PatchPair>& pairs) const {
    if (!ir.label_complete()) return std::nullopt;
    const auto gt = ground_truth_diff(*ir.gt_insecure_code, *ir.gt_patch);
    std::vector<CandidateVerdict> out;
    for (const auto& p : pairs) {
        const auto s = candidate_match(p, gt);
        const bool triggered = s.trig >= tau_;
        out.emplace_back(ir.id, p.rank, triggered, triggered && s.fix >= tau_);
    }
    return out;
}

std::unique_ptr<VerdictProvider> make_verdict_provider(VerdictProviderKind kind, double tau) {
    if (kind == VerdictProviderKind::dataset) return std::make_unique<DatasetVerdicts>();
    return std::make_unique<ThresholdVerdicts>(tau);
}

IrEvaluation evaluate_ir(const IssueReport& ir, const std::vector<PatchPair>& pairs, int iterations, bool failed,
                         const std::optional<VulType>& predicted_vul_type,
                         const std::optional<std::string>& predicted_patch_type, const VerdictProvider& provider,
                         const EvaluateOptions& options) {
    IrEvaluation e;
    e.ir_id = ir.id;
    e.iterations = iterations;
    e.failed = failed;
    if (ir.label_complete()) {
        const auto gt = ground_truth_diff(*ir.gt_insecure_code, *ir.gt_patch);
        e.match = match_metrics(pairs, gt, options.full_gt ? ir.gt_insecure_code : std::nullopt);
    }
    e.verdicts = provider.verdicts(ir, pairs);
    if (ir.vul_type_label && predicted_vul_type) {
        e.gt_vul_type = ir.vul_type_label;
        e.predicted_vul_type = predicted_vul_type;
    }
    if (ir.patch_type_label && predicted_patch_type) {
        e.gt_patch_type = ir.patch_type_label;
        e.predicted_patch_type = predicted_patch_type;
    }
    return e;
}

MetricBlock aggregate(const std::vector<IrEvaluation>& evaluations, const std::vector<int>& ks) {
    MetricBlock b;
    b.ir_count = evaluations.size();
    double line = 0, trig = 0, fix = 0;
    std::vector<std::vector<CandidateVerdict>> verdicts;
    std::vector<VulType> pred_types, gt_types;
    std::vector<std::string> pred_patch, gt_patch;
    for (const auto& e : evaluations) {
        if (e.match) {
            ++b.matched_ir_count;
            line += e.match->line;
            trig += e.match->trig;
            fix += e.match->fix;
        }
        if (e.verdicts) verdicts.push_back(*e.verdicts);
        if (e.predicted_vul_type && e.gt_vul_type) {
            pred_types.push_back(*e.predicted_vul_type);
            gt_types.push_back(*e.gt_vul_type);
        }
        if (e.predicted_patch_type && e.gt_patch_type) {
            pred_patch.push_back(*e.predicted_patch_type);
            gt_patch.push_back(*e.gt_patch_type);
        }
    }
    if (b.matched_ir_count > 0) {
        const auto n = static_cast<double>(b.matched_ir_count);
        b.match_line = line / n;
        b.match_trig = trig / n;
        b.match_fix = fix / n;
    }
    b.verdict_ir_count = verdicts.size();
    if (!verdicts.empty()) {
        for (int k : ks) {
            const auto tf = trig_fix_at_k(verdicts, k);
            b.trig_at[k] = tf.trig;
            b.fix_at[k] = tf.fix;
        }
    }
    if (!pred_types.empty()) b.acc_type = acc_type(pred_types, gt_types);
    if (!pred_patch.empty()) b.acc_patch_type = acc_patch_type(pred_patch, gt_patch);
    return b;
}

std::map<IterBucket, std::vector<IrEvaluation>> bucket_by_iterations(const std::vector<IrEvaluation>& evaluations) {
    std::map<IterBucket, std::vector<IrEvaluation>> out;
    for (auto b : kAllBuckets) out[b];
    for (const auto& e : evaluations) out[bucket_for(e.iterations)].push_back(e);
    return out;
}

EvalReport build_report(ReportHeader header, std::vector<IrEvaluation> evaluations) {
    std::sort(evaluations.begin(), evaluations.end(),
              [](const IrEvaluation& a, const IrEvaluation& b) { return a.ir_id < b.ir_id; });
    EvalReport r;
    r.header = std::move(header);
    std::sort(r.header.ablations.begin(), r.header.ablations.end());
    if (std::find(r.header.ks.begin(), r.header.ks.end(), r.header.k) == r.header.ks.end()) {
        r.header.ks.push_back(r.header.k);
    }
    std::sort(r.header.ks.begin(), r.header.ks.end());
    r.header.ks.erase(std::unique(r.header.ks.begin(), r.header.ks.end()), r.header.ks.end());
    for (const auto& e : evaluations) r.failed_count += e.failed;
    r.overall = aggregate(evaluations, r.header.ks);
    for (const auto& [bucket, members] : bucket_by_iterations(evaluations)) {
        r.buckets[bucket] = aggregate(members, r.header.ks);
    }
    if (evaluations.empty()) r.warnings.push_back({"empty_eval_set", "no issue reports were evaluated"});
    r.per_ir = std::move(evaluations);
    return r;
}

namespace {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json k_map(const std::map<int, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[std::to_string(k)] = v;
    return j;
}

}  // namespace

void to_json(nlohmann::json& j, const MatchScores& m) {
    j = nlohmann::json{{"match_line", m.line}, {"match_trig", m.trig}, {"match_fix", m.fix}};
}

void to_json(nlohmann::json& j, const IrEvaluation& e) {
    j = nlohmann::json{{"ir_id", e.ir_id},
                       {"iterations", e.iterations},
                       {"bucket", to_string(bucket_for(e.iterations))},
                       {"failed", e.failed},
                       {"match", opt(e.match)},
                       {"verdicts", opt(e.verdicts)},
                       {"predicted_vul_type", opt(e.predicted_vul_type)},
                       {"gt_vul_type", opt(e.gt_vul_type)},
                       {"predicted_patch_type", opt(e.predicted_patch_type)},
                       {"gt_patch_type", opt(e.gt_patch_type)}};
}

void to_json(nlohmann::json& j, const MetricBlock& b) {
    j = nlohmann::json{{"ir_count", b.ir_count},
                       {"matched_ir_count", b.matched_ir_count},
                       {"verdict_ir_count", b.verdict_ir_count},
                       {"match_line", opt(b.match_line)},
                       {"match_trig", opt(b.match_trig)},
                       {"match_fix", opt(b.match_fix)},
                       {"acc_type", opt(b.acc_type)},
                       {"acc_patch_type", opt(b.acc_patch_type)},
                       {"trig_at", k_map(b.trig_at)},
                       {"fix_at", k_map(b.fix_at)}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json buckets = nlohmann::json::object();
    for (const auto& [b, block] : r.buckets) buckets[to_string(b)] = block;
    j = nlohmann::json{{"header",
                        {{"ablations", r.header.ablations},
                         {"k", r.header.k},
                         {"ks", r.header.ks},
                         {"verdict_provider", r.header.verdict_provider},
                         {"tau", r.header.tau},
                         {"distance_mode", to_string(r.header.distance_mode)},
                         {"full_gt", r.header.full_gt},
                         {"ir_count", r.per_ir.size()},
                         {"failed_count", r.failed_count}}},
                       {"overall", r.overall},
                       {"buckets", buckets},
                       {"per_ir", r.per_ir},
                       {"warnings", r.warnings}};
}

namespace {

std::string cell(const nlohmann::json& v) {
    if (v.is_null()) return "-";
    if (v.is_number_float()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
        return buf;
    }
    return v.dump();
}

}  // namespace

std::string render_report_table(const nlohmann::json& report) {
    std::vector<std::string> columns{"overall"};
    std::vector<const nlohmann::json*> blocks{&report.at("overall")};
    for (auto b : kAllBuckets) {
        columns.push_back(to_string(b));
        blocks.push_back(&report.at("buckets").at(to_string(b)));
    }

    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    auto add_row = [&](const std::string& label, auto&& get) {
        std::vector<std::string> cells;
        for (const auto* b : blocks) cells.push_back(cell(get(*b)));
        rows.emplace_back(label, std::move(cells));
    };
    for (const char* key : {"ir_count", "match_line", "match_trig", "match_fix", "acc_type", "acc_patch_type"}) {
        add_row(key, [&](const nlohmann::json& b) { return b.value(key, nlohmann::json(nullptr)); });
    }
    for (const auto& k : report.at("header").at("ks")) {
        const auto ks = std::to_string(k.get<int>());
        for (const char* family : {"trig_at", "fix_at"}) {
            add_row(std::string(family) + "_" + ks, [&](const nlohmann::json& b) {
                const auto& m = b.at(family);
                return m.contains(ks) ? m.at(ks) : nlohmann::json(nullptr);
            });
        }
    }

    std::size_t label_w = 6;
    for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
    std::vector<std::size_t> widths;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        std::size_t w = columns[c].size();
        for (const auto& [_, cells] : rows) w = std::max(w, cells[c].size());
        widths.push_back(w);
    }
    auto pad_right = [](std::string s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
    auto pad_left = [](std::string s, std::size_t w) { return std::string(w - s.size(), ' ') + s; };

    const auto& h = report.at("header");
    std::string out = "ablations: " +
                      (h.at("ablations").empty() ? std::string("none")
                                                 : text::join(h.at("ablations").get<std::vector<std::string>>(), ",")) +
                      "\nk: " + std::to_string(h.at("k").get<int>()) +
                      "  verdicts: " + h.at("verdict_provider").get<std::string>() + "  tau: " + cell(h.at("tau")) +
                      "  distance: " + h.at("distance_mode").get<std::string>() +
                      "  failed: " + std::to_string(h.at("failed_count").get<int>()) + "\n\n";
    out += pad_right("metric", label_w);
    for (std::size_t c = 0; c < columns.size(); ++c) out += "  " + pad_left(columns[c], widths[c]);
    out += "\n";
    for (const auto& [label, cells] : rows) {
        out += pad_right(label, label_w);
        for (std::size_t c = 0; c < cells.size(); ++c) out += "  " + pad_left(cells[c], widths[c]);
        out += "\n";
    }
    return out;
}

std::string render_report_table(const EvalReport& r) { return render_report_table(nlohmann::json(r)); }

}  // namespace patuntrack
