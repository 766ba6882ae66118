#include "patuntrack/autoprompt.hpp"

#include <limits>

#include "patuntrack/text.hpp"

namespace patuntrack {

std::string to_string(ScoreTask t) {
    switch (t) {
        case ScoreTask::extract_complete: return "extract_complete";
        case ScoreTask::vulcok: return "vulcok";
        case ScoreTask::generate: return "generate";
    }
    return "extract_complete";
}

void to_json(nlohmann::json& j, const ScoreReport& r) {
    j = nlohmann::json{{"task", to_string(r.task)}, {"total", r.total}, {"parts", r.parts},
                       {"mode", to_string(r.mode)}};
}

TrainingSample training_sample(const IssueReport& ir) {
    auto need = [&](const std::optional<std::string>& v, const char* field) {
        if (!v || v->empty()) throw UsageError("issue report " + ir.id + " has no " + field);
        return *v;
    };
    return TrainingSample{ir, need(ir.gt_vtp_serialized, "gt_vtp_serialized"),
                          need(ir.gt_insecure_code, "gt_insecure_code"), need(ir.gt_patch, "gt_patch")};
}

namespace {

ScoreReport finish(ScoreTask task, DistanceMode mode, std::map<std::string, double> parts) {
    ScoreReport r{task, 0.0, std::move(parts), mode};
    for (const auto& [_, v] : r.parts) r.total += v;
    return r;
}

}  // namespace

ScoreReport score_extract_complete(const TrainingSample& sample, const VtpGraph& predicted_vtp,
                                   const std::vector<std::string>& hidden, const std::vector<std::string>& predictions,
                                   const ScoreConfig& cfg) {
    if (hidden.size() != predictions.size()) {
        throw UsageError("mask predictions (" + std::to_string(predictions.size()) + ") do not align with hidden spans (" +
                         std::to_string(hidden.size()) + ")");
    }
    double mask = 0;
    for (std::size_t i = 0; i < hidden.size(); ++i) mask += text_distance(hidden[i], predictions[i], cfg.mode);
    return finish(ScoreTask::extract_complete, cfg.mode,
                  {{"score_match", text_distance(canonical_serialize(predicted_vtp), sample.gt_vtp_serialized, cfg.mode)},
                   {"score_mask", mask}});
}

ScoreReport score_vulcok(const TrainingSample& sample, const std::vector<GoldenKnowledgeItem>& retrieved,
                         const ScoreConfig& cfg) {
    std::map<std::string, double> parts;
    if (retrieved.empty()) {
        parts["penalty"] = cfg.penalty * static_cast<double>(cfg.expected_items);
    }
    for (const auto& item : retrieved) {
        parts["kb:" + item.kb_id] += text_distance(item.insecure_code, sample.gt_insecure_code, cfg.mode);
    }
    return finish(ScoreTask::vulcok, cfg.mode, std::move(parts));
}

ScoreReport score_generate(const TrainingSample& sample, const PatchPair& pair, const ScoreConfig& cfg) {
    return finish(ScoreTask::generate, cfg.mode,
                  {{"code", text_distance(pair.insecure_code, sample.gt_insecure_code, cfg.mode)},
                   {"patch", text_distance(pair.patch, sample.gt_patch, cfg.mode)}});
}

ScoreReport score_generate_topk(const TrainingSample& sample, const std::vector<PatchPair>& pairs,
                                const ScoreConfig& cfg) {
    if (pairs.empty()) return finish(ScoreTask::generate, cfg.mode, {{"code", cfg.penalty}, {"patch", cfg.penalty}});
    std::optional<ScoreReport> best;
    for (const auto& p : pairs) {
        auto r = score_generate(sample, p, cfg);
        if (!best || r.total < best->total) best = std::move(r);
    }
    return *best;
}

std::string to_string(Candidate c) {
    switch (c) {
        case Candidate::current: return "current";
        case Candidate::insert: return "insert";
        case Candidate::remove: return "delete";
        case Candidate::modify: return "modify";
    }
    return "current";
}

Candidate select_candidate(const CandidateScores& scores) {
    if (!at(scores, Candidate::current)) throw UsageError("the current template has no score");
    // Preference order for equal totals.
    static constexpr Candidate kOrder[] = {Candidate::current, Candidate::insert, Candidate::modify,
                                           Candidate::remove};
    Candidate best = Candidate::current;
    double best_total = *at(scores, Candidate::current);
    for (auto c : kOrder) {
        const auto& s = at(scores, c);
        if (s && *s < best_total) {
            best = c;
            best_total = *s;
        }
    }
    return best;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    nlohmann::json scores = nlohmann::json::object();
    for (auto c : kAllCandidates) {
        const auto& s = at(r.scores, c);
        scores[to_string(c)] = s ? nlohmann::json(*s) : nlohmann::json(nullptr);
    }
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& s : r.skipped) {
        skipped.push_back({{"sample_index", s.sample_index},
                           {"ir_id", s.ir_id},
                           {"candidate", s.candidate},
                           {"reason", s.reason}});
    }
    j = nlohmann::json{{"epoch", r.epoch},
                       {"template", to_string(r.template_id)},
                       {"scores", scores},
                       {"adopted", to_string(r.adopted)},
                       {"adopted_version", r.adopted_version},
                       {"best_score", r.best_score},
                       {"skipped", skipped},
                       {"notes", r.notes}};
}

namespace {

struct Evaluation {
    double total = 0;
    std::size_t scored = 0;
    std::vector<std::optional<ScoreReport>> reports;
    std::vector<std::pair<std::size_t, std::string>> skips;
};

std::string cache_key(PromptTemplate t) {
    t.version = 0;
    return nlohmann::json(t).dump();
}

}  // namespace

OptimizeResult optimize_prompt(const PromptTemplate& t, const std::vector<TrainingSample>& samples,
                               const SampleScorer& scorer, const CandidateSource& candidate_source,
                               const OptimizeOptions& options,
                               const std::function<void(const EpochRecord&, const PromptTemplate&)>& on_epoch) {
    if (options.epochs < 1) throw UsageError("epochs must be >= 1");
    if (samples.empty()) throw UsageError("optimize_prompt needs at least one training sample");

    std::map<std::string, Evaluation> cache;
    auto evaluate = [&](const PromptTemplate& candidate) -> const Evaluation& {
        const auto key = cache_key(candidate);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        Evaluation e;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            try {
                auto r = scorer(candidate, samples[i]);
                e.total += r.total;
                ++e.scored;
                e.reports.push_back(std::move(r));
            } catch (const std::exception& ex) {
                e.total += options.skip_penalty;
                e.reports.push_back(std::nullopt);
                e.skips.emplace_back(i, ex.what());
            }
        }
        return cache.emplace(key, std::move(e)).first->second;
    };
    auto record_skips = [&](EpochRecord& rec, const Evaluation& e, Candidate c) {
        for (const auto& [i, reason] : e.skips) {
            rec.skipped.push_back({i, samples[i].ir.id, to_string(c), reason});
        }
    };

    OptimizeResult result{t, {}};
    PromptTemplate& current = result.best;
    std::optional<double> best_so_far;
    int stale = 0;

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.template_id = current.template_id;

        const Evaluation& base = evaluate(current);
        if (base.scored == 0) {
            throw OptimizerError("every training sample was skipped while scoring " + to_string(current.template_id));
        }
        at(rec.scores, Candidate::current) = base.total;
        record_skips(rec, base, Candidate::current);

        WorstSample worst;
        double worst_total = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < base.reports.size(); ++i) {
            if (base.reports[i] && base.reports[i]->total > worst_total) {
                worst_total = base.reports[i]->total;
                worst = WorstSample{i, samples[i].ir.vul_type_label.value_or(VulType{}), *base.reports[i]};
            }
        }

        std::map<Candidate, PromptTemplate> variants;
        for (auto action : kAllActions) {
            const Candidate c = action == MutationAction::insert   ? Candidate::insert
                                : action == MutationAction::remove ? Candidate::remove
                                                                   : Candidate::modify;
            std::optional<FocusEntry> item;
            try {
                item = candidate_source(action, current, worst);
            } catch (const std::exception& ex) {
                rec.notes.push_back({"candidate_unavailable", to_string(c) + ": " + ex.what()});
            }
            if (!item) continue;
            auto mutation = mutate_focus(current.focus_list, action, *item);
            for (auto& n : mutation.notes) rec.notes.push_back(n);
            PromptTemplate variant = current;
            variant.focus_list = std::move(mutation.focus_list);
            const Evaluation& e = evaluate(variant);
            if (e.scored == 0) {
                rec.notes.push_back({"candidate_unscored", to_string(c) + ": every sample skipped"});
                continue;
            }
            at(rec.scores, c) = e.total;
            record_skips(rec, e, c);
            variants.emplace(c, std::move(variant));
        }

        rec.adopted = select_candidate(rec.scores);
        if (rec.adopted != Candidate::current) {
            const int version = current.version + 1;
            current = std::move(variants.at(rec.adopted));
            current.version = version;
        }
        rec.adopted_version = current.version;
        rec.best_score = *at(rec.scores, rec.adopted);

        if (!best_so_far || rec.best_score < *best_so_far) {
            best_so_far = rec.best_score;
            stale = 0;
        } else {
            ++stale;
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec, current);
        if (options.patience > 0 && stale >= options.patience) break;
    }
    return result;
}

CandidateSource llm_candidate_source(Gateway& gateway, const Taxonomy& taxonomy, int theta) {
    return [&gateway, &taxonomy, theta](MutationAction action, const PromptTemplate& current,
                                        const WorstSample& worst) -> std::optional<FocusEntry> {
        const VulType v = normalize_vul_type(worst.vul_type, taxonomy);
        if (action == MutationAction::remove) return FocusEntry{v, ""};
        std::string existing;
        for (const auto& f : current.focus_list) existing += "\n- " + f.vul_type.str() + ": " + f.focus;
        const std::string verb = action == MutationAction::insert ? "inserting" : "modifying";
        const std::string prompt =
            "Please update the prompt of the " + to_string(current.template_id) + " task by " + verb +
            " the focus item for vulnerability type " + v.str() + ".\nTask definition:\n" + current.task_definition +
            "\nCurrent focus list:" + (existing.empty() ? std::string("\n- none") : existing) +
            "\nThe worst-scored training sample has this vulnerability type and scored " +
            std::to_string(worst.report.total) +
            ".\nWrite one sentence telling the model what to focus on. Reply with {\"focus\": \"...\"}.";
        auto focus = ask_decoded<std::string>(
            gateway, CompletionRequest{prompt, 0.0, 512, "focus:" + to_string(current.template_id)}, theta,
            [](const std::string& r) {
                for (const auto& j : embedded_json_values(r)) {
                    if (j.is_object() && j.contains("focus") && j.at("focus").is_string()) {
                        auto s = text::trim(j.at("focus").get<std::string>());
                        if (!s.empty()) return s;
                    }
                }
                if (r.find('{') == std::string::npos && !text::trim(r).empty()) return text::trim(r);
                throw DecodeError("no focus sentence in reply", r);
            });
        if (!focus) return std::nullopt;
        return FocusEntry{v, *focus};
    };
}

}  // namespace patuntrack
