#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "patuntrack/pipeline.hpp"
#include "patuntrack/text.hpp"

namespace fs = std::filesystem;
using namespace patuntrack;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitPipeline = 2;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& body) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write " + path.string());
    out << body;
}

void warn(const Diagnostics& ds) {
    for (const auto& d : ds) std::cerr << "warning: " << d.code << ": " << d.message << "\n";
}

PipelineConfig config_or_default(const std::string& path) {
    return path.empty() ? PipelineConfig{} : load_config(path);
}

/// Raw lines are either markup documents (a string "body") or issue reports
/// with body_segments.
std::vector<IssueReport> read_raw_issues(const std::string& path, double merge_threshold, Diagnostics& warnings) {
    std::vector<IssueReport> out;
    std::size_t line_no = 0;
    for (const auto& line : text::split_lines(read_file(path))) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            if (j.contains("body") && j.at("body").is_string()) {
                MarkupDocument doc{j.at("id").get<std::string>(), j.value("title", std::string{}),
                                   j.at("body").get<std::string>(),
                                   j.value("screenshot_text", std::map<std::string, std::string>{})};
                PreprocessOptions options;
                options.merge_threshold = merge_threshold;
                auto pre = preprocess_ir(doc, options);
                for (auto& w : pre.warnings) warnings.push_back({w.code, doc.id + ": " + w.message});
                j.erase("body");
                j.erase("screenshot_text");
                nlohmann::json segments = nlohmann::json::array();
                for (const auto& s : pre.ir.body_segments) {
                    segments.push_back({{"kind", to_string(s.kind)}, {"content", s.content}});
                }
                j["body_segments"] = segments;
            }
            auto ir = issue_report_from_json(j);
            validate(ir);
            out.push_back(std::move(ir));
        } catch (const ParseError& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
        } catch (const UsageError& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    return out;
}

std::vector<IssueReport> select_ids(const std::vector<IssueReport>& corpus, const std::vector<std::string>& ids) {
    std::map<std::string, const IssueReport*> by_id;
    for (const auto& ir : corpus) by_id[ir.id] = &ir;
    std::vector<IssueReport> out;
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw UsageError("split names unknown issue report " + id);
        out.push_back(*it->second);
    }
    return out;
}

KnowledgeStore store_or_empty(const std::string& path) {
    return path.empty() ? KnowledgeStore{} : KnowledgeStore::load(path);
}

std::string jsonl(const std::vector<nlohmann::json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch generation for untracked vulnerabilities from issue reports"};
    app.require_subcommand(1);

    std::string config_path, corpus_path, kb_path, split_path, templates_dir, out_path, in_path, records_path;
    double merge_threshold = 0.9;
    std::optional<double> split_ratio;
    std::optional<std::uint64_t> split_seed;

    auto* ingest = app.add_subcommand("ingest", "Preprocess, denoise and split a raw issue corpus");
    ingest->add_option("--in", in_path, "Raw issues (JSONL)")->required();
    ingest->add_option("--out", out_path, "Output corpus (JSONL)")->required();
    ingest->add_option("--kb", kb_path, "Knowledge store used to drop deprecated CVEs");
    ingest->add_option("--split", split_path, "Write the prompt/eval split here");
    ingest->add_option("--config", config_path, "Pipeline config (split_ratio, seeds.split)");
    ingest->add_option("--merge-threshold", merge_threshold, "Segment merge similarity");
    ingest->add_option("--split-ratio", split_ratio, "Prompt-set fraction; overrides the config");
    ingest->add_option("--seed", split_seed, "Split seed; overrides the config");

    auto* kb = app.add_subcommand("kb", "Knowledge-base commands");
    kb->require_subcommand(1);
    auto* kb_ingest = kb->add_subcommand("ingest", "Build a knowledge store from JSONL");
    kb_ingest->add_option("--in", in_path, "Knowledge items (JSONL)")->required();
    kb_ingest->add_option("--out", out_path, "Store directory")->required();

    auto* optimize = app.add_subcommand("optimize", "Optimize the prompt templates on the prompt set");
    optimize->add_option("--config", config_path, "Pipeline config")->required();
    optimize->add_option("--corpus", corpus_path, "Corpus (JSONL)")->required();
    optimize->add_option("--split", split_path, "Split file; defaults to every label-complete IR");
    optimize->add_option("--kb", kb_path, "Knowledge store");
    optimize->add_option("--templates", templates_dir, "Starting templates (defaults if omitted)");
    optimize->add_option("--out", out_path, "Output template directory")->required();

    auto* run = app.add_subcommand("run", "Run the pipeline over the evaluation set");
    run->add_option("--config", config_path, "Pipeline config")->required();
    run->add_option("--corpus", corpus_path, "Corpus (JSONL)")->required();
    run->add_option("--split", split_path, "Split file; defaults to the whole corpus");
    run->add_option("--kb", kb_path, "Knowledge store");
    run->add_option("--templates", templates_dir, "Template directory");
    run->add_option("--out", out_path, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Recompute the report from saved run records");
    eval->add_option("--config", config_path, "Pipeline config");
    eval->add_option("--corpus", corpus_path, "Corpus (JSONL)")->required();
    eval->add_option("--records", records_path, "records.jsonl from run")->required();
    eval->add_option("--out", out_path, "Report JSON path")->required();

    auto* report = app.add_subcommand("report", "Print a saved report as a table");
    report->add_option("--in", in_path, "Report JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*ingest) {
            const auto cfg = config_or_default(config_path);
            Diagnostics warnings;
            auto raw = read_raw_issues(in_path, merge_threshold, warnings);
            const auto store = store_or_empty(kb_path);
            auto denoised = denoise_corpus(raw, store);
            for (const auto& r : denoised.removed) warnings.push_back({r.reason, r.id + ": " + r.detail});
            write_corpus(out_path, denoised.kept);
            if (!split_path.empty()) {
                auto split = split_dataset(denoised.kept, split_ratio.value_or(cfg.split_ratio),
                                           split_seed.value_or(cfg.seed("split")));
                warnings.insert(warnings.end(), split.warnings.begin(), split.warnings.end());
                write_file(split_path, nlohmann::json(split).dump(2) + "\n");
            }
            warn(warnings);
            std::cout << "kept " << denoised.kept.size() << " of " << raw.size() << " issue reports\n";
            return 0;
        }
        if (*kb_ingest) {
            auto result = ingest_kb(in_path);
            warn(result.warnings);
            result.store.save(out_path);
            std::cout << "stored " << result.store.items().size() << " knowledge items\n";
            return 0;
        }
        if (*report) {
            std::cout << render_report_table(nlohmann::json::parse(read_file(in_path)));
            return 0;
        }

        const auto cfg = config_or_default(config_path);
        const auto corpus = read_corpus(corpus_path);

        if (*eval) {
            std::vector<RunRecord> records;
            for (const auto& line : text::split_lines(read_file(records_path))) {
                if (!text::trim(line).empty()) records.push_back(run_record_from_json(nlohmann::json::parse(line)));
            }
            const auto r = evaluate_records(records, corpus, cfg);
            warn(r.warnings);
            write_file(out_path, nlohmann::json(r).dump(2) + "\n");
            std::cout << render_report_table(r);
            return 0;
        }

        const Taxonomy taxonomy = load_taxonomy(cfg);
        const TemplateSet templates =
            templates_dir.empty() ? TemplateSet::defaults(taxonomy) : TemplateSet::load(templates_dir, taxonomy);
        const KnowledgeStore store = store_or_empty(kb_path);
        auto gateway = Gateway::from_config(cfg.backend);
        const PipelineDeps deps{*gateway, templates, taxonomy, store};

        if (*optimize) {
            std::vector<IssueReport> prompt_set;
            if (split_path.empty()) {
                for (const auto& ir : corpus) {
                    if (ir.label_complete()) prompt_set.push_back(ir);
                }
            } else {
                prompt_set = select_ids(corpus, corpus_split_from_json(nlohmann::json::parse(read_file(split_path))).prompt_set);
            }
            fs::create_directories(out_path);
            std::ofstream history(fs::path(out_path) / "history.jsonl", std::ios::binary);
            auto on_epoch = [&](const EpochRecord& rec, const PromptTemplate& t) {
                history << nlohmann::json(rec).dump() << "\n";
                write_file(fs::path(out_path) / (to_string(t.template_id) + ".v" + std::to_string(t.version) + ".json"),
                           nlohmann::json(t).dump(2) + "\n");
            };
            auto result = optimize_all(prompt_set, cfg, deps, on_epoch);
            warn(result.warnings);
            result.templates.save(out_path);
            std::cout << "optimized templates written to " << out_path << "\n";
            return 0;
        }

        if (*run) {
            std::vector<IssueReport> eval_set = corpus;
            if (!split_path.empty()) {
                eval_set = select_ids(corpus, corpus_split_from_json(nlohmann::json::parse(read_file(split_path))).eval_set);
            }
            auto result = run_corpus(eval_set, cfg, deps);
            std::vector<nlohmann::json> record_rows, pair_rows;
            for (const auto& r : result.records) {
                record_rows.push_back(r);
                for (const auto& p : r.pairs) pair_rows.push_back(pair_row(r.ir_id, p));
            }
            const fs::path dir(out_path);
            write_file(dir / "records.jsonl", jsonl(record_rows));
            write_file(dir / "pairs.jsonl", jsonl(pair_rows));
            write_file(dir / "report.json", nlohmann::json(result.report).dump(2) + "\n");
            write_file(dir / "report.txt", render_report_table(result.report));
            write_file(dir / "cooccurrence.json", nlohmann::json(result.table).dump(2) + "\n");
            warn(result.report.warnings);
            std::cout << render_report_table(result.report);
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "pipeline error: " << e.what() << "\n";
        return kExitPipeline;
    }
    return 0;
}
