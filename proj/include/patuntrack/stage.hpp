#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "patuntrack/dataset.hpp"
#include "patuntrack/diagnostic.hpp"
#include "patuntrack/llm.hpp"
#include "patuntrack/prompt.hpp"
#include "patuntrack/vtp.hpp"

namespace patuntrack {

/// Everything an LLM-driven stage needs while processing one issue report.
/// Not shared between threads: each IR gets its own context.
struct StageContext {
    Gateway& gateway;
    const TemplateSet& templates;
    const Taxonomy& taxonomy;
    const IssueReport& ir;
    int theta = 10;
    RenderOptions render_options;
    double temperature = 0.0;
    double generation_temperature = 0.7;
    int max_tokens = 2048;

    std::size_t focus_entries_rendered = 0;
    std::map<std::string, int> calls;
    Diagnostics warnings;

    StageContext(Gateway& gw, const TemplateSet& ts, const Taxonomy& tax, const IssueReport& report)
        : gateway(gw), templates(ts), taxonomy(tax), ir(report) {}

    /// "<stage>:<ir id>", the tag convention the scripted backend matches on.
    std::string tag(std::string_view stage) const { return std::string(stage) + ":" + ir.id; }

    std::string render(TemplateId id, const VtpGraph* g, const PromptContext& extra = {}) {
        auto rendered = render_prompt_ex(templates.get(id), ir, g, extra, render_options);
        focus_entries_rendered += rendered.focus_entries;
        return std::move(rendered.text);
    }

    std::string complete(std::string_view stage, std::string prompt, double temp) {
        ++calls[std::string(stage)];
        return gateway.complete(CompletionRequest{std::move(prompt), temp, max_tokens, tag(stage)});
    }

    /// Up to theta calls until `decode` accepts a reply (DecodeError = reject).
    template <typename T, typename Decode>
    std::optional<T> ask(std::string_view stage, const std::string& prompt, double temp, Decode&& decode) {
        for (int attempt = 1; attempt <= theta; ++attempt) {
            const std::string reply = complete(stage, prompt, temp);
            try {
                return decode(reply);
            } catch (const DecodeError& e) {
                warnings.push_back({"decode_retry", tag(stage) + " attempt " + std::to_string(attempt) + ": " +
                                                        e.what()});
            }
        }
        return std::nullopt;
    }
};

}  // namespace patuntrack
