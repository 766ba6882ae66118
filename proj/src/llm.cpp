#include "patuntrack/llm.hpp"

#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"

namespace patuntrack {

void BackendConfig::check() const {
    if (max_retries < 0) throw UsageError("max_retries must be >= 0");
    if (requests_per_minute < 0) throw UsageError("requests_per_minute must be >= 0");
    if (kind == BackendKind::http_chat) {
        if (endpoint.empty()) throw UsageError("http_chat backend needs an endpoint");
        if (model_name.empty()) throw UsageError("http_chat backend needs a model_name");
    } else if (script_path.empty()) {
        throw UsageError("scripted backend needs a script_path");
    }
}

void to_json(nlohmann::json& j, const BackendConfig& c) {
    j = nlohmann::json{{"kind", c.kind == BackendKind::http_chat ? "http_chat" : "scripted"},
                       {"endpoint", c.endpoint},
                       {"model_name", c.model_name},
                       {"api_key_env", c.api_key_env},
                       {"max_retries", c.max_retries},
                       {"requests_per_minute", c.requests_per_minute},
                       {"script_path", c.script_path},
                       {"retry_backoff_ms", c.retry_backoff_ms},
                       {"timeout_seconds", c.timeout_seconds}};
}

void from_json(const nlohmann::json& j, BackendConfig& c) {
    const std::string kind = j.value("kind", std::string("scripted"));
    if (kind == "http_chat") c.kind = BackendKind::http_chat;
    else if (kind == "scripted") c.kind = BackendKind::scripted;
    else throw UsageError("unknown backend kind: " + kind);
    c.endpoint = j.value("endpoint", std::string{});
    c.model_name = j.value("model_name", std::string{});
    c.api_key_env = j.value("api_key_env", std::string{});
    c.max_retries = j.value("max_retries", 3);
    c.requests_per_minute = j.value("requests_per_minute", 0);
    c.script_path = j.value("script_path", std::string{});
    c.retry_backoff_ms = j.value("retry_backoff_ms", 500);
    c.timeout_seconds = j.value("timeout_seconds", 120);
}

// --------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) {
    for (auto& e : entries) {
        auto& q = queues_[e.tag];
        if (e.repeat) {
            q.sticky = std::move(e.reply);
        } else {
            q.replies.push_back(std::move(e.reply));
        }
    }
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& script) {
    if (!script.is_array()) throw UsageError("script must be a JSON list of {tag, reply}");
    std::vector<Entry> entries;
    for (const auto& item : script) {
        Entry e;
        e.tag = item.value("tag", std::string{});
        e.reply = item.at("reply").is_string() ? item.at("reply").get<std::string>() : item.at("reply").dump();
        e.repeat = item.value("repeat", false);
        entries.push_back(std::move(e));
    }
    return std::make_unique<ScriptedBackend>(std::move(entries));
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open script: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("script " + path + ": " + e.what());
    }
    return from_json(j);
}

std::optional<std::string> ScriptedBackend::take(const std::string& key) {
    auto it = queues_.find(key);
    if (it == queues_.end()) return std::nullopt;
    auto& q = it->second;
    if (!q.replies.empty()) {
        std::string reply = std::move(q.replies.front());
        q.replies.pop_front();
        return reply;
    }
    return q.sticky;
}

CompletionResponse ScriptedBackend::complete(const CompletionRequest& request) {
    std::lock_guard lock(mutex_);
    std::vector<std::string> keys{request.tag};
    if (auto colon = request.tag.find(':'); colon != std::string::npos) keys.push_back(request.tag.substr(0, colon));
    keys.emplace_back();

    for (const auto& key : keys) {
        if (auto reply = take(key)) return CompletionResponse{std::move(*reply), std::nullopt, std::nullopt, {}};
    }
    const bool known = queues_.count(keys[0]) || (keys.size() == 3 && queues_.count(keys[1]));
    if (known) throw ScriptError("script exhausted for tag '" + request.tag + "'");
    throw ScriptError("no scripted reply for tag '" + request.tag + "'");
}

std::size_t ScriptedBackend::remaining() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& [_, q] : queues_) n += q.replies.size();
    return n;
}

// --------------------------------------------------------------------------

HttpChatBackend::HttpChatBackend(BackendConfig config) : config_(std::move(config)) {
    const auto scheme_end = config_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw UsageError("endpoint must be an absolute URL: " + config_.endpoint);
    const auto path_start = config_.endpoint.find('/', scheme_end + 3);
    origin_ = config_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
}

CompletionResponse HttpChatBackend::complete(const CompletionRequest& request) {
    httplib::Client client(origin_);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);

    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
    }
    const nlohmann::json body = {
        {"model", config_.model_name},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
    };
    const std::string payload = body.dump();

    CompletionResponse response;
    for (int attempt = 0;; ++attempt) {
        auto result = client.Post(path_, headers, payload, "application/json");
        int status = 0;
        std::string reason;
        std::chrono::milliseconds retry_after{-1};
        if (!result) {
            reason = httplib::to_string(result.error());
        } else {
            status = result->status;
            if (status >= 200 && status < 300) {
                try {
                    const auto j = nlohmann::json::parse(result->body);
                    response.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
                    if (j.contains("usage")) {
                        const auto& u = j.at("usage");
                        if (u.contains("prompt_tokens")) response.prompt_tokens = u.at("prompt_tokens").get<int>();
                        if (u.contains("completion_tokens"))
                            response.completion_tokens = u.at("completion_tokens").get<int>();
                    }
                } catch (const nlohmann::json::exception& e) {
                    throw GatewayError(std::string("malformed chat response: ") + e.what());
                }
                return response;
            }
            reason = "HTTP " + std::to_string(status);
            if (result->has_header("Retry-After")) {
                try {
                    retry_after = std::chrono::seconds(std::stoi(result->get_header_value("Retry-After")));
                } catch (const std::exception&) {
                }
            }
            const bool retryable = status == 429 || status >= 500;
            if (!retryable) throw GatewayError("chat request failed: " + reason + ": " + result->body);
        }
        if (attempt >= config_.max_retries) {
            throw GatewayError("chat request failed after " + std::to_string(attempt + 1) + " attempts: " + reason);
        }
        response.retries.push_back(RetryRecord{attempt + 1, status, reason});
        auto delay = std::chrono::milliseconds(static_cast<long long>(config_.retry_backoff_ms) << attempt);
        if (retry_after.count() >= 0 && config_.retry_backoff_ms > 0) delay = std::max(delay, retry_after);
        if (delay.count() > 0) std::this_thread::sleep_for(delay);
    }
}

// --------------------------------------------------------------------------

RateLimiter::RateLimiter(int per_minute, NowFn now, SleepFn sleep)
    : per_minute_(per_minute), now_(std::move(now)), sleep_(std::move(sleep)) {
    if (!now_) now_ = [] { return Clock::now(); };
    if (!sleep_) sleep_ = [](Clock::duration d) { std::this_thread::sleep_for(d); };
}

void RateLimiter::acquire() {
    if (per_minute_ <= 0) return;
    constexpr auto window = std::chrono::minutes(1);
    while (true) {
        Clock::duration wait{};
        {
            std::lock_guard lock(mutex_);
            const auto now = now_();
            while (!admitted_.empty() && now - admitted_.front() >= window) admitted_.pop_front();
            if (static_cast<int>(admitted_.size()) < per_minute_) {
                admitted_.push_back(now);
                return;
            }
            wait = admitted_.front() + window - now;
        }
        sleep_(wait);
    }
}

// --------------------------------------------------------------------------

void to_json(nlohmann::json& j, const CallRecord& r) {
    j = nlohmann::json{{"tag", r.tag}, {"latency_ms", r.latency_ms}, {"retries", r.retries}, {"ok", r.ok}};
    if (r.prompt_tokens) j["prompt_tokens"] = *r.prompt_tokens;
    if (r.completion_tokens) j["completion_tokens"] = *r.completion_tokens;
    if (!r.error.empty()) j["error"] = r.error;
}

Gateway::Gateway(std::unique_ptr<Backend> backend, int requests_per_minute)
    : backend_(std::move(backend)), limiter_(requests_per_minute) {}

std::unique_ptr<Gateway> Gateway::from_config(const BackendConfig& config) {
    config.check();
    std::unique_ptr<Backend> backend;
    if (config.kind == BackendKind::scripted) {
        backend = ScriptedBackend::from_file(config.script_path);
    } else {
        backend = std::make_unique<HttpChatBackend>(config);
    }
    return std::make_unique<Gateway>(std::move(backend), config.requests_per_minute);
}

std::string Gateway::complete(const CompletionRequest& request) {
    if (request.max_tokens <= 0) throw UsageError("max_tokens must be > 0");
    if (request.temperature < 0) throw UsageError("temperature must be >= 0");
    limiter_.acquire();
    CallRecord record;
    record.tag = request.tag;
    const auto start = std::chrono::steady_clock::now();
    try {
        auto response = backend_->complete(request);
        record.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        record.prompt_tokens = response.prompt_tokens;
        record.completion_tokens = response.completion_tokens;
        record.retries = static_cast<int>(response.retries.size());
        std::lock_guard lock(log_mutex_);
        log_.push_back(record);
        return std::move(response.text);
    } catch (const Error& e) {
        record.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        record.ok = false;
        record.error = e.what();
        std::lock_guard lock(log_mutex_);
        log_.push_back(record);
        throw;
    }
}

std::vector<CallRecord> Gateway::calls() const {
    std::lock_guard lock(log_mutex_);
    return log_;
}

LoopOutcome run_bounded_loop(const std::function<StepResult(int)>& step, int cap) {
    if (cap < 1) throw UsageError("loop cap must be >= 1");
    LoopOutcome outcome;
    while (outcome.iterations < cap) {
        ++outcome.iterations;
        StepResult r;
        try {
            r = step(outcome.iterations);
        } catch (const std::exception& e) {
            std::throw_with_nested(LoopError(std::string("loop step failed at iteration ") +
                                                 std::to_string(outcome.iterations) + ": " + e.what(),
                                             outcome.iterations));
        }
        if (r == StepResult::done) {
            outcome.completed = true;
            break;
        }
    }
    return outcome;
}

}  // namespace patuntrack
