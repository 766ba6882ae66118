#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "patuntrack/diagnostic.hpp"
#include "patuntrack/error.hpp"

namespace patuntrack {

struct CompletionRequest {
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 1024;
    /// Free-form label used for logging and for scripted-reply matching.
    /// Convention: "<stage>" or "<stage>:<ir id>".
    std::string tag;
};

struct RetryRecord {
    int attempt = 0;
    int status = 0;  // 0 = transport failure
    std::string reason;
};

struct CompletionResponse {
    std::string text;
    std::optional<int> prompt_tokens;
    std::optional<int> completion_tokens;
    std::vector<RetryRecord> retries;
};

enum class BackendKind { http_chat, scripted };

struct BackendConfig {
    BackendKind kind = BackendKind::scripted;
    std::string endpoint;
    std::string model_name;
    std::string api_key_env;
    int max_retries = 3;
    int requests_per_minute = 0;  // 0 = unlimited
    std::string script_path;
    int retry_backoff_ms = 500;
    int timeout_seconds = 120;

    void check() const;
};

void to_json(nlohmann::json& j, const BackendConfig& c);
void from_json(const nlohmann::json& j, BackendConfig& c);

class Backend {
public:
    virtual ~Backend() = default;
    virtual CompletionResponse complete(const CompletionRequest& request) = 0;
};

/// Offline backend replaying canned replies. A script is a JSON list of
/// {"tag": ..., "reply": ..., "repeat": bool}. A request tagged "stage:id"
/// takes the next reply queued under "stage:id", then under "stage", then an
/// untagged one. Entries with repeat=true are never used up.
class ScriptedBackend : public Backend {
public:
    struct Entry {
        std::string tag;
        std::string reply;
        bool repeat = false;
    };

    explicit ScriptedBackend(std::vector<Entry> entries);
    static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& script);
    static std::unique_ptr<ScriptedBackend> from_file(const std::string& path);

    CompletionResponse complete(const CompletionRequest& request) override;

    /// Non-repeating replies still queued.
    std::size_t remaining() const;

private:
    struct Queue {
        std::deque<std::string> replies;
        std::optional<std::string> sticky;
    };
    std::optional<std::string> take(const std::string& key);

    mutable std::mutex mutex_;
    std::map<std::string, Queue> queues_;
};

/// Speaks the OpenAI-style chat-completions wire format:
/// POST {model, messages: [{role: "user", content}], temperature, max_tokens}
/// and reads choices[0].message.content. Retries transport failures, 429 and
/// 5xx responses up to max_retries times with exponential backoff.
class HttpChatBackend : public Backend {
public:
    explicit HttpChatBackend(BackendConfig config);
    CompletionResponse complete(const CompletionRequest& request) override;

private:
    BackendConfig config_;
    std::string origin_;
    std::string path_;
};

/// Admits at most `per_minute` acquisitions in any sliding 60 s window.
class RateLimiter {
public:
    using Clock = std::chrono::steady_clock;
    using NowFn = std::function<Clock::time_point()>;
    using SleepFn = std::function<void(Clock::duration)>;

    explicit RateLimiter(int per_minute, NowFn now = {}, SleepFn sleep = {});
    void acquire();

private:
    int per_minute_;
    NowFn now_;
    SleepFn sleep_;
    std::mutex mutex_;
    std::deque<Clock::time_point> admitted_;
};

struct CallRecord {
    std::string tag;
    double latency_ms = 0;
    std::optional<int> prompt_tokens;
    std::optional<int> completion_tokens;
    int retries = 0;
    bool ok = true;
    std::string error;
};

void to_json(nlohmann::json& j, const CallRecord& r);

/// Thread-safe front door to one backend: rate limiting plus a call log.
class Gateway {
public:
    explicit Gateway(std::unique_ptr<Backend> backend, int requests_per_minute = 0);
    static std::unique_ptr<Gateway> from_config(const BackendConfig& config);

    std::string complete(const CompletionRequest& request);

    std::vector<CallRecord> calls() const;

private:
    std::unique_ptr<Backend> backend_;
    RateLimiter limiter_;
    mutable std::mutex log_mutex_;
    std::vector<CallRecord> log_;
};

enum class StepResult { done, proceed };

struct LoopOutcome {
    int iterations = 0;
    bool completed = false;
};

/// Calls `step(iteration)` (1-based) until it reports done or `cap` calls have
/// been made. A throwing step aborts the loop with LoopError carrying the
/// iteration count; the original exception is nested.
LoopOutcome run_bounded_loop(const std::function<StepResult(int)>& step, int cap);

/// Asks the gateway up to `attempts` times until `decode` accepts a reply.
/// decode signals rejection by throwing DecodeError. Gateway errors propagate.
template <typename T, typename Decode>
std::optional<T> ask_decoded(Gateway& gateway, const CompletionRequest& request, int attempts, Decode&& decode,
                             Diagnostics* warnings = nullptr) {
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        const std::string reply = gateway.complete(request);
        try {
            return decode(reply);
        } catch (const DecodeError& e) {
            if (warnings) {
                warnings->push_back({"decode_retry", request.tag + " attempt " + std::to_string(attempt) + ": " +
                                                         e.what()});
            }
        }
    }
    return std::nullopt;
}

}  // namespace patuntrack
