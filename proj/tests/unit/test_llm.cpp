#include <atomic>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "patuntrack/llm.hpp"

using namespace patuntrack;

namespace {

CompletionRequest req(std::string tag) {
    CompletionRequest r;
    r.prompt = "p";
    r.tag = std::move(tag);
    return r;
}

}  // namespace

TEST_CASE("scripted replies prefer the full tag, then the stage, then untagged") {
    auto backend = ScriptedBackend::from_json(nlohmann::json::array({
        {{"tag", "extract:ir-1"}, {"reply", "specific"}},
        {{"tag", "extract"}, {"reply", "stage"}},
        {{"tag", ""}, {"reply", "any"}, {"repeat", true}},
    }));
    Gateway gw(std::move(backend));
    CHECK(gw.complete(req("extract:ir-1")) == "specific");
    CHECK(gw.complete(req("extract:ir-1")) == "stage");
    CHECK(gw.complete(req("extract:ir-1")) == "any");
    CHECK(gw.complete(req("other")) == "any");
    CHECK(gw.calls().size() == 4);
}

TEST_CASE("scripted queue is used before the sticky reply") {
    auto backend = ScriptedBackend::from_json(nlohmann::json::array({
        {{"tag", "detect"}, {"reply", "sticky"}, {"repeat", true}},
        {{"tag", "detect"}, {"reply", "once"}},
    }));
    CHECK(backend->remaining() == 1);
    CHECK(backend->complete(req("detect")).text == "once");
    CHECK(backend->complete(req("detect")).text == "sticky");
    CHECK(backend->complete(req("detect")).text == "sticky");
    CHECK(backend->remaining() == 0);
}

TEST_CASE("scripted exhaustion and unknown tags raise ScriptError") {
    Gateway gw(ScriptedBackend::from_json(nlohmann::json::array({{{"tag", "a"}, {"reply", "1"}}})));
    CHECK(gw.complete(req("a")) == "1");
    CHECK_THROWS_AS(gw.complete(req("a")), ScriptError);
    CHECK_THROWS_AS(gw.complete(req("b")), ScriptError);
    const auto calls = gw.calls();
    REQUIRE(calls.size() == 3);
    CHECK_FALSE(calls[1].ok);
    CHECK_THROWS_AS(ScriptedBackend::from_json(nlohmann::json::object()), UsageError);
}

TEST_CASE("gateway rejects bad request parameters") {
    Gateway gw(ScriptedBackend::from_json(nlohmann::json::array({{{"tag", ""}, {"reply", "x"}, {"repeat", true}}})));
    auto bad = req("t");
    bad.max_tokens = 0;
    CHECK_THROWS_AS(gw.complete(bad), UsageError);
    bad = req("t");
    bad.temperature = -1;
    CHECK_THROWS_AS(gw.complete(bad), UsageError);
}

TEST_CASE("bounded loop contract") {
    auto first = run_bounded_loop([](int) { return StepResult::done; }, 10);
    CHECK(first.iterations == 1);
    CHECK(first.completed);

    auto never = run_bounded_loop([](int) { return StepResult::proceed; }, 10);
    CHECK(never.iterations == 10);
    CHECK_FALSE(never.completed);

    auto capped = run_bounded_loop([](int) { return StepResult::proceed; }, 1);
    CHECK(capped.iterations == 1);
    CHECK_FALSE(capped.completed);

    auto third = run_bounded_loop([](int i) { return i == 3 ? StepResult::done : StepResult::proceed; }, 10);
    CHECK(third.iterations == 3);
    CHECK(third.completed);

    try {
        run_bounded_loop(
            [](int i) -> StepResult {
                if (i == 2) throw std::runtime_error("boom");
                return StepResult::proceed;
            },
            10);
        FAIL("expected LoopError");
    } catch (const LoopError& e) {
        CHECK(e.iterations() == 2);
    }
    CHECK_THROWS_AS(run_bounded_loop([](int) { return StepResult::done; }, 0), UsageError);
}

TEST_CASE("rate limiter waits for the sliding window with a fake clock") {
    using Clock = RateLimiter::Clock;
    Clock::time_point now{};
    std::vector<Clock::duration> sleeps;
    RateLimiter limiter(
        2, [&] { return now; },
        [&](Clock::duration d) {
            sleeps.push_back(d);
            now += d;
        });
    limiter.acquire();
    now += std::chrono::seconds(10);
    limiter.acquire();
    CHECK(sleeps.empty());
    limiter.acquire();
    REQUIRE(sleeps.size() == 1);
    CHECK(sleeps[0] == std::chrono::seconds(50));
    limiter.acquire();
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[1] == std::chrono::seconds(10));

    RateLimiter unlimited(0, [&] { return now; }, [&](Clock::duration) { FAIL("should not sleep"); });
    for (int i = 0; i < 100; ++i) unlimited.acquire();
}

TEST_CASE("http backend retries 429 then succeeds") {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string seen_model;
    server.Post("/v1/chat/completions", [&](const httplib::Request& rq, httplib::Response& res) {
        if (++hits <= 2) {
            res.status = 429;
            res.set_content("slow down", "text/plain");
            return;
        }
        seen_model = nlohmann::json::parse(rq.body).at("model").get<std::string>();
        res.set_content(R"({"choices":[{"message":{"content":"hello"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    BackendConfig cfg;
    cfg.kind = BackendKind::http_chat;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.model_name = "test-model";
    cfg.max_retries = 3;
    cfg.retry_backoff_ms = 0;
    HttpChatBackend backend(cfg);
    const auto resp = backend.complete(req("x"));
    CHECK(resp.text == "hello");
    CHECK(resp.retries.size() == 2);
    CHECK(resp.retries[0].status == 429);
    CHECK(resp.prompt_tokens == 3);
    CHECK(seen_model == "test-model");

    hits = -10;
    cfg.max_retries = 1;
    HttpChatBackend impatient(cfg);
    CHECK_THROWS_AS(impatient.complete(req("x")), GatewayError);

    server.stop();
    t.join();
}

TEST_CASE("backend config validation") {
    BackendConfig scripted;
    CHECK_THROWS_AS(scripted.check(), UsageError);
    scripted.script_path = "s.json";
    CHECK_NOTHROW(scripted.check());
    BackendConfig http;
    http.kind = BackendKind::http_chat;
    CHECK_THROWS_AS(http.check(), UsageError);
    http.endpoint = "http://localhost/x";
    http.model_name = "m";
    CHECK_NOTHROW(http.check());
    nlohmann::json j = http;
    BackendConfig back = j.get<BackendConfig>();
    CHECK(back.endpoint == http.endpoint);
    CHECK(back.kind == BackendKind::http_chat);
}

TEST_CASE("ask_decoded retries until decode succeeds") {
    Gateway gw(ScriptedBackend::from_json(nlohmann::json::array({
        {{"tag", "s"}, {"reply", "bad"}},
        {{"tag", "s"}, {"reply", "42"}},
    })));
    Diagnostics warnings;
    auto v = ask_decoded<int>(
        gw, req("s"), 3,
        [](const std::string& r) {
            if (r == "bad") throw DecodeError("not a number", r);
            return std::stoi(r);
        },
        &warnings);
    CHECK(v == 42);
    CHECK(warnings.size() == 1);
}
