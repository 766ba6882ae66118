#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "patuntrack/error.hpp"
#include "patuntrack/vulcok.hpp"
#include "synthetic.hpp"

using namespace patuntrack;
using patuntrack::testing::scripted_gateway;
using patuntrack::testing::synthetic_graph;
using patuntrack::testing::synthetic_ir;
using patuntrack::testing::synthetic_kb;

namespace {

nlohmann::json entry(std::string tag, std::string reply, bool repeat = false) {
    return {{"tag", std::move(tag)}, {"reply", std::move(reply)}, {"repeat", repeat}};
}

OpNode node(std::string id, OpType t = OpType::FuncCall, std::string desc = "step",
            VulType v = {"CWE-78", "InputValidationError"}) {
    return OpNode{std::move(id), t, std::move(desc), std::move(v)};
}

bool has_edge(const VtpGraph& g, const std::string& from, const std::string& to) {
    return std::find(g.edges.begin(), g.edges.end(), Edge{from, to}) != g.edges.end();
}

struct Harness {
    std::unique_ptr<Gateway> gateway;
    Taxonomy taxonomy = Taxonomy::defaults();
    TemplateSet templates = TemplateSet::defaults(taxonomy);
    IssueReport ir = synthetic_ir(0);
    StageContext ctx;

    explicit Harness(nlohmann::json script)
        : gateway(scripted_gateway(script)), ctx(*gateway, templates, taxonomy, ir) {}
};

GoldenKnowledgeItem kb78() {
    GoldenKnowledgeItem it;
    it.kb_id = "KB-78";
    it.source_db = "CWE";
    it.cwe_id = "CWE-78";
    it.title = "OS command injection";
    it.insecure_code = "os.system(cmd)";
    return it;
}

}  // namespace

TEST_CASE("fallback queries") {
    const auto q = fallback_queries(node("a", OpType::FuncCall, "executes system command"));
    CHECK(q.front() == "CWE-78");
    CHECK(std::find(q.begin(), q.end(), "system command") != q.end());
    CHECK(fallback_queries(node("a", OpType::FuncCall, "")) == std::vector<std::string>{"CWE-78"});
    CHECK(fallback_queries(node("a", OpType::FuncCall, "one two three four five six seven"), 3).size() == 3);
}

TEST_CASE("llm queries and their fallback") {
    Harness ok(nlohmann::json::array({entry("queries", R"({"queries": ["os command", "shell escape"]})")}));
    const auto q = generate_queries(node("a"), true, &ok.ctx);
    CHECK(q.queries == std::vector<std::string>{"os command", "shell escape"});
    CHECK_FALSE(q.used_fallback);

    Harness bad(nlohmann::json::array({entry("queries", "no idea", true)}));
    const auto f = generate_queries(node("a"), true, &bad.ctx);
    CHECK(f.used_fallback);
    CHECK(f.queries.front() == "CWE-78");
    CHECK(bad.ctx.warnings.back().code == "query_fallback");
}

TEST_CASE("bfs order examples") {
    VtpGraph chain{{node("A"), node("B"), node("C")}, {{"A", "B"}, {"B", "C"}}};
    CHECK(bfs_order(chain).order == std::vector<std::string>{"A", "B", "C"});

    VtpGraph fork{{node("A"), node("C"), node("B")}, {{"A", "C"}, {"A", "B"}}};
    CHECK(bfs_order(fork).order == std::vector<std::string>{"A", "B", "C"});

    fork.nodes.push_back(node("D"));
    const auto r = bfs_order(fork);
    CHECK(r.order == std::vector<std::string>{"A", "B", "C", "D"});
    CHECK(r.unreachable == std::vector<std::string>{"D"});

    VtpGraph lone{{node("X")}, {}};
    CHECK(bfs_order(lone).order == std::vector<std::string>{"X"});
    CHECK(bfs_order(lone).unreachable.empty());
}

TEST_CASE("bfs order is a reachability-closed permutation") {
    std::mt19937_64 rng(23);
    for (int round = 0; round < 200; ++round) {
        const std::size_t n = 1 + rng() % 8;
        VtpGraph g;
        for (std::size_t i = 0; i < n; ++i) g.nodes.push_back(node("n" + std::to_string(i)));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                if (rng() % 3 == 0) g.edges.push_back({g.nodes[i].node_id, g.nodes[j].node_id});
            }
        }
        const auto r = bfs_order(g);
        std::multiset<std::string> ids(r.order.begin(), r.order.end());
        CHECK(ids.size() == n);
        CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == n);
        const std::size_t reach = n - r.unreachable.size();
        std::set<std::string> prefix(r.order.begin(), r.order.begin() + static_cast<std::ptrdiff_t>(reach));
        for (const auto& e : g.edges) {
            if (prefix.count(e.from)) CHECK(prefix.count(e.to));
        }
    }
}

TEST_CASE("verdict decoding") {
    CHECK(decode_verdict(R"({"verdict": "type_hallucination"})") == Verdict::type_hallucination);
    CHECK(decode_verdict("desc_hallucination") == Verdict::desc_hallucination);
    CHECK_THROWS_AS(decode_verdict("maybe"), DecodeError);
}

TEST_CASE("detection verdicts and fail-open") {
    Harness h(nlohmann::json::array({entry("detect", R"({"verdict": "type_hallucination"})"),
                                     entry("detect", R"({"verdict": "clean"})")}));
    CHECK(detect_hallucination(node("a"), {}, {kb78()}, h.ctx).verdict == Verdict::type_hallucination);
    CHECK(detect_hallucination(node("a"), {}, {}, h.ctx).verdict == Verdict::clean);

    Harness junk(nlohmann::json::array({entry("detect", "hmm", true)}));
    const auto out = detect_hallucination(node("a"), {}, {}, junk.ctx);
    CHECK(out.verdict == Verdict::clean);
    CHECK(out.fail_open);
    CHECK(junk.ctx.calls["detect"] == 10);
    CHECK(junk.ctx.warnings.back().code == "detect_fail_open");
}

TEST_CASE("type correction uses knowledge-backed CWE") {
    VtpGraph g{{node("a", OpType::SrcLoad), node("b", OpType::VulTrigger, "run", {"CWE-9999", "InputValidationError"})},
               {{"a", "b"}}};
    Harness h(nlohmann::json::array(
        {entry("correct", R"({"vul_type": {"cwe_id": "CWE-78", "error_type": "InputValidationError"}})")}));
    const auto r = correct_node(g, "b", Verdict::type_hallucination, {kb78()}, h.ctx);
    CHECK(r.record.kind == CorrectionKind::type_corrected);
    CHECK(r.graph.find("b")->vul_type.cwe_id == "CWE-78");
    CHECK(r.record.evidence_kb_ids == std::vector<std::string>{"KB-78"});
    CHECK(r.record.before != r.record.after);

    Harness unbacked(nlohmann::json::array(
        {entry("correct", R"({"vul_type": {"cwe_id": "CWE-89", "error_type": "InputValidationError"}})")}));
    const auto u = correct_node(g, "b", Verdict::type_hallucination, {kb78()}, unbacked.ctx);
    CHECK(u.record.kind == CorrectionKind::none);
    CHECK(u.graph == g);
}

TEST_CASE("description correction replaces outgoing edges") {
    VtpGraph g{{node("A", OpType::SrcLoad), node("B", OpType::FuncCall), node("C", OpType::VulTrigger)},
               {{"A", "C"}, {"B", "C"}}};
    Harness h(nlohmann::json::array({entry("correct", R"({"op_desc": "reads the host field", "successors": ["B"]})")}));
    const auto r = correct_node(g, "A", Verdict::desc_hallucination, {kb78()}, h.ctx);
    CHECK(r.record.kind == CorrectionKind::desc_corrected);
    CHECK(has_edge(r.graph, "A", "B"));
    CHECK_FALSE(has_edge(r.graph, "A", "C"));
    CHECK(r.graph.find("C") != nullptr);
    CHECK(r.graph.find("A")->op_desc == "reads the host field");
    CHECK_FALSE(r.record.evidence_kb_ids.empty());
}

TEST_CASE("correction yielding a cycle is rejected") {
    VtpGraph g{{node("A", OpType::SrcLoad), node("B", OpType::VulTrigger)}, {{"A", "B"}}};
    Harness h(nlohmann::json::array({entry("correct", R"({"successors": ["A"]})")}));
    const auto r = correct_node(g, "B", Verdict::desc_hallucination, {kb78()}, h.ctx);
    CHECK(r.record.kind == CorrectionKind::none);
    CHECK(r.record.note.find("rejected") != std::string::npos);
    CHECK(r.graph == g);
}

TEST_CASE("run_vulcok all clean") {
    const auto g = synthetic_graph(0);
    Harness h(nlohmann::json::array({entry("detect", R"({"verdict": "clean"})", true)}));
    const auto kb = synthetic_kb();
    const auto r = run_vulcok(g, kb, h.ctx);
    CHECK(r.graph == g);
    CHECK(r.records.empty());
    CHECK(r.iterations == 1);
    CHECK(r.completed);
    CHECK_FALSE(r.retrieved.empty());
}

TEST_CASE("run_vulcok applies one type correction") {
    auto g = synthetic_graph(0);
    g.find("n01")->vul_type.cwe_id = "CWE-9999";
    Harness h(nlohmann::json::array({
        entry("detect", R"({"verdict": "clean"})"),
        entry("detect", R"({"verdict": "type_hallucination"})"),
        entry("detect", R"({"verdict": "clean"})", true),
        entry("correct", R"({"vul_type": {"cwe_id": "CWE-78", "error_type": "InputValidationError"}})"),
    }));
    const auto kb = synthetic_kb();
    const auto r = run_vulcok(g, kb, h.ctx);
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].kind == CorrectionKind::type_corrected);
    CHECK(r.records[0].node_id == "n01");
    CHECK_FALSE(r.records[0].evidence_kb_ids.empty());
    CHECK(r.graph.find("n01")->vul_type.cwe_id == "CWE-78");
    CHECK(r.iterations == 2);
    CHECK(r.completed);
    CHECK_NOTHROW(validate(r.graph));
}

TEST_CASE("run_vulcok stops at the cap when corrections never settle") {
    VtpGraph g{{node("a", OpType::VulTrigger, "run", {"CWE-78", "InputValidationError"})}, {}};
    nlohmann::json script = nlohmann::json::array({entry("detect", R"({"verdict": "desc_hallucination"})", true)});
    for (int i = 0; i < 10; ++i) {
        script.push_back(entry("correct", R"({"op_desc": "variant )" + std::to_string(i) + R"("})"));
    }
    Harness loop(script);
    loop.ctx.theta = 3;
    const auto r = run_vulcok(g, synthetic_kb(), loop.ctx);
    CHECK(r.iterations == 3);
    CHECK_FALSE(r.completed);
    CHECK(r.records.size() == 3);
}

TEST_CASE("run_vulcok reports gateway exhaustion as a partial result") {
    const auto g = synthetic_graph(0);
    Harness h(nlohmann::json::array({entry("detect", R"({"verdict": "clean"})")}));
    const auto r = run_vulcok(g, synthetic_kb(), h.ctx);
    CHECK(r.error.has_value());
    CHECK_FALSE(r.completed);
    CHECK(r.graph == g);
}

TEST_CASE("run_vulcok without knowledge never corrects") {
    auto g = synthetic_graph(0);
    g.find("n01")->vul_type.cwe_id = "CWE-9999";
    Harness h(nlohmann::json::array({
        entry("detect", R"({"verdict": "type_hallucination"})", true),
        entry("correct", R"({"vul_type": {"cwe_id": "CWE-78", "error_type": "InputValidationError"}})", true),
    }));
    VulcokOptions opts;
    opts.use_kb = false;
    const auto r = run_vulcok(g, synthetic_kb(), h.ctx, opts);
    CHECK(r.graph == g);
    CHECK(r.retrieved.empty());
    for (const auto& rec : r.records) CHECK(rec.kind == CorrectionKind::none);
}

TEST_CASE("run_vulcok leaves types alone when type corrections are off") {
    auto g = synthetic_graph(0);
    g.find("n01")->vul_type.cwe_id = "CWE-9999";
    Harness h(nlohmann::json::array({
        entry("detect", R"({"verdict": "type_hallucination"})", true),
        entry("correct", R"({"vul_type": {"cwe_id": "CWE-78", "error_type": "InputValidationError"}})", true),
    }));
    VulcokOptions opts;
    opts.correct_types = false;
    const auto r = run_vulcok(g, synthetic_kb(), h.ctx, opts);
    CHECK(r.graph == g);
    CHECK(r.records.size() == g.nodes.size());
    for (const auto& rec : r.records) CHECK(rec.kind == CorrectionKind::none);
    CHECK(h.ctx.calls.count("correct") == 0);
}
