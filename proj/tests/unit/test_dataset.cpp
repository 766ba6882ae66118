#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "patuntrack/dataset.hpp"
#include "patuntrack/distance.hpp"
#include "patuntrack/error.hpp"
#include "synthetic.hpp"

using namespace patuntrack;
using patuntrack::testing::synthetic_corpus;
using patuntrack::testing::synthetic_ir;

namespace {

MarkupDocument doc(std::string body) {
    MarkupDocument d;
    d.id = "r1";
    d.title = "  Crash   in exec ";
    d.body = std::move(body);
    return d;
}

IssueReport unlabeled(std::string id) {
    IssueReport ir;
    ir.id = std::move(id);
    ir.title = "question";
    ir.body_segments = {{SegmentKind::text, "how do I build this"}};
    return ir;
}

}  // namespace

TEST_CASE("preprocess maps code and text tags in order") {
    auto r = preprocess_ir(doc("<p>crash</p><code>exec(x)</code>"));
    REQUIRE(r.ir.body_segments.size() == 2);
    CHECK(r.ir.body_segments[0] == Segment{SegmentKind::text, "crash"});
    CHECK(r.ir.body_segments[1] == Segment{SegmentKind::code, "exec(x)"});
    CHECK(r.ir.title == "Crash in exec");
    CHECK(r.warnings.empty());
}

TEST_CASE("preprocess merges identical code blocks") {
    auto r = preprocess_ir(doc("<code>exec(x)</code><p>and again</p><code>exec(x)</code>"));
    REQUIRE(r.ir.body_segments.size() == 2);
    CHECK(r.ir.body_segments[0].kind == SegmentKind::code);
    CHECK(r.ir.body_segments[1].kind == SegmentKind::text);
}

TEST_CASE("preprocess of an empty body") {
    auto r = preprocess_ir(doc(""));
    CHECK(r.ir.body_segments.empty());
    CHECK(r.warnings.empty());
}

TEST_CASE("screenshots use pre-extracted text, then alt, else drop with warning") {
    auto d = doc("<p>see</p><img src=\"a.png\"/><img src=\"b.png\" alt=\"Traceback in run\"/><img src=\"c.png\">");
    d.screenshot_text["a.png"] = "Error: injected";
    auto r = preprocess_ir(d);
    REQUIRE(r.ir.body_segments.size() == 3);
    CHECK(r.ir.body_segments[1] == Segment{SegmentKind::screenshot_text, "Error: injected"});
    CHECK(r.ir.body_segments[2] == Segment{SegmentKind::screenshot_text, "Traceback in run"});
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].code == "screenshot_without_text");
}

TEST_CASE("links to image files count as screenshots") {
    auto d = doc("<p>shot: <a href=\"https://x/y.png\">here</a></p>");
    d.screenshot_text["https://x/y.png"] = "stack trace";
    auto r = preprocess_ir(d);
    REQUIRE(r.ir.body_segments.size() == 2);
    CHECK(r.ir.body_segments[0].content == "shot:");
    CHECK(r.ir.body_segments[1] == Segment{SegmentKind::screenshot_text, "stack trace"});
}

TEST_CASE("malformed markup names a byte offset") {
    try {
        preprocess_ir(doc("<p>ok</p><div>open"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 9);
    }
    try {
        preprocess_ir(doc("<p>a</b>"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 4);
    }
    CHECK_THROWS_AS(preprocess_ir(doc("<p>a</p><code")), ParseError);
}

TEST_CASE("text hook applies to text segments only") {
    PreprocessOptions opts;
    opts.normalize_text = [](std::string s) { return "[" + s + "]"; };
    auto r = preprocess_ir(doc("<p>hi</p><code>x()</code>"), opts);
    CHECK(r.ir.body_segments[0].content == "[hi]");
    CHECK(r.ir.body_segments[1].content == "x()");
}

TEST_CASE("preprocess is idempotent on its own output") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> pieces = {"<p>crash here</p>", "<code>exec(x)\n  run(y)</code>",
                                             "<img src=\"s.png\" alt=\"error shown\"/>", "plain words ",
                                             "<pre>a &lt; b</pre>", "<ul><li>one</li><li>two</li></ul>"};
    for (int round = 0; round < 200; ++round) {
        std::string body;
        const auto n = rng() % 6;
        for (std::size_t i = 0; i < n; ++i) body += pieces[rng() % pieces.size()];
        const auto first = preprocess_ir(doc(body)).ir;
        const auto second = preprocess_ir(render_markup(first)).ir;
        CHECK(first.body_segments == second.body_segments);
        CHECK(first.title == second.title);
    }
}

TEST_CASE("merge_similar_segments examples") {
    auto code = [](std::string s) { return Segment{SegmentKind::code, std::move(s)}; };
    CHECK(merge_similar_segments({code("exec(x)"), code("exec(x)")}, 0.9).size() == 1);
    CHECK(merge_similar_segments({code("abcd"), code("wxyz")}, 0.9).size() == 2);
    CHECK(merge_similar_segments({code("abcde"), code("abcdf")}, 0.8).size() == 1);
    CHECK(merge_similar_segments({code("abc"), code("abcdef")}, 0.5) == std::vector<Segment>{code("abcdef")});
    CHECK(merge_similar_segments({code("x"), Segment{SegmentKind::text, "x"}}, 0.5).size() == 2);
    CHECK_THROWS_AS(merge_similar_segments({}, 1.5), UsageError);
}

TEST_CASE("merge output has no same-kind pair above threshold") {
    std::mt19937_64 rng(5);
    for (int round = 0; round < 300; ++round) {
        std::vector<Segment> segs;
        const auto n = rng() % 7;
        for (std::size_t i = 0; i < n; ++i) {
            segs.push_back({rng() % 2 ? SegmentKind::code : SegmentKind::text,
                            patuntrack::testing::random_string(rng, "abc", 5)});
        }
        const double threshold = static_cast<double>(rng() % 11) / 10.0;
        const auto out = merge_similar_segments(segs, threshold);
        for (std::size_t i = 0; i < out.size(); ++i) {
            for (std::size_t j = i + 1; j < out.size(); ++j) {
                if (out[i].kind != out[j].kind) continue;
                const auto a = out[i].content;
                const auto b = out[j].content;
                const auto m = std::max(a.size(), b.size());
                const double sim =
                    m == 0 ? 1.0 : 1.0 - static_cast<double>(patuntrack::testing::recursive_levenshtein(a, b)) / m;
                CHECK(sim < threshold);
            }
        }
    }
}

TEST_CASE("denoise removes negated and deprecated reports with reasons") {
    KnowledgeStore kb;
    GoldenKnowledgeItem dep;
    dep.kb_id = "CVE-2020-0001";
    dep.source_db = "CVE";
    dep.cwe_id = "CWE-78";
    dep.title = "old";
    dep.deprecated = true;
    kb.add(dep);

    auto negated = synthetic_ir(0);
    negated.body_segments.push_back({SegmentKind::text, "This is NOT a vulnerability, closing"});
    auto deprecated = synthetic_ir(1);
    deprecated.cve_id = "cve-2020-0001";
    auto clean = synthetic_ir(2);

    auto r = denoise_corpus({negated, deprecated, clean}, kb);
    REQUIRE(r.kept.size() == 1);
    CHECK(r.kept[0].id == clean.id);
    REQUIRE(r.removed.size() == 2);
    CHECK(r.removed[0].id == negated.id);
    CHECK(r.removed[0].reason == "negation_rule");
    CHECK(r.removed[1].id == deprecated.id);
    CHECK(r.removed[1].reason == "deprecated_cve");

    auto identity = denoise_corpus({negated, clean}, KnowledgeStore{}, DenoiseRules{});
    CHECK(identity.kept.size() == 2);
    CHECK(identity.removed.empty());
}

TEST_CASE("denoise partitions its input") {
    auto corpus = synthetic_corpus(30);
    for (std::size_t i = 0; i < corpus.size(); i += 3) {
        corpus[i].body_segments.push_back({SegmentKind::text, "false positive"});
    }
    auto r = denoise_corpus(corpus, KnowledgeStore{});
    std::set<std::string> ids;
    for (const auto& ir : r.kept) ids.insert(ir.id);
    for (const auto& rm : r.removed) {
        CHECK(!rm.reason.empty());
        CHECK(ids.insert(rm.id).second);
    }
    CHECK(ids.size() == corpus.size());
    CHECK(r.removed.size() == 10);
}

TEST_CASE("split sizes and determinism") {
    auto ten = synthetic_corpus(10);
    auto a = split_dataset(ten, 0.8, 7);
    CHECK(a.prompt_set.size() == 8);
    CHECK(a.eval_set.size() == 2);
    auto b = split_dataset(ten, 0.8, 7);
    CHECK(a.prompt_set == b.prompt_set);

    auto mixed = ten;
    for (int i = 0; i < 5; ++i) mixed.push_back(unlabeled("u" + std::to_string(i)));
    auto m = split_dataset(mixed, 0.8, 7);
    CHECK(m.prompt_set.size() == 8);
    CHECK(m.eval_set.size() == 7);
    for (const auto& id : m.prompt_set) CHECK(id.rfind("u", 0) != 0);

    auto big = split_dataset(synthetic_corpus(1000), 0.8, 42);
    CHECK(big.prompt_set.size() == 800);
    CHECK(big.eval_set.size() == 200);
}

TEST_CASE("split is a pure function of ids, ratio and seed") {
    auto corpus = synthetic_corpus(40);
    auto base = split_dataset(corpus, 0.5, 3);
    auto reversed = corpus;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(split_dataset(reversed, 0.5, 3).prompt_set == base.prompt_set);
    CHECK(split_dataset(corpus, 0.5, 4).prompt_set != base.prompt_set);

    std::set<std::string> all(base.prompt_set.begin(), base.prompt_set.end());
    for (const auto& id : base.eval_set) CHECK(all.insert(id).second);
    CHECK(all.size() == corpus.size());
}

TEST_CASE("split with no eligible reports warns") {
    auto s = split_dataset({unlabeled("a"), unlabeled("b")}, 0.8, 1);
    CHECK(s.prompt_set.empty());
    CHECK(s.eval_set.size() == 2);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].code == "no_eligible_reports");
    CHECK_THROWS_AS(split_dataset({}, 1.0, 1), UsageError);
    CHECK_THROWS_AS(split_dataset({}, 0.0, 1), UsageError);
}

TEST_CASE("corpus JSONL round trip and line-numbered errors") {
    auto corpus = synthetic_corpus(3);
    std::string text;
    for (const auto& ir : corpus) text += nlohmann::json(ir).dump() + "\n";
    CHECK(parse_corpus(text) == corpus);

    const std::string bad = nlohmann::json(corpus[0]).dump() + "\n\n{not json}\n";
    try {
        parse_corpus(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 3);
    }
    const std::string dup = nlohmann::json(corpus[0]).dump() + "\n" + nlohmann::json(corpus[0]).dump() + "\n";
    CHECK_THROWS_AS(parse_corpus(dup), ParseError);
}

TEST_CASE("validate issue report invariants") {
    auto ir = synthetic_ir(0);
    CHECK_NOTHROW(validate(ir));
    ir.gt_insecure_code.reset();
    CHECK_THROWS_AS(validate(ir), UsageError);
    auto empty_id = synthetic_ir(0);
    empty_id.id.clear();
    CHECK_THROWS_AS(validate(empty_id), UsageError);
}

TEST_CASE("split JSON round trip") {
    auto s = split_dataset(synthetic_corpus(5), 0.6, 9);
    auto back = corpus_split_from_json(nlohmann::json(s));
    CHECK(back.prompt_set == s.prompt_set);
    CHECK(back.eval_set == s.eval_set);
    CHECK(back.seed == 9);
}
