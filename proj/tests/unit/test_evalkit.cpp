#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "patuntrack/error.hpp"
#include "patuntrack/evalkit.hpp"
#include "synthetic.hpp"

using namespace patuntrack;
using patuntrack::testing::synthetic_code;
using patuntrack::testing::synthetic_ir;
using patuntrack::testing::synthetic_patch;

namespace {

PatchPair pair(std::string code, std::string patch, int rank = 1) {
    PatchPair p;
    p.rank = rank;
    p.insecure_code = std::move(code);
    p.patch = std::move(patch);
    return p;
}

std::vector<CandidateVerdict> verdicts(const std::string& id, std::vector<std::pair<bool, bool>> bits) {
    std::vector<CandidateVerdict> out;
    int rank = 1;
    for (auto [t, f] : bits) out.emplace_back(id, rank++, t, f);
    return out;
}

}  // namespace

TEST_CASE("parse unified diff examples") {
    const auto d = parse_unified_diff(
        "--- a/x.py\n+++ b/x.py\n@@ -1,3 +1,4 @@\n ctx\n-old1\n-old2\n+new1\n+new2\n+new3\n");
    CHECK(d.minus_lines.size() == 2);
    CHECK(d.plus_lines.size() == 3);
    CHECK(d.context_lines == std::vector<std::string>{"ctx"});
    CHECK(parse_unified_diff("").empty());
    CHECK(parse_unified_diff("-  a   b \n").minus_lines == std::vector<std::string>{"a b"});
    try {
        parse_unified_diff("@@ -1 +1 @@\n-a\n+b\nthis is prose\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 4);
    }
}

TEST_CASE("rendered diffs parse back to the changed lines") {
    const std::string before = "a = 1\nb = 2\nrun(b)\nreturn a\n";
    const std::string after = "a = 1\nb = 2\ncheck(b)\nrun(b)\nreturn a\n";
    const auto text = render_unified_diff(before, after);
    CHECK(looks_like_unified_diff(text));
    const auto d = parse_unified_diff(text);
    CHECK(d.minus_lines.empty());
    CHECK(d.plus_lines == std::vector<std::string>{"check(b)"});
    CHECK(render_unified_diff(before, before).empty());
    CHECK(ground_truth_diff(before, after) == d);
    CHECK(ground_truth_diff(before, text) == d);
}

TEST_CASE("match_rate examples") {
    CHECK(match_rate({"a", "b", "c"}, {"a", "b", "d"}) == doctest::Approx(2.0 / 3.0));
    CHECK(match_rate({"x", "y"}, {"x", "y"}) == 1.0);
    CHECK(match_rate({}, {}) == 1.0);
    CHECK(match_rate({"x"}, {}) == 0.0);
    CHECK(match_rate({"a", "a"}, {"a", "b"}) == 0.5);
    CHECK(match_rate({"  a   =  1"}, {"a = 1"}) == 1.0);
}

TEST_CASE("match_rate agrees with the brute-force oracle") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 500; ++i) {
        auto g = patuntrack::testing::random_lines(rng, 8);
        auto t = patuntrack::testing::random_lines(rng, 8);
        std::vector<std::string> gn, tn;
        for (const auto& l : g) gn.push_back(normalize_line(l));
        for (const auto& l : t) tn.push_back(normalize_line(l));
        CHECK(match_rate(g, t) == patuntrack::testing::brute_force_match_rate(gn, tn));
    }
}

TEST_CASE("candidate match scores") {
    const GroundTruthDiff gt{{"run(x)", "log(x)"}, {"run(quote(x))"}, {"x = read()"}};
    const auto exact = candidate_match(pair("x = read()\nrun(x)\nlog(x)\n", "x = read()\nrun(quote(x))\nlog(x)\n"), gt);
    CHECK(exact.trig == 1.0);
    CHECK(exact.fix == 1.0);
    CHECK(exact.line == 1.0);

    const auto full = candidate_match(pair("run(x)\n", "run(quote(x))\n"), gt, std::string("x = read()\nrun(x)\nlog(x)\nexit()\n"));
    CHECK(full.line == 0.25);
}

TEST_CASE("best of K takes the max per metric") {
    const GroundTruthDiff gt{{"l1", "l2", "l3", "l4", "l5", "l6", "l7", "l8", "l9", "l10"}, {}, {}};
    std::string low = "l1\nl2\n";
    std::string high;
    for (int i = 1; i <= 9; ++i) high += "l" + std::to_string(i) + "\n";
    const auto m = match_metrics({pair(low, low, 1), pair(high, high, 2)}, gt);
    CHECK(m.trig == doctest::Approx(0.9));
    CHECK(match_metrics({}, gt) == MatchScores{});
}

TEST_CASE("added lines use the diff when the patch is one") {
    const auto diff = render_unified_diff("a\nb\n", "a\nc\nb\n");
    CHECK(added_lines(pair("a\nb\n", diff)) == std::vector<std::string>{"c"});
    CHECK(added_lines(pair("a\nb\n", "a\nc\nb\n")) == std::vector<std::string>{"c"});
}

TEST_CASE("trig and fix at k") {
    std::vector<std::vector<CandidateVerdict>> all;
    for (int i = 0; i < 10; ++i) {
        const bool hit = i < 7;
        all.push_back(verdicts("r" + std::to_string(i), {{false, false}, {hit, hit && i < 4}}));
    }
    const auto at10 = trig_fix_at_k(all, 10);
    CHECK(at10.trig == doctest::Approx(0.7));
    CHECK(at10.fix == doctest::Approx(0.4));
    const auto at1 = trig_fix_at_k(all, 1);
    CHECK(at1.trig == 0.0);
    CHECK(trig_fix_at_k({}, 5).trig == 0.0);
    CHECK_THROWS_AS(trig_fix_at_k(all, 0), UsageError);
    CHECK_THROWS_AS(CandidateVerdict("x", 1, false, true), UsageError);
}

TEST_CASE("trig/fix is monotone in k and fix never exceeds trig") {
    std::mt19937_64 rng(8);
    for (int round = 0; round < 200; ++round) {
        std::vector<std::vector<CandidateVerdict>> all;
        const auto n = 1 + rng() % 12;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::pair<bool, bool>> bits;
            for (std::size_t r = 0; r < rng() % 11; ++r) {
                const bool t = rng() % 4 == 0;
                bits.emplace_back(t, t && rng() % 2);
            }
            all.push_back(verdicts("r" + std::to_string(i), bits));
        }
        TrigFix prev;
        for (int k = 1; k <= 10; ++k) {
            const auto tf = trig_fix_at_k(all, k);
            CHECK(tf.fix <= tf.trig);
            CHECK(tf.trig >= prev.trig);
            CHECK(tf.fix >= prev.fix);
            prev = tf;
        }
    }
}

TEST_CASE("accuracy of types") {
    const std::vector<VulType> gt{{"CWE-78", "InputValidationError"}, {"CWE-22", "AccessControlError"}};
    CHECK(acc_type(gt, gt) == 1.0);
    const std::vector<VulType> half{{"CWE-78", "MemoryError"}, {"CWE-22", "MemoryError"}};
    CHECK(acc_type(half, gt) == 0.5);
    CHECK_THROWS_AS(acc_type({}, {}), UsageError);
    CHECK_THROWS_AS(acc_type(gt, {gt[0]}), UsageError);
    CHECK(acc_patch_type({"InputValidation", "NullCheck"}, {"InputValidation", "BoundsCheck"}) == 0.5);
}

TEST_CASE("iteration buckets") {
    CHECK(bucket_for(1) == IterBucket::iter_1_3);
    CHECK(bucket_for(3) == IterBucket::iter_1_3);
    CHECK(bucket_for(4) == IterBucket::iter_4_7);
    CHECK(bucket_for(7) == IterBucket::iter_4_7);
    CHECK(bucket_for(8) == IterBucket::iter_8_plus);
    CHECK(bucket_for(0) == IterBucket::iter_1_3);

    std::vector<IrEvaluation> evals;
    for (int it : {1, 3, 4, 7, 8, 12}) {
        IrEvaluation e;
        e.ir_id = "i" + std::to_string(it);
        e.iterations = it;
        evals.push_back(e);
    }
    const auto b = bucket_by_iterations(evals);
    REQUIRE(b.size() == 3);
    for (auto bucket : kAllBuckets) CHECK(b.at(bucket).size() == 2);
    CHECK(bucket_by_iterations({}).size() == 3);
}

TEST_CASE("threshold and dataset verdict providers") {
    auto ir = synthetic_ir(0);
    const PatchPair good = pair(synthetic_code(0), synthetic_patch(0), 1);
    const PatchPair bad = pair("nothing()\n", "nothing()\n", 2);
    ThresholdVerdicts thr(0.8);
    const auto v = thr.verdicts(ir, {bad, good});
    REQUIRE(v.has_value());
    REQUIRE(v->size() == 2);
    CHECK_FALSE((*v)[0].triggered());
    CHECK((*v)[1].triggered());
    CHECK((*v)[1].fixed());

    IssueReport unlabeled;
    unlabeled.id = "u";
    CHECK_FALSE(thr.verdicts(unlabeled, {good}).has_value());

    DatasetVerdicts ds;
    CHECK_FALSE(ds.verdicts(ir, {good}).has_value());
    ir.verdicts = verdicts(ir.id, {{true, false}});
    CHECK(ds.verdicts(ir, {good})->size() == 1);
}

TEST_CASE("evaluate and aggregate") {
    ThresholdVerdicts thr(0.8);
    std::vector<IrEvaluation> evals;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto ir = synthetic_ir(i);
        std::vector<PatchPair> pairs;
        if (i % 2 == 0) pairs.push_back(pair(synthetic_code(i), synthetic_patch(i)));
        evals.push_back(evaluate_ir(ir, pairs, static_cast<int>(i) * 3 + 1, false, ir.vul_type_label,
                                    ir.patch_type_label, thr));
    }
    IssueReport bare;
    bare.id = "zz";
    evals.push_back(evaluate_ir(bare, {}, 1, true, std::nullopt, std::nullopt, thr));

    const auto block = aggregate(evals, {1, 5, 10});
    CHECK(block.ir_count == 5);
    CHECK(block.matched_ir_count == 4);
    CHECK(block.verdict_ir_count == 4);
    REQUIRE(block.match_trig);
    CHECK(*block.match_trig == doctest::Approx(0.5));
    CHECK(block.trig_at.at(10) == doctest::Approx(0.5));
    CHECK(block.acc_type == 1.0);

    ReportHeader header;
    header.k = 3;
    const auto report = build_report(header, evals);
    CHECK(report.failed_count == 1);
    CHECK(report.header.ks == std::vector<int>{1, 3, 5, 10});
    CHECK(report.per_ir.front().ir_id == "ir-000");
    CHECK(report.buckets.size() == 3);
    std::size_t total = 0;
    for (const auto& [_, b] : report.buckets) total += b.ir_count;
    CHECK(total == 5);

    const nlohmann::json j = report;
    CHECK(j.at("overall").at("trig_at").contains("10"));
    const auto table = render_report_table(report);
    CHECK(table.find("iter_4_7") != std::string::npos);
    CHECK(table.find("trig_at_10") != std::string::npos);
    CHECK(table == render_report_table(j));
}

TEST_CASE("empty evaluation set warns and keeps null metrics") {
    const auto report = build_report(ReportHeader{}, {});
    REQUIRE(report.warnings.size() == 1);
    CHECK(report.warnings[0].code == "empty_eval_set");
    CHECK_FALSE(report.overall.match_line.has_value());
    const nlohmann::json j = report;
    CHECK(j.at("overall").at("match_line").is_null());
}
