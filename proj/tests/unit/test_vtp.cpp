#include <algorithm>
#include <random>

#include "doctest.h"
#include "patuntrack/error.hpp"
#include "patuntrack/vtp.hpp"
#include "synthetic.hpp"

using namespace patuntrack;

namespace {

OpNode node(std::string id, OpType t, std::string desc, VulType v = {"CWE-78", "InputValidationError"}) {
    return OpNode{std::move(id), t, std::move(desc), std::move(v)};
}

VtpGraph chain() {
    VtpGraph g;
    g.nodes = {node("a", OpType::SrcLoad, "read input"), node("b", OpType::FuncCall, "call run"),
               node("c", OpType::VulTrigger, "command runs")};
    g.edges = {{"a", "b"}, {"b", "c"}};
    return g;
}

}  // namespace

TEST_CASE("validate rejects structural defects") {
    CHECK_NOTHROW(validate(chain()));

    auto dup = chain();
    dup.nodes.push_back(node("a", OpType::FuncCall, "x"));
    CHECK_THROWS_AS(validate(dup), StructureError);

    auto dangling = chain();
    dangling.edges.push_back({"c", "zzz"});
    CHECK_THROWS_AS(validate(dangling), StructureError);

    auto self = chain();
    self.edges.push_back({"b", "b"});
    CHECK_THROWS_AS(validate(self), StructureError);

    auto cyc = chain();
    cyc.edges.push_back({"c", "a"});
    CHECK_THROWS_AS(validate(cyc), StructureError);
    REQUIRE(find_cycle(cyc).has_value());
    CHECK(find_cycle(cyc)->front() == find_cycle(cyc)->back());
    CHECK_FALSE(find_cycle(chain()).has_value());
}

TEST_CASE("completeness: complete chain") {
    const auto r = check_completeness(chain());
    CHECK(r.complete);
    CHECK(r.describe() == "complete\n");
}

TEST_CASE("completeness: missing pieces") {
    SUBCASE("no trigger") {
        auto g = chain();
        g.nodes[2].op_type = OpType::FuncCall;
        const auto r = check_completeness(g);
        CHECK_FALSE(r.complete);
        CHECK(std::find(r.missing_op_info.begin(), r.missing_op_info.end(),
                        CompletenessReport::Field{std::string(kGraphLevel), "vul_trigger"}) != r.missing_op_info.end());
    }
    SUBCASE("direct source to trigger") {
        auto g = chain();
        g.edges.push_back({"a", "c"});
        const auto r = check_completeness(g);
        REQUIRE(r.missing_intermediate.size() == 1);
        CHECK(r.missing_intermediate[0] == Edge{"a", "c"});
    }
    SUBCASE("node that cannot reach the trigger") {
        auto g = chain();
        g.edges.pop_back();
        const auto r = check_completeness(g);
        CHECK(r.missing_transitions == std::vector<Edge>{{"a", "c"}, {"b", "c"}});
    }
    SUBCASE("unknown vul type unless ignored") {
        auto g = chain();
        g.nodes[1].vul_type = VulType{};
        CHECK_FALSE(check_completeness(g).complete);
        CHECK(check_completeness(g, CompletenessOptions{true}).complete);
    }
}

TEST_CASE("canonical serialization is independent of input order") {
    const auto g = testing::synthetic_graph(5);
    const auto expected = canonical_serialize(g);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        auto shuffled = g;
        std::shuffle(shuffled.nodes.begin(), shuffled.nodes.end(), rng);
        std::shuffle(shuffled.edges.begin(), shuffled.edges.end(), rng);
        CHECK(canonical_serialize(shuffled) == expected);
    }
    CHECK(expected.find("SrcLoad|CWE-79|InputValidationError|") == 0);
    CHECK(expected.back() != '\n');
}

TEST_CASE("canonical serialization escapes and names cycles") {
    auto g = chain();
    g.nodes[0].op_desc = "line1\nline|2";
    const auto s = canonical_serialize(g);
    CHECK(s.find("line1\\nline|2") != std::string::npos);

    auto cyc = chain();
    cyc.edges.push_back({"c", "a"});
    try {
        canonical_serialize(cyc);
        FAIL("expected StructureError");
    } catch (const StructureError& e) {
        CHECK(std::string(e.what()).find("cycle") != std::string::npos);
    }
}

TEST_CASE("induced subgraph keeps edges among kept nodes") {
    VtpGraph g = chain();
    g.nodes.push_back(node("d", OpType::FuncCall, "other"));
    g.edges.push_back({"a", "d"});
    const auto sub = induced_subgraph(g, {"a", "d"});
    CHECK(sub.nodes.size() == 2);
    CHECK(sub.edges == std::vector<Edge>{{"a", "d"}});
}

TEST_CASE("vul type normalization") {
    const auto tax = Taxonomy::defaults();
    CHECK(tax.error_types.size() == 7);
    CHECK(tax.patch_types.size() == 12);
    CHECK(is_valid_cwe_id("CWE-78"));
    CHECK_FALSE(is_valid_cwe_id("CWE-"));
    CHECK_FALSE(is_valid_cwe_id("78"));
    const auto v = normalize_vul_type(VulType{"cwe-78", "NotAType"}, tax);
    CHECK(v.cwe_id == "CWE-78");
    CHECK(v.error_type == kUnknownError);
    CHECK(normalize_vul_type(VulType{"bogus", "MemoryError"}, tax).cwe_id == kUnknownCwe);
    CHECK(tax.find_patch_type("inputvalidation") == std::optional<std::string>("InputValidation"));
}

TEST_CASE("op type spellings") {
    CHECK(op_type_from_string("Src-Load") == OpType::SrcLoad);
    CHECK(op_type_from_string("vul_trigger") == OpType::VulTrigger);
    CHECK(to_string(OpType::SecDataTransmit) == "SecDataTransmit");
    CHECK_THROWS(op_type_from_string("Teleport"));
}

TEST_CASE("graph JSON round trip and lenient decoding") {
    const auto g = testing::synthetic_graph(2);
    CHECK(graph_from_json(nlohmann::json(g)) == g);

    const auto j = nlohmann::json::parse(
        R"({"nodes": [{"op_type": "SrcLoad", "op_desc": "x"}, {"op_type": "VulTrigger", "op_desc": "y",
             "vul_type": "CWE-89"}], "edges": [[0, 1]]})");
    const auto decoded = graph_from_json(j);
    CHECK(decoded.nodes[0].node_id == "n00");
    CHECK(decoded.nodes[1].vul_type.cwe_id == "CWE-89");
    CHECK(decoded.edges == std::vector<Edge>{{"n00", "n01"}});
}

TEST_CASE("masking hides anchored node descriptions") {
    const auto ir = testing::synthetic_ir(0);
    const auto g = testing::synthetic_graph(0);
    const auto text = ir.tagged_text();

    const auto all = mask_nodes(g, text, MaskOptions{1.0, 3, 8});
    CHECK(all.hidden.size() == 3);
    for (std::size_t i = 0; i < all.hidden.size(); ++i) {
        CHECK(all.hidden[i].mask_token == "[MASK_" + std::to_string(i) + "]");
        CHECK(all.masked_text.find(all.hidden[i].mask_token) != std::string::npos);
        CHECK(text.find(all.hidden[i].original_text) != std::string::npos);
    }

    const auto one = mask_nodes(g, text, MaskOptions{0.2, 3, 8});
    CHECK(one.hidden.size() + one.skipped_node_ids.size() == 1);
    CHECK(mask_nodes(g, text, MaskOptions{0.2, 3, 8}).masked_text == one.masked_text);

    const auto none = mask_nodes(g, "unrelated", MaskOptions{1.0, 3, 8});
    CHECK(none.hidden.empty());
    CHECK(none.skipped_node_ids.size() == 3);
    CHECK_THROWS_AS(mask_nodes(g, text, MaskOptions{0.0, 0, 8}), UsageError);
}

TEST_CASE("primary vul type and neighbors") {
    const auto g = chain();
    CHECK(g.primary_vul_type().cwe_id == "CWE-78");
    CHECK(g.successors("a") == std::vector<std::string>{"b"});
    CHECK(g.predecessors("c") == std::vector<std::string>{"b"});
    CHECK(node_id_for_index(7) == "n07");
}
