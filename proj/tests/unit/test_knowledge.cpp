#include <filesystem>

#include "doctest.h"
#include "patuntrack/error.hpp"
#include "patuntrack/knowledge.hpp"

using namespace patuntrack;

namespace {

GoldenKnowledgeItem item(std::string id, std::string cwe, std::string title, std::string desc = {}) {
    GoldenKnowledgeItem it;
    it.kb_id = std::move(id);
    it.source_db = "CWE";
    it.cwe_id = std::move(cwe);
    it.title = std::move(title);
    it.description = std::move(desc);
    it.insecure_code = "os.system(cmd)";
    return it;
}

std::string line(const GoldenKnowledgeItem& it) { return nlohmann::json(it).dump() + "\n"; }

}  // namespace

TEST_CASE("ingest three lines builds both indexes") {
    const auto r = ingest_kb_text(line(item("K1", "CWE-78", "OS command injection")) +
                                  line(item("K2", "CWE-79", "Cross-site scripting")) +
                                  line(item("K3", "CWE-78", "Shell command built from input")));
    CHECK(r.warnings.empty());
    CHECK(r.store.size() == 3);
    CHECK(r.store.cwe_index().size() == 2);
    CHECK(r.store.by_cwe("CWE-78").size() == 2);
    CHECK(r.store.by_token("command").size() == 2);
    CHECK(r.store.find("K2") != nullptr);
    CHECK(r.store.find("K9") == nullptr);
}

TEST_CASE("duplicate kb_id keeps the last with a warning") {
    const auto r = ingest_kb_text(line(item("K1", "CWE-78", "first")) + line(item("K1", "CWE-89", "second")));
    CHECK(r.store.size() == 1);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].code == "duplicate_kb_id");
    CHECK(r.store.find("K1")->title == "second");
    CHECK(r.store.by_cwe("CWE-78").empty());
    CHECK(r.store.by_token("first").empty());
}

TEST_CASE("empty input gives an empty store") {
    CHECK(ingest_kb_text("").store.empty());
    CHECK(ingest_kb_text("\n\n").store.empty());
}

TEST_CASE("malformed line reports its line number") {
    try {
        ingest_kb_text(line(item("K1", "CWE-78", "ok")) + "{broken\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 2);
    }
    CHECK_THROWS_AS(ingest_kb_text(line(item("K1", "CWE78", "bad cwe"))), ParseError);
}

TEST_CASE("retrieval ranks cwe matches before keyword overlap and skips deprecated") {
    KnowledgeStore kb;
    kb.add(item("A", "CWE-89", "SQL injection through query strings"));
    kb.add(item("B", "CWE-78", "Command injection"));
    kb.add(item("C", "CWE-22", "Path traversal when a query names a file"));
    auto old = item("D", "CWE-78", "Deprecated command entry");
    old.deprecated = true;
    kb.add(old);

    const auto hits = kb.retrieve({"CWE-78", "query injection"}, 5);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].kb_id == "B");
    CHECK(hits[1].kb_id == "A");
    CHECK(hits[2].kb_id == "C");
    CHECK(kb.retrieve({"CWE-78", "query injection"}, 1).size() == 1);
    CHECK(kb.retrieve({"nothing matches"}, 3).empty());
}

TEST_CASE("deprecated CVE lookup is case-insensitive on kb_id") {
    KnowledgeStore kb;
    auto cve = item("CVE-2021-1234", "CWE-78", "old advisory");
    cve.source_db = "CVE";
    cve.deprecated = true;
    kb.add(cve);
    kb.add(item("CVE-2021-9999", "CWE-78", "live advisory"));
    CHECK(kb.is_deprecated_cve("cve-2021-1234"));
    CHECK_FALSE(kb.is_deprecated_cve("CVE-2021-9999"));
    CHECK_FALSE(kb.is_deprecated_cve("CVE-0000-0000"));
}

TEST_CASE("save and load round trip") {
    KnowledgeStore kb;
    kb.add(item("K1", "CWE-78", "Command injection", "shell"));
    kb.add(item("K2", "CWE-79", "XSS", "html"));
    const auto dir = std::filesystem::temp_directory_path() / "patuntrack_kb_roundtrip";
    std::filesystem::remove_all(dir);
    kb.save(dir.string());
    CHECK(std::filesystem::exists(dir / "items.jsonl"));
    CHECK(std::filesystem::exists(dir / "index.json"));
    const auto back = KnowledgeStore::load(dir.string());
    CHECK(back.items() == kb.items());
    CHECK(back.by_cwe("CWE-79").size() == 1);
    const auto bare = KnowledgeStore::load((dir / "items.jsonl").string());
    CHECK(bare.size() == 2);
    std::filesystem::remove_all(dir);
}
