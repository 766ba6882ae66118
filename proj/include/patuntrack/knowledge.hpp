#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "patuntrack/diagnostic.hpp"

namespace patuntrack {

/// One curated entry from an external vulnerability database (CWE, CVE, NVD,
/// ...). For CVE-sourced entries kb_id is the CVE identifier.
struct GoldenKnowledgeItem {
    std::string kb_id;
    std::string source_db;
    std::string cwe_id;
    std::string title;
    std::string description;
    std::string insecure_code;
    bool deprecated = false;

    bool operator==(const GoldenKnowledgeItem&) const = default;
};

void to_json(nlohmann::json& j, const GoldenKnowledgeItem& item);
void from_json(const nlohmann::json& j, GoldenKnowledgeItem& item);

/// Read-only after construction; safe to share across threads.
class KnowledgeStore {
public:
    /// Inserts or replaces by kb_id. Returns true when an item was replaced.
    bool add(GoldenKnowledgeItem item);

    const std::vector<GoldenKnowledgeItem>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    const GoldenKnowledgeItem* find(std::string_view kb_id) const;
    std::vector<const GoldenKnowledgeItem*> by_cwe(std::string_view cwe_id) const;
    std::vector<const GoldenKnowledgeItem*> by_token(std::string_view token) const;
    const std::map<std::string, std::set<std::size_t>>& cwe_index() const { return cwe_index_; }

    /// True when an item whose kb_id equals `cve_id` (case-insensitive) is
    /// flagged deprecated.
    bool is_deprecated_cve(std::string_view cve_id) const;

    /// Ranks non-deprecated items by exact cwe_id match with any query, then
    /// by the number of distinct query keywords found in title+description,
    /// then by kb_id. Items matching neither way are not returned.
    std::vector<GoldenKnowledgeItem> retrieve(const std::vector<std::string>& queries, std::size_t top_r) const;

    /// Writes items.jsonl and index.json under `dir`.
    void save(const std::string& dir) const;
    /// Loads a directory written by save(), or a bare JSONL file.
    static KnowledgeStore load(const std::string& path);

private:
    void index_item(std::size_t pos);
    void rebuild_indexes();

    std::vector<GoldenKnowledgeItem> items_;
    std::map<std::string, std::size_t, std::less<>> by_id_;
    std::map<std::string, std::set<std::size_t>> cwe_index_;
    std::map<std::string, std::set<std::size_t>, std::less<>> token_index_;
};

struct KbIngestResult {
    KnowledgeStore store;
    Diagnostics warnings;
};

/// Parses a JSONL file of GoldenKnowledgeItem. Duplicate kb_id: last wins,
/// with a warning. Malformed lines throw ParseError with the line number.
KbIngestResult ingest_kb(const std::string& path);
KbIngestResult ingest_kb_text(std::string_view jsonl);

}  // namespace patuntrack
