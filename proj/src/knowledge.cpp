#include "patuntrack/knowledge.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

#include "patuntrack/error.hpp"
#include "patuntrack/text.hpp"
#include "patuntrack/vtp.hpp"

namespace patuntrack {

void to_json(nlohmann::json& j, const GoldenKnowledgeItem& item) {
    j = nlohmann::json{{"kb_id", item.kb_id},
                       {"source_db", item.source_db},
                       {"cwe_id", item.cwe_id},
                       {"title", item.title},
                       {"description", item.description},
                       {"insecure_code", item.insecure_code},
                       {"deprecated", item.deprecated}};
}

void from_json(const nlohmann::json& j, GoldenKnowledgeItem& item) {
    item.kb_id = j.at("kb_id").get<std::string>();
    item.source_db = j.value("source_db", std::string{});
    item.cwe_id = j.value("cwe_id", std::string(kUnknownCwe));
    item.title = j.value("title", std::string{});
    item.description = j.value("description", std::string{});
    item.insecure_code = j.value("insecure_code", std::string{});
    item.deprecated = j.value("deprecated", false);
}

bool KnowledgeStore::add(GoldenKnowledgeItem item) {
    if (auto it = by_id_.find(item.kb_id); it != by_id_.end()) {
        items_[it->second] = std::move(item);
        rebuild_indexes();
        return true;
    }
    items_.push_back(std::move(item));
    by_id_.emplace(items_.back().kb_id, items_.size() - 1);
    index_item(items_.size() - 1);
    return false;
}

void KnowledgeStore::index_item(std::size_t pos) {
    const auto& item = items_[pos];
    cwe_index_[item.cwe_id].insert(pos);
    for (const auto& tok : text::keyword_tokens(item.title + " " + item.description)) {
        token_index_[tok].insert(pos);
    }
}

void KnowledgeStore::rebuild_indexes() {
    cwe_index_.clear();
    token_index_.clear();
    for (std::size_t i = 0; i < items_.size(); ++i) index_item(i);
}

const GoldenKnowledgeItem* KnowledgeStore::find(std::string_view kb_id) const {
    auto it = by_id_.find(kb_id);
    return it == by_id_.end() ? nullptr : &items_[it->second];
}

std::vector<const GoldenKnowledgeItem*> KnowledgeStore::by_cwe(std::string_view cwe_id) const {
    std::vector<const GoldenKnowledgeItem*> out;
    if (auto it = cwe_index_.find(std::string(cwe_id)); it != cwe_index_.end()) {
        for (auto pos : it->second) out.push_back(&items_[pos]);
    }
    return out;
}

std::vector<const GoldenKnowledgeItem*> KnowledgeStore::by_token(std::string_view token) const {
    std::vector<const GoldenKnowledgeItem*> out;
    if (auto it = token_index_.find(token); it != token_index_.end()) {
        for (auto pos : it->second) out.push_back(&items_[pos]);
    }
    return out;
}

bool KnowledgeStore::is_deprecated_cve(std::string_view cve_id) const {
    const std::string wanted = text::to_lower(text::trim(cve_id));
    if (wanted.empty()) return false;
    return std::any_of(items_.begin(), items_.end(), [&](const GoldenKnowledgeItem& item) {
        return item.deprecated && text::to_lower(item.kb_id) == wanted;
    });
}

std::vector<GoldenKnowledgeItem> KnowledgeStore::retrieve(const std::vector<std::string>& queries,
                                                          std::size_t top_r) const {
    std::set<std::string> cwe_queries;
    std::set<std::string> keywords;
    for (const auto& q : queries) {
        std::string t = text::trim(q);
        std::string upper = t;
        std::transform(upper.begin(), upper.end(), upper.begin(),
                       [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        if (is_valid_cwe_id(upper) && upper != kUnknownCwe) {
            cwe_queries.insert(upper);
            continue;
        }
        for (auto& tok : text::keyword_tokens(t)) keywords.insert(std::move(tok));
    }

    std::map<std::size_t, std::pair<bool, std::size_t>> scored;
    for (const auto& cwe : cwe_queries) {
        if (auto it = cwe_index_.find(cwe); it != cwe_index_.end()) {
            for (auto pos : it->second) scored[pos].first = true;
        }
    }
    for (const auto& kw : keywords) {
        if (auto it = token_index_.find(kw); it != token_index_.end()) {
            for (auto pos : it->second) ++scored[pos].second;
        }
    }

    std::vector<std::tuple<bool, std::size_t, std::string, std::size_t>> ranked;
    for (const auto& [pos, score] : scored) {
        if (items_[pos].deprecated) continue;
        ranked.emplace_back(score.first, score.second, items_[pos].kb_id, pos);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a);
        if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) > std::get<1>(b);
        return std::get<2>(a) < std::get<2>(b);
    });
    std::vector<GoldenKnowledgeItem> out;
    for (std::size_t i = 0; i < ranked.size() && i < top_r; ++i) out.push_back(items_[std::get<3>(ranked[i])]);
    return out;
}

void KnowledgeStore::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream items(fs::path(dir) / "items.jsonl");
    for (const auto& item : items_) items << nlohmann::json(item).dump() << '\n';

    nlohmann::json index;
    index["cwe"] = nlohmann::json::object();
    for (const auto& [cwe, positions] : cwe_index_) {
        for (auto pos : positions) index["cwe"][cwe].push_back(items_[pos].kb_id);
    }
    index["token"] = nlohmann::json::object();
    for (const auto& [tok, positions] : token_index_) {
        for (auto pos : positions) index["token"][tok].push_back(items_[pos].kb_id);
    }
    std::ofstream(fs::path(dir) / "index.json") << index.dump(1) << '\n';
}

KnowledgeStore KnowledgeStore::load(const std::string& path) {
    namespace fs = std::filesystem;
    const fs::path p = fs::is_directory(path) ? fs::path(path) / "items.jsonl" : fs::path(path);
    return ingest_kb(p.string()).store;
}

KbIngestResult ingest_kb_text(std::string_view jsonl) {
    KbIngestResult result;
    std::size_t line_no = 0;
    for (const auto& line : text::split_lines(jsonl)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        GoldenKnowledgeItem item;
        try {
            item = nlohmann::json::parse(line).get<GoldenKnowledgeItem>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("knowledge line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        if (item.kb_id.empty()) {
            throw ParseError("knowledge line " + std::to_string(line_no) + ": empty kb_id", line_no);
        }
        if (!is_valid_cwe_id(item.cwe_id)) {
            throw ParseError("knowledge line " + std::to_string(line_no) + ": bad cwe_id " + item.cwe_id, line_no);
        }
        const std::string id = item.kb_id;
        if (result.store.add(std::move(item))) {
            result.warnings.push_back({"duplicate_kb_id", "kb_id " + id + " on line " + std::to_string(line_no) +
                                                              " replaces an earlier entry"});
        }
    }
    return result;
}

KbIngestResult ingest_kb(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open knowledge file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return ingest_kb_text(buf.str());
}

}  // namespace patuntrack
