#include "patuntrack/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "patuntrack/distance.hpp"
#include "patuntrack/error.hpp"
#include "patuntrack/text.hpp"

namespace patuntrack {

std::string to_string(SegmentKind kind) {
    switch (kind) {
        case SegmentKind::text: return "text";
        case SegmentKind::code: return "code";
        case SegmentKind::screenshot_text: return "screenshot_text";
    }
    return "text";
}

SegmentKind segment_kind_from_string(std::string_view s) {
    if (s == "text") return SegmentKind::text;
    if (s == "code") return SegmentKind::code;
    if (s == "screenshot_text") return SegmentKind::screenshot_text;
    throw UsageError("unknown segment kind: " + std::string(s));
}

bool IssueReport::label_complete() const {
    return gt_insecure_code && !gt_insecure_code->empty() && gt_patch && !gt_patch->empty();
}

std::string IssueReport::tagged_text() const {
    std::ostringstream os;
    os << "Title: " << title << "\n";
    for (const auto& s : body_segments) {
        switch (s.kind) {
            case SegmentKind::text: os << s.content << "\n"; break;
            case SegmentKind::code: os << "[CODE] " << s.content << "\n"; break;
            case SegmentKind::screenshot_text: os << "[SCR] " << s.content << "\n"; break;
        }
    }
    return os.str();
}

void validate(const IssueReport& ir) {
    if (ir.id.empty()) throw UsageError("issue report with empty id");
    if (ir.gt_patch && !ir.gt_insecure_code) {
        throw UsageError("issue report " + ir.id + " has gt_patch without gt_insecure_code");
    }
    for (const auto& s : ir.body_segments) {
        if (text::trim(s.content).empty()) throw UsageError("issue report " + ir.id + " has an empty segment");
    }
}

void to_json(nlohmann::json& j, const IssueReport& ir) {
    j = nlohmann::json::object();
    j["id"] = ir.id;
    j["title"] = ir.title;
    j["body_segments"] = nlohmann::json::array();
    for (const auto& s : ir.body_segments) {
        j["body_segments"].push_back({{"kind", to_string(s.kind)}, {"content", s.content}});
    }
    if (ir.cve_id) j["cve_id"] = *ir.cve_id;
    if (ir.vul_type_label) j["vul_type_label"] = *ir.vul_type_label;
    if (ir.gt_insecure_code) j["gt_insecure_code"] = *ir.gt_insecure_code;
    if (ir.gt_patch) j["gt_patch"] = *ir.gt_patch;
    if (ir.gt_vtp_serialized) j["gt_vtp_serialized"] = *ir.gt_vtp_serialized;
    if (ir.verdicts) j["verdicts"] = *ir.verdicts;
    if (ir.patch_type_label) j["patch_type_label"] = *ir.patch_type_label;
}

namespace {

template <typename T>
std::optional<T> optional_field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

IssueReport issue_report_from_json(const nlohmann::json& j) {
    IssueReport ir;
    ir.id = j.at("id").get<std::string>();
    ir.title = j.value("title", std::string{});
    if (j.contains("body_segments")) {
        for (const auto& s : j.at("body_segments")) {
            ir.body_segments.push_back(
                Segment{segment_kind_from_string(s.at("kind").get<std::string>()), s.at("content").get<std::string>()});
        }
    }
    ir.cve_id = optional_field<std::string>(j, "cve_id");
    ir.vul_type_label = optional_field<VulType>(j, "vul_type_label");
    ir.gt_insecure_code = optional_field<std::string>(j, "gt_insecure_code");
    ir.gt_patch = optional_field<std::string>(j, "gt_patch");
    ir.gt_vtp_serialized = optional_field<std::string>(j, "gt_vtp_serialized");
    ir.patch_type_label = optional_field<std::string>(j, "patch_type_label");
    if (j.contains("verdicts") && !j.at("verdicts").is_null()) {
        std::vector<CandidateVerdict> verdicts;
        for (const auto& v : j.at("verdicts")) verdicts.push_back(verdict_from_json(v, ir.id));
        ir.verdicts = std::move(verdicts);
    }
    return ir;
}

std::vector<IssueReport> parse_corpus(std::string_view jsonl) {
    std::vector<IssueReport> corpus;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 0;
    for (const auto& line : text::split_lines(jsonl)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        IssueReport ir;
        try {
            ir = issue_report_from_json(nlohmann::json::parse(line));
            validate(ir);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": " + e.what(), line_no);
        } catch (const UsageError& e) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
        if (!seen.insert(ir.id).second) {
            throw ParseError("corpus line " + std::to_string(line_no) + ": duplicate id " + ir.id, line_no);
        }
        corpus.push_back(std::move(ir));
    }
    return corpus;
}

std::vector<IssueReport> read_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open corpus: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_corpus(buf.str());
}

void write_corpus(const std::string& path, const std::vector<IssueReport>& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write corpus: " + path);
    for (const auto& ir : corpus) out << nlohmann::json(ir).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Markup preprocessing

namespace {

constexpr std::array<std::string_view, 14> kVoidElements = {
    "br", "hr", "img", "input", "meta", "link", "wbr", "area", "base", "col", "embed", "source", "track", "param"};

constexpr std::array<std::string_view, 21> kBlockElements = {
    "p", "div", "li", "ul", "ol", "h1", "h2", "h3", "h4", "h5", "h6", "tr", "table",
    "blockquote", "br", "hr", "section", "article", "td", "th", "details"};

template <std::size_t N>
bool in_list(const std::array<std::string_view, N>& list, std::string_view name) {
    return std::find(list.begin(), list.end(), name) != list.end();
}

bool is_image_url(std::string_view url) {
    std::string u = text::to_lower(url);
    if (auto q = u.find_first_of("?#"); q != std::string::npos) u.resize(q);
    for (std::string_view ext : {".png", ".jpg", ".jpeg", ".gif", ".bmp", ".webp"}) {
        if (u.size() >= ext.size() && u.compare(u.size() - ext.size(), ext.size(), ext) == 0) return true;
    }
    return false;
}

std::string decode_entity(std::string_view body, std::size_t& i) {
    // body[i] == '&'
    const auto semi = body.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
        ++i;
        return "&";
    }
    const std::string_view name = body.substr(i + 1, semi - i - 1);
    std::string out;
    if (name == "amp") out = "&";
    else if (name == "lt") out = "<";
    else if (name == "gt") out = ">";
    else if (name == "quot") out = "\"";
    else if (name == "apos") out = "'";
    else if (name == "nbsp") out = " ";
    else if (!name.empty() && name[0] == '#') {
        unsigned long code = 0;
        try {
            code = (name.size() > 1 && (name[1] == 'x' || name[1] == 'X'))
                       ? std::stoul(std::string(name.substr(2)), nullptr, 16)
                       : std::stoul(std::string(name.substr(1)), nullptr, 10);
        } catch (const std::exception&) {
            ++i;
            return "&";
        }
        if (code < 0x80) {
            out.push_back(static_cast<char>(code));
        } else if (code < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (code >> 6)));
            out.push_back(static_cast<char>(0x80 | (code & 0x3F)));
        } else if (code < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (code >> 12)));
            out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (code & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (code >> 18)));
            out.push_back(static_cast<char>(0x80 | ((code >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (code & 0x3F)));
        }
    } else {
        ++i;
        return "&";
    }
    i = semi + 1;
    return out;
}

std::string escape_markup(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

struct Tag {
    std::string name;
    bool closing = false;
    bool self_closing = false;
    std::map<std::string, std::string> attrs;
};

// Parses the tag starting at body[pos] == '<'; advances pos past '>'.
Tag parse_tag(std::string_view body, std::size_t& pos) {
    const std::size_t start = pos;
    Tag tag;
    std::size_t i = pos + 1;
    if (i < body.size() && body[i] == '/') {
        tag.closing = true;
        ++i;
    }
    const std::size_t name_start = i;
    while (i < body.size() && (std::isalnum(static_cast<unsigned char>(body[i])) || body[i] == '-' || body[i] == ':')) ++i;
    tag.name = text::to_lower(body.substr(name_start, i - name_start));
    if (tag.name.empty()) throw ParseError("malformed tag at byte " + std::to_string(start), start);

    while (true) {
        while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
        if (i >= body.size()) throw ParseError("unterminated tag <" + tag.name + "> at byte " + std::to_string(start), start);
        if (body[i] == '>') {
            ++i;
            break;
        }
        if (body[i] == '/' && i + 1 < body.size() && body[i + 1] == '>') {
            tag.self_closing = true;
            i += 2;
            break;
        }
        const std::size_t attr_start = i;
        while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i])) && body[i] != '=' &&
               body[i] != '>' && body[i] != '/' && body[i] != '<') {
            ++i;
        }
        if (i < body.size() && body[i] == '<') {
            throw ParseError("unterminated tag <" + tag.name + "> at byte " + std::to_string(start), start);
        }
        std::string attr = text::to_lower(body.substr(attr_start, i - attr_start));
        if (attr.empty()) {
            throw ParseError("malformed attribute in <" + tag.name + "> at byte " + std::to_string(i), i);
        }
        std::string raw_value;
        while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
        if (i < body.size() && body[i] == '=') {
            ++i;
            while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
            if (i < body.size() && (body[i] == '"' || body[i] == '\'')) {
                const char quote = body[i];
                const auto close = body.find(quote, i + 1);
                if (close == std::string_view::npos) {
                    throw ParseError("unterminated attribute value at byte " + std::to_string(i), i);
                }
                raw_value = std::string(body.substr(i + 1, close - i - 1));
                i = close + 1;
            } else {
                const std::size_t v = i;
                while (i < body.size() && !std::isspace(static_cast<unsigned char>(body[i])) && body[i] != '>') ++i;
                raw_value = std::string(body.substr(v, i - v));
            }
        }
        std::string value;
        for (std::size_t k = 0; k < raw_value.size();) {
            if (raw_value[k] == '&') {
                value += decode_entity(raw_value, k);
            } else {
                value.push_back(raw_value[k++]);
            }
        }
        tag.attrs[attr] = value;
    }
    pos = i;
    return tag;
}

std::string normalize_prose(std::string_view s) {
    return text::join(text::normalized_lines(s), "\n");
}

std::string normalize_code(std::string_view s) {
    auto lines = text::split_lines(s);
    auto blank = [](const std::string& l) { return text::trim(l).empty(); };
    while (!lines.empty() && blank(lines.front())) lines.erase(lines.begin());
    while (!lines.empty() && blank(lines.back())) lines.pop_back();
    return text::join(lines, "\n");
}

class MarkupWalker {
public:
    MarkupWalker(const MarkupDocument& doc, const PreprocessOptions& options, Diagnostics& warnings)
        : doc_(doc), options_(options), warnings_(warnings) {}

    std::vector<Segment> run() {
        std::string_view body = doc_.body;
        std::size_t i = 0;
        while (i < body.size()) {
            const char c = body[i];
            if (c == '<') {
                if (body.substr(i, 4) == "<!--") {
                    const auto end = body.find("-->", i + 4);
                    if (end == std::string_view::npos) {
                        throw ParseError("unterminated comment at byte " + std::to_string(i), i);
                    }
                    i = end + 3;
                    continue;
                }
                if (body.substr(i, 2) == "<!" || body.substr(i, 2) == "<?") {
                    const auto end = body.find('>', i);
                    if (end == std::string_view::npos) {
                        throw ParseError("unterminated declaration at byte " + std::to_string(i), i);
                    }
                    i = end + 1;
                    continue;
                }
                const bool looks_like_tag =
                    i + 1 < body.size() &&
                    (std::isalpha(static_cast<unsigned char>(body[i + 1])) || body[i + 1] == '/');
                if (!looks_like_tag) {
                    append_char("<");
                    ++i;
                    continue;
                }
                const std::size_t start = i;
                handle_tag(parse_tag(body, i), start);
                continue;
            }
            if (c == '&') {
                append_char(decode_entity(body, i));
                continue;
            }
            append_char(std::string(1, c));
            ++i;
        }
        if (!stack_.empty()) {
            throw ParseError("unclosed tag <" + stack_.back().first + "> opened at byte " +
                                 std::to_string(stack_.back().second),
                             stack_.back().second);
        }
        flush_text();
        return std::move(segments_);
    }

private:
    void append_char(const std::string& s) {
        if (image_link_depth_ > 0) return;
        if (code_depth_ > 0) {
            code_buf_ += s;
        } else {
            text_buf_ += s;
        }
    }

    void flush_text() {
        std::string content = normalize_prose(text_buf_);
        text_buf_.clear();
        if (options_.normalize_text && !content.empty()) content = options_.normalize_text(content);
        if (!text::trim(content).empty()) segments_.push_back({SegmentKind::text, std::move(content)});
    }

    void add_screenshot(const std::string& url, const std::string& alt, std::size_t offset) {
        std::string extracted;
        if (auto it = doc_.screenshot_text.find(url); it != doc_.screenshot_text.end()) {
            extracted = it->second;
        } else {
            extracted = alt;
        }
        extracted = normalize_prose(extracted);
        if (extracted.empty()) {
            warnings_.push_back({"screenshot_without_text", "image '" + url + "' at byte " + std::to_string(offset) +
                                                                " has no pre-extracted text; dropped"});
            return;
        }
        flush_text();
        segments_.push_back({SegmentKind::screenshot_text, std::move(extracted)});
    }

    void handle_tag(const Tag& tag, std::size_t offset) {
        const bool is_code = tag.name == "code" || tag.name == "pre";
        if (tag.closing) {
            if (stack_.empty() || stack_.back().first != tag.name) {
                const std::string expected = stack_.empty() ? "nothing" : "</" + stack_.back().first + ">";
                throw ParseError("mismatched closing tag </" + tag.name + "> at byte " + std::to_string(offset) +
                                     " (expected " + expected + ")",
                                 offset);
            }
            stack_.pop_back();
            if (is_code && --code_depth_ == 0) {
                std::string content = normalize_code(code_buf_);
                code_buf_.clear();
                if (!content.empty()) segments_.push_back({SegmentKind::code, std::move(content)});
            } else if (tag.name == "a" && !image_links_.empty() && image_links_.back() == stack_.size()) {
                image_links_.pop_back();
                --image_link_depth_;
            } else if (code_depth_ == 0 && in_list(kBlockElements, tag.name)) {
                text_buf_ += "\n";
            }
            return;
        }

        if (tag.name == "img") {
            if (code_depth_ == 0) {
                auto src = tag.attrs.count("src") ? tag.attrs.at("src") : std::string{};
                auto alt = tag.attrs.count("alt") ? tag.attrs.at("alt") : std::string{};
                add_screenshot(src, alt, offset);
            }
            if (!tag.self_closing && !in_list(kVoidElements, tag.name)) stack_.emplace_back(tag.name, offset);
            return;
        }
        if (tag.name == "br") {
            if (code_depth_ > 0) code_buf_ += "\n";
            else text_buf_ += "\n";
            return;
        }
        const bool is_void = tag.self_closing || in_list(kVoidElements, tag.name);
        if (tag.name == "a" && code_depth_ == 0 && tag.attrs.count("href") && is_image_url(tag.attrs.at("href"))) {
            add_screenshot(tag.attrs.at("href"), {}, offset);
            if (!is_void) {
                stack_.emplace_back(tag.name, offset);
                image_links_.push_back(stack_.size() - 1);
                ++image_link_depth_;
            }
            return;
        }
        if (is_void) {
            if (code_depth_ == 0 && in_list(kBlockElements, tag.name)) text_buf_ += "\n";
            return;
        }
        stack_.emplace_back(tag.name, offset);
        if (is_code) {
            if (code_depth_++ == 0) flush_text();
        } else if (code_depth_ == 0 && in_list(kBlockElements, tag.name)) {
            text_buf_ += "\n";
        }
    }

    const MarkupDocument& doc_;
    const PreprocessOptions& options_;
    Diagnostics& warnings_;
    std::vector<Segment> segments_;
    std::vector<std::pair<std::string, std::size_t>> stack_;
    std::vector<std::size_t> image_links_;
    int image_link_depth_ = 0;
    int code_depth_ = 0;
    std::string text_buf_;
    std::string code_buf_;
};

}  // namespace

PreprocessResult preprocess_ir(const MarkupDocument& raw, const PreprocessOptions& options) {
    PreprocessResult result;
    result.ir.id = raw.id;
    result.ir.title = text::collapse_whitespace(raw.title);
    auto segments = MarkupWalker(raw, options, result.warnings).run();
    for (;;) {
        segments = merge_similar_segments(std::move(segments), options.merge_threshold);
        std::vector<Segment> joined;
        for (auto& s : segments) {
            if (!joined.empty() && s.kind == SegmentKind::text && joined.back().kind == SegmentKind::text) {
                joined.back().content += "\n" + s.content;
            } else {
                joined.push_back(std::move(s));
            }
        }
        const bool stable = joined.size() == segments.size();
        segments = std::move(joined);
        if (stable) break;
    }
    result.ir.body_segments = std::move(segments);
    return result;
}

MarkupDocument render_markup(const IssueReport& ir) {
    MarkupDocument doc;
    doc.id = ir.id;
    doc.title = ir.title;
    std::size_t shot = 0;
    for (const auto& s : ir.body_segments) {
        switch (s.kind) {
            case SegmentKind::text: doc.body += "<p>" + escape_markup(s.content) + "</p>"; break;
            case SegmentKind::code: doc.body += "<code>" + escape_markup(s.content) + "</code>"; break;
            case SegmentKind::screenshot_text: {
                const std::string url = "screenshot-" + std::to_string(shot++) + ".png";
                doc.screenshot_text[url] = s.content;
                doc.body += "<img src=\"" + url + "\"/>";
                break;
            }
        }
    }
    return doc;
}

std::vector<Segment> merge_similar_segments(std::vector<Segment> segments, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("merge threshold must be in [0, 1]");
    bool merged = true;
    while (merged) {
        merged = false;
        for (std::size_t i = 0; i < segments.size() && !merged; ++i) {
            for (std::size_t j = i + 1; j < segments.size(); ++j) {
                if (segments[i].kind != segments[j].kind) continue;
                if (edit_similarity(segments[i].content, segments[j].content) < threshold) continue;
                if (segments[j].content.size() > segments[i].content.size()) {
                    segments[i].content = std::move(segments[j].content);
                }
                segments.erase(segments.begin() + static_cast<std::ptrdiff_t>(j));
                merged = true;
                break;
            }
        }
    }
    return segments;
}

DenoiseRules DenoiseRules::defaults() {
    return DenoiseRules{{
        "not a vulnerability",
        "not a security vulnerability",
        "not a security issue",
        "not a security bug",
        "no security impact",
        "not exploitable",
        "false positive",
    }};
}

DenoiseResult denoise_corpus(const std::vector<IssueReport>& corpus, const KnowledgeStore& kb,
                             const DenoiseRules& rules) {
    DenoiseResult result;
    for (const auto& ir : corpus) {
        std::string haystack = ir.title;
        for (const auto& s : ir.body_segments) haystack += "\n" + s.content;
        const std::string lowered = text::to_lower(haystack);

        std::optional<Removal> removal;
        for (const auto& phrase : rules.negation_phrases) {
            if (!phrase.empty() && lowered.find(text::to_lower(phrase)) != std::string::npos) {
                removal = Removal{ir.id, "negation_rule", phrase};
                break;
            }
        }
        if (!removal && ir.cve_id && kb.is_deprecated_cve(*ir.cve_id)) {
            removal = Removal{ir.id, "deprecated_cve", *ir.cve_id};
        }
        if (removal) {
            result.removed.push_back(std::move(*removal));
        } else {
            result.kept.push_back(ir);
        }
    }
    return result;
}

void to_json(nlohmann::json& j, const CorpusSplit& s) {
    j = nlohmann::json{{"prompt_set", s.prompt_set}, {"eval_set", s.eval_set}, {"seed", s.seed}, {"ratio", s.ratio}};
    j["warnings"] = s.warnings;
}

CorpusSplit corpus_split_from_json(const nlohmann::json& j) {
    CorpusSplit s;
    s.prompt_set = j.at("prompt_set").get<std::vector<std::string>>();
    s.eval_set = j.at("eval_set").get<std::vector<std::string>>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.ratio = j.value("ratio", 0.8);
    return s;
}

CorpusSplit split_dataset(const std::vector<IssueReport>& corpus, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw UsageError("split ratio must be in (0, 1)");
    CorpusSplit split;
    split.seed = seed;
    split.ratio = ratio;

    std::vector<std::string> eligible;
    for (const auto& ir : corpus) {
        if (ir.label_complete()) {
            eligible.push_back(ir.id);
        } else {
            split.eval_set.push_back(ir.id);
        }
    }
    std::sort(eligible.begin(), eligible.end());
    std::mt19937_64 rng(seed);
    for (std::size_t i = eligible.size(); i > 1; --i) {
        std::swap(eligible[i - 1], eligible[rng() % i]);
    }
    // The epsilon absorbs representation error in products like 0.8 * 10.
    const auto take = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(eligible.size()) + 1e-9));
    split.prompt_set.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take));
    split.eval_set.insert(split.eval_set.end(), eligible.begin() + static_cast<std::ptrdiff_t>(take), eligible.end());
    std::sort(split.prompt_set.begin(), split.prompt_set.end());
    std::sort(split.eval_set.begin(), split.eval_set.end());
    if (eligible.empty()) {
        split.warnings.push_back({"no_eligible_reports", "no label-complete reports; prompt set is empty"});
    }
    return split;
}

}  // namespace patuntrack
