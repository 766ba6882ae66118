// Writes the files the CLI smoke test feeds to the patuntrack binary.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "synthetic.hpp"

namespace fs = std::filesystem;
namespace pt = patuntrack::testing;

namespace {

void write(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    out << body;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: cli_fixture <dir>\n";
        return 1;
    }
    const fs::path dir(argv[1]);
    fs::create_directories(dir);
    const auto corpus = pt::synthetic_corpus(10);

    std::string raw;
    for (const auto& ir : corpus) raw += nlohmann::json(ir).dump() + "\n";
    raw += nlohmann::json{{"id", "markup-1"},
                          {"title", "Crash on <b>start</b>"},
                          {"body", "<p>It crashes.</p><code>run(cmd)</code><img src=\"s.png\" alt=\"stack trace\"/>"}}
               .dump() +
           "\n";
    write(dir / "raw.jsonl", raw);

    pt::synthetic_kb().save((dir / "kb_src").string());

    const auto script = pt::pipeline_script(corpus);
    write(dir / "script.json", script.dump(2));
    auto sticky = script;
    for (auto& e : sticky) e["repeat"] = true;
    write(dir / "optimize_script.json", sticky.dump(2));

    write(dir / "config.json",
          nlohmann::json{{"backend", {{"kind", "scripted"}, {"script_path", "script.json"}}}, {"concurrency", 2}}
              .dump(2));
    write(dir / "optimize_config.json",
          nlohmann::json{{"backend", {{"kind", "scripted"}, {"script_path", "optimize_script.json"}}}, {"epochs", 2}}
              .dump(2));
    return 0;
}
