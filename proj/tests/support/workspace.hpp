#pragma once

// A self-contained run directory: synthetic corpora, instance files for three
// datasets and a run configuration that wires them together.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "support/synthetic.hpp"
#include "support/tmpdir.hpp"

namespace fixture {

struct WorkspaceOptions {
    std::uint64_t seed = 1;
    int instances_per_dataset = 5;
    int corpus_lines = 300;
    int max_content_tokens = 40;
    std::vector<std::string> datasets{"xsum", "squad", "writing"};
};

class Workspace {
public:
    explicit Workspace(WorkspaceOptions o = {}) : opts_(o), lang_(synth::make_language(o.seed)) {
        write_lines("pool_a.txt", synth::corpus(lang_, 0, o.corpus_lines, 8, 30, o.seed * 10 + 1));
        write_lines("pool_b.txt", synth::corpus(lang_, 1, o.corpus_lines, 8, 30, o.seed * 10 + 2));
        write_lines("scorer.txt", synth::corpus(lang_, -1, o.corpus_lines, 8, 30, o.seed * 10 + 3));
        write_lines("perturb.txt", synth::corpus(lang_, -1, o.corpus_lines, 8, 30, o.seed * 10 + 4));
        std::uint64_t s = o.seed * 10 + 5;
        for (const auto& d : o.datasets) {
            std::ofstream f(dir_ / (d + ".jsonl"));
            const auto texts = synth::corpus(lang_, -1, o.instances_per_dataset, 45, 80, s++);
            for (std::size_t i = 0; i < texts.size(); ++i)
                f << nlohmann::json{{"id", d + "-" + std::to_string(i + 1)}, {"dataset", d}, {"text", texts[i]}}.dump()
                  << '\n';
        }
        using nlohmann::json;
        json pool = json::array();
        pool.push_back({{"backend_id", "alpha"}, {"endpoint", "ngram:pool_a.txt"}});
        pool.push_back({{"backend_id", "beta"}, {"endpoint", "ngram:pool_b.txt"}, {"temperature", 0.8}});
        config_ = json::object();
        config_["pools"]["classic"] = pool;
        config_.update(json{
            {"scorer", {{"backend_id", "scorer"}, {"endpoint", "ngram:scorer.txt"}}},
            {"perturber", {{"corpus", "perturb.txt"}, {"m", 4}}},
            {"generation", {{"max_content_tokens", o.max_content_tokens}}},
            {"output_dir", "out"},
            {"cache_dir", "cache"},
            {"parallelism", 2},
            {"seed", 7}});
        for (const auto& d : o.datasets) config_["datasets"][d] = d + ".jsonl";
        save_config();
    }

    const std::filesystem::path& dir() const { return dir_.path(); }
    std::filesystem::path operator/(const std::string& name) const { return dir_ / name; }
    nlohmann::json& config() { return config_; }
    const synth::Language& language() const { return lang_; }

    std::filesystem::path save_config(const std::string& name = "config.json") const {
        std::ofstream(dir_ / name) << config_.dump(2);
        return dir_ / name;
    }

    void write_lines(const std::string& name, const std::vector<std::string>& lines) const {
        std::ofstream f(dir_ / name);
        for (const auto& l : lines) f << l << '\n';
    }

private:
    stubs::TempDir dir_;
    WorkspaceOptions opts_;
    synth::Language lang_;
    nlohmann::json config_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::size_t count_lines(const std::filesystem::path& p) {
    const auto s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace fixture
