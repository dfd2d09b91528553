#pragma once

// On-disk JSONL records: generation output and per-text detection scores.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "toblend/core.hpp"
#include "toblend/wire.hpp"

namespace toblend {

/// One generated text for an (instance, setting) pair.
struct GenerationRecord {
    std::string id;
    std::string dataset;
    std::string setting;
    std::string pool;
    std::uint64_t seed = 0;
    std::string prompt;
    GenerationTrace trace;

    const std::string& text() const { return trace.final_text; }
};

inline json to_json_record(const GenerationRecord& r) {
    json steps = json::array();
    for (const auto& s : r.trace.steps) {
        steps.push_back(json{{"backend_id", s.backend_id},
                             {"k", s.requested_k},
                             {"raw_chunk", s.raw_chunk},
                             {"kept_chunk", s.kept_chunk},
                             {"kept_tokens", s.kept_token_count}});
    }
    json j{{"id", r.id},          {"dataset", r.dataset}, {"setting", r.setting},
           {"pool", r.pool},      {"seed", r.seed},       {"prompt", r.prompt},
           {"text", r.trace.final_text}, {"trace", steps}, {"flags", r.trace.flags}};
    if (r.trace.failed) j["error"] = r.trace.error;
    return j;
}

inline GenerationRecord generation_record_from_json(const json& j) {
    GenerationRecord r;
    r.id = wire::field<std::string>(j, "id");
    r.dataset = wire::field_or<std::string>(j, "dataset", "custom");
    r.setting = wire::field<std::string>(j, "setting");
    r.pool = wire::field_or<std::string>(j, "pool", "");
    r.seed = wire::field_or<std::uint64_t>(j, "seed", 0);
    r.prompt = wire::field_or<std::string>(j, "prompt", "");
    r.trace.prompt = r.prompt;
    r.trace.seed = r.seed;
    r.trace.final_text = wire::field<std::string>(j, "text");
    r.trace.flags = wire::field_or<std::vector<std::string>>(j, "flags", {});
    r.trace.failed = std::find(r.trace.flags.begin(), r.trace.flags.end(), "failed") != r.trace.flags.end();
    r.trace.error = wire::field_or<std::string>(j, "error", "");
    for (const auto& s : wire::field_or<json>(j, "trace", json::array())) {
        GenerationStep st;
        st.backend_id = wire::field<std::string>(s, "backend_id");
        st.requested_k = wire::field_or<int>(s, "k", 0);
        st.raw_chunk = wire::field_or<std::string>(s, "raw_chunk", "");
        st.kept_chunk = wire::field<std::string>(s, "kept_chunk");
        st.kept_token_count = wire::field_or<int>(s, "kept_tokens", 0);
        r.trace.total_kept_tokens += st.kept_token_count;
        r.trace.steps.push_back(std::move(st));
    }
    return r;
}

/// Detection metrics for one text under one scorer.
struct ScoreRecord {
    std::string id;
    std::string dataset;
    std::string setting;  // "human" for the human-written class
    std::string scorer;
    std::map<std::string, double> metrics;
    json opts = json::object();
};

inline json to_json_record(const ScoreRecord& r) {
    return json{{"id", r.id},         {"dataset", r.dataset}, {"setting", r.setting},
                {"scorer", r.scorer}, {"metrics", r.metrics}, {"opts", r.opts}};
}

inline ScoreRecord score_record_from_json(const json& j) {
    ScoreRecord r;
    r.id = wire::field<std::string>(j, "id");
    r.dataset = wire::field_or<std::string>(j, "dataset", "custom");
    r.setting = wire::field<std::string>(j, "setting");
    r.scorer = wire::field<std::string>(j, "scorer");
    r.metrics = wire::field<std::map<std::string, double>>(j, "metrics");
    r.opts = wire::field_or<json>(j, "opts", json::object());
    return r;
}

/// Parses every line of a JSONL file. A final line without a trailing newline
/// that fails to parse is treated as an interrupted write and ignored when
/// `tolerate_torn_tail` is set.
inline std::vector<json> read_jsonl(const std::filesystem::path& path, bool tolerate_torn_tail = false) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<json> out;
    std::size_t pos = 0;
    for (int lineno = 1; pos < content.size(); ++lineno) {
        auto nl = content.find('\n', pos);
        const bool torn = nl == std::string::npos;
        std::string line = content.substr(pos, torn ? std::string::npos : nl - pos);
        pos = torn ? content.size() : nl + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            if (torn && tolerate_torn_tail) break;
            throw ProtocolError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

template <class Record>
std::vector<Record> read_records(const std::filesystem::path& path, Record (*decode)(const json&)) {
    std::vector<Record> out;
    int n = 0;
    for (const auto& j : read_jsonl(path)) {
        ++n;
        try {
            out.push_back(decode(j));
        } catch (const ProtocolError& e) {
            throw ProtocolError(path.string() + ": record " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<GenerationRecord> read_generation_records(const std::filesystem::path& path) {
    return read_records<GenerationRecord>(path, &generation_record_from_json);
}

inline std::vector<ScoreRecord> read_score_records(const std::filesystem::path& path) {
    return read_records<ScoreRecord>(path, &score_record_from_json);
}

}  // namespace toblend
