#pragma once

// Dataset ingestion: instance JSONL, prompt extraction, annotation CSV.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "toblend/backend.hpp"
#include "toblend/core.hpp"
#include "toblend/ngram.hpp"
#include "toblend/wire.hpp"

namespace toblend {

enum class Dataset { xsum, squad, writing, custom };

inline std::string_view to_string(Dataset d) {
    switch (d) {
    case Dataset::xsum: return "xsum";
    case Dataset::squad: return "squad";
    case Dataset::writing: return "writing";
    case Dataset::custom: return "custom";
    }
    return "";
}

inline Dataset dataset_from_string(std::string_view s) {
    std::string lower;
    for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == "xsum") return Dataset::xsum;
    if (lower == "squad") return Dataset::squad;
    if (lower == "writing" || lower == "writingprompts") return Dataset::writing;
    return Dataset::custom;
}

struct Instance {
    std::string id;
    Dataset dataset = Dataset::custom;
    std::string text;
    std::string prompt;

    bool operator==(const Instance&) const = default;
};

/// Reads one JSON object per line with "id", "dataset" and "text". Blank lines
/// are ignored; malformed lines and duplicate ids raise ProtocolError naming
/// the line.
inline std::vector<Instance> load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<Instance> out;
    std::set<std::string> ids;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
        Instance inst;
        try {
            const auto j = wire::parse(line);
            inst.id = wire::field<std::string>(j, "id");
            inst.dataset = dataset_from_string(wire::field<std::string>(j, "dataset"));
            inst.text = wire::field<std::string>(j, "text");
            inst.prompt = wire::field_or<std::string>(j, "prompt", "");
        } catch (const ProtocolError& e) {
            throw ProtocolError(where + e.what());
        }
        if (inst.text.empty()) throw ProtocolError(where + "empty text");
        if (!ids.insert(inst.id).second) throw ProtocolError(where + "duplicate id '" + inst.id + "'");
        out.push_back(std::move(inst));
    }
    return out;
}

/// Reference tokenizer that splits on whitespace; used when no pool member is
/// designated as the reference backend.
struct WhitespaceTokenizer final : Backend {
    BackendDescriptor describe() const override {
        BackendDescriptor d;
        d.backend_id = d.model_id = "whitespace";
        d.capabilities = {Capability::tokenize};
        return d;
    }
    std::vector<std::string> tokenize(std::string_view text) const override { return whitespace_tokenize(text); }
};

/// The prefix of instance.text that ends with its n-th token under the
/// reference backend's tokenizer, or nullopt when the text has fewer than n
/// tokens. Tokens that cannot be located verbatim in the text fall back to the
/// concatenation of the first n tokens.
inline std::optional<std::string> extract_prompt(const Instance& instance, const Backend& reference,
                                                 int n = 30) {
    if (n < 0) throw PreconditionError("extract_prompt: n must be >= 0");
    const auto toks = toblend::tokenize(reference, instance.text);
    if (toks.size() < static_cast<std::size_t>(n)) return std::nullopt;
    std::size_t cursor = 0;
    for (int i = 0; i < n; ++i) {
        const auto& t = toks[static_cast<std::size_t>(i)];
        const auto pos = instance.text.find(t, cursor);
        if (t.empty() || pos == std::string::npos) {
            std::string joined;
            for (int j = 0; j < n; ++j) joined += toks[static_cast<std::size_t>(j)];
            return joined;
        }
        cursor = pos + t.size();
    }
    return instance.text.substr(0, cursor);
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

/// Annotated settings: the seven blend settings plus the single-model
/// references, optionally qualified by a pool name ("advanced:tl2").
inline bool is_annotation_setting(std::string_view s) {
    const auto colon = s.find(':');
    if (colon != std::string_view::npos) {
        const auto pool = s.substr(0, colon);
        if (pool.empty()) return false;
        for (char c : pool)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
        s = s.substr(colon + 1);
    }
    if (chunk_mode_from_setting(s)) return true;
    return s == "gpt2" || s == "chatgpt";
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
    }
    return out;
}

}  // namespace detail

/// Reads `instance_id,setting,annotator,coherence,fluency,best` rows.
inline std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) return {};
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> expected{"instance_id", "setting", "annotator",
                                            "coherence",   "fluency", "best"};
    if (detail::split_csv_line(line) != expected)
        throw ProtocolError(path.string() + ":1: header must be instance_id,setting,annotator,coherence,fluency,best");

    std::vector<AnnotationRecord> out;
    for (int row = 2; std::getline(in, line); ++row) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(row) + ": ";
        const auto f = detail::split_csv_line(line);
        if (f.size() != 6) throw ProtocolError(where + "expected 6 columns");
        AnnotationRecord a;
        a.instance_id = f[0];
        a.setting = f[1];
        a.annotator = f[2];
        if (!is_annotation_setting(a.setting)) throw ProtocolError(where + "unknown setting '" + a.setting + "'");
        auto score = [&](const std::string& s, const char* name) {
            int v = 0;
            std::size_t used = 0;
            try {
                v = std::stoi(s, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != s.size() || s.empty()) throw ProtocolError(where + name + " is not an integer");
            if (v < 1 || v > 7) throw ProtocolError(where + name + " " + s + " outside 1-7");
            return v;
        };
        a.coherence = score(f[3], "coherence");
        a.fluency = score(f[4], "fluency");
        std::string best;
        for (char c : f[5]) best.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        if (best == "1" || best == "true" || best == "yes" || best == "y") a.best_pick = true;
        else if (best.empty() || best == "0" || best == "false" || best == "no" || best == "n") a.best_pick = false;
        else throw ProtocolError(where + "best must be a boolean");
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace toblend
