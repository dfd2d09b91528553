#pragma once

// JSON encodings of the wire protocol messages and of the records written to
// disk. Decoding is strict: missing or mistyped fields raise ProtocolError.

#include <json.hpp>

#include <string>
#include <string_view>

#include "toblend/backend.hpp"
#include "toblend/core.hpp"

namespace toblend {

using json = nlohmann::json;

namespace wire {

template <class T>
T field(const json& j, std::string_view name) {
    if (!j.is_object()) throw ProtocolError("expected a JSON object");
    auto it = j.find(name);
    if (it == j.end()) throw ProtocolError("missing field '" + std::string(name) + "'");
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ProtocolError("field '" + std::string(name) + "' has the wrong type: " + e.what());
    }
}

template <class T>
T field_or(const json& j, std::string_view name, T fallback) {
    if (!j.is_object()) throw ProtocolError("expected a JSON object");
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception& e) {
        throw ProtocolError("field '" + std::string(name) + "' has the wrong type: " + e.what());
    }
}

inline json parse(std::string_view body) {
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw ProtocolError(std::string("invalid JSON: ") + e.what());
    }
}

}  // namespace wire

// TokenStat -----------------------------------------------------------------

inline void to_json(json& j, const TokenStat& s) {
    j = json{{"token_text", s.token_text}, {"logp", s.logp}, {"rank", s.rank},
             {"entropy", s.entropy},       {"mu", s.mu},     {"m2", s.m2}};
}

inline void from_json(const json& j, TokenStat& s) {
    s.token_text = wire::field<std::string>(j, "token_text");
    s.logp = wire::field<double>(j, "logp");
    s.rank = wire::field<int>(j, "rank");
    s.entropy = wire::field<double>(j, "entropy");
    s.mu = wire::field<double>(j, "mu");
    s.m2 = wire::field<double>(j, "m2");
}

// Backend descriptor (GET /v1/info) -----------------------------------------

inline void to_json(json& j, const BackendDescriptor& d) {
    json caps = json::array();
    for (auto c : d.capabilities) caps.push_back(std::string(to_string(c)));
    j = json{{"backend_id", d.backend_id}, {"endpoint", d.endpoint},
             {"model_id", d.model_id},     {"vocab_size", d.vocab_size},
             {"max_context", d.max_context}, {"capabilities", caps}};
}

inline void from_json(const json& j, BackendDescriptor& d) {
    d.backend_id = wire::field<std::string>(j, "backend_id");
    d.endpoint = wire::field_or<std::string>(j, "endpoint", "in-process");
    d.model_id = wire::field<std::string>(j, "model_id");
    d.vocab_size = wire::field<int>(j, "vocab_size");
    d.max_context = wire::field<int>(j, "max_context");
    d.capabilities.clear();
    for (const auto& c : wire::field<std::vector<std::string>>(j, "capabilities")) {
        auto cap = capability_from_string(c);
        if (!cap) throw ProtocolError("unknown capability '" + c + "'");
        d.capabilities.insert(*cap);
    }
    if (d.vocab_size < 2) throw ProtocolError("vocab_size must be >= 2");
}

// Requests and responses ----------------------------------------------------

inline void to_json(json& j, const CompleteRequest& r) {
    j = json{{"text", r.text},
             {"n_tokens", r.n_tokens},
             {"mode", r.mode == CompleteRequest::Mode::tokens ? "tokens" : "sentence"},
             {"temperature", r.temperature},
             {"top_k", r.top_k},
             {"seed", r.seed}};
}

inline void from_json(const json& j, CompleteRequest& r) {
    r.text = wire::field<std::string>(j, "text");
    r.n_tokens = wire::field<int>(j, "n_tokens");
    const auto mode = wire::field_or<std::string>(j, "mode", "tokens");
    if (mode == "tokens") r.mode = CompleteRequest::Mode::tokens;
    else if (mode == "sentence") r.mode = CompleteRequest::Mode::sentence;
    else throw ProtocolError("mode must be \"tokens\" or \"sentence\"");
    r.temperature = wire::field_or<double>(j, "temperature", 1.0);
    r.top_k = wire::field_or<int>(j, "top_k", 50);
    r.seed = wire::field_or<std::uint64_t>(j, "seed", 0);
}

inline void to_json(json& j, const CompleteResponse& r) {
    j = json{{"continuation_text", r.continuation_text},
             {"continuation_tokens", r.continuation_tokens}};
}

inline void from_json(const json& j, CompleteResponse& r) {
    r.continuation_text = wire::field<std::string>(j, "continuation_text");
    r.continuation_tokens = wire::field<std::vector<std::string>>(j, "continuation_tokens");
}

inline void to_json(json& j, const ScoreResponse& r) {
    j = json{{"tokenizer_id", r.tokenizer_id}, {"tokens", r.tokens}};
}

inline void from_json(const json& j, ScoreResponse& r) {
    r.tokenizer_id = wire::field<std::string>(j, "tokenizer_id");
    r.tokens = wire::field<std::vector<TokenStat>>(j, "tokens");
}

// ScoredText (cache files) --------------------------------------------------

inline void to_json(json& j, const ScoredText& s) {
    j = json{{"text", s.text},
             {"scorer_id", s.scorer_id},
             {"tokenizer_id", s.tokenizer_id},
             {"tokens", s.tokens},
             {"prompt_token_count", s.prompt_token_count}};
}

inline void from_json(const json& j, ScoredText& s) {
    s.text = wire::field<std::string>(j, "text");
    s.scorer_id = wire::field<std::string>(j, "scorer_id");
    s.tokenizer_id = wire::field_or<std::string>(j, "tokenizer_id", "");
    s.tokens = wire::field<std::vector<TokenStat>>(j, "tokens");
    s.prompt_token_count = wire::field_or<int>(j, "prompt_token_count", 0);
}

// Annotation records --------------------------------------------------------

inline void to_json(json& j, const AnnotationRecord& a) {
    j = json{{"instance_id", a.instance_id}, {"setting", a.setting},
             {"annotator", a.annotator},     {"coherence", a.coherence},
             {"fluency", a.fluency},         {"best", a.best_pick}};
}

}  // namespace toblend
