#pragma once

// The language-model backend interface and the capability-checked operations
// every caller goes through (complete, score, tokenize, chat).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toblend/core.hpp"

namespace toblend {

struct CompleteRequest {
    enum class Mode { tokens, sentence };

    std::string text;
    int n_tokens = 1;
    Mode mode = Mode::tokens;
    double temperature = 1.0;
    int top_k = 50;
    std::uint64_t seed = 0;

    bool operator==(const CompleteRequest&) const = default;
};

struct CompleteResponse {
    std::string continuation_text;
    // Decoded pieces; their concatenation is continuation_text.
    std::vector<std::string> continuation_tokens;

    bool operator==(const CompleteResponse&) const = default;
};

struct ScoreRequest {
    std::string text;
};

struct ScoreResponse {
    std::string tokenizer_id;
    std::vector<TokenStat> tokens;

    bool operator==(const ScoreResponse&) const = default;
};

inline bool contains_sentence_terminator(std::string_view s) {
    return s.find_first_of(".!?") != std::string_view::npos;
}

/// A language-model endpoint. Implementations must be safe for concurrent use.
/// Unsupported operations throw BackendError; callers normally use the free
/// functions below, which check capabilities and preconditions first.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendDescriptor describe() const = 0;

    virtual CompleteResponse complete(const CompleteRequest&) const {
        throw BackendError("complete not supported by " + describe().backend_id, false);
    }
    virtual ScoreResponse score(const ScoreRequest&) const {
        throw BackendError("score not supported by " + describe().backend_id, false);
    }
    virtual std::vector<std::string> tokenize(std::string_view) const {
        throw BackendError("tokenize not supported by " + describe().backend_id, false);
    }
    virtual std::string chat(std::string_view) const {
        throw BackendError("chat not supported by " + describe().backend_id, false);
    }
};

using BackendPtr = std::shared_ptr<const Backend>;

/// Builds the TokenStat for the token with id `actual` given the full
/// next-token distribution `probs` (indexed by token id). Ties in probability
/// rank by ascending token id.
inline TokenStat token_stat_from_distribution(std::span<const double> probs, std::size_t actual,
                                              std::string token_text) {
    if (actual >= probs.size()) throw PreconditionError("token id outside the distribution");
    TokenStat st;
    st.token_text = std::move(token_text);
    const double p_actual = probs[actual];
    st.logp = std::log(p_actual);
    int rank = 1;
    double mu = 0.0;
    double m2 = 0.0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
        const double p = probs[v];
        if (p > p_actual || (p == p_actual && v < actual)) ++rank;
        if (p > 0.0) {
            const double lp = std::log(p);
            mu += p * lp;
            m2 += p * lp * lp;
        }
    }
    st.rank = rank;
    st.mu = mu;
    st.entropy = -mu;
    st.m2 = m2;
    return st;
}

namespace detail {

inline void require_capability(const BackendDescriptor& d, Capability c) {
    if (!d.has(c)) {
        std::string msg = "backend '" + d.backend_id + "' lacks the '" + std::string(to_string(c)) +
                          "' capability";
        if (c == Capability::tokenize)
            msg += "; designate a reference backend that supports tokenize";
        throw PreconditionError(msg);
    }
}

}  // namespace detail

/// Continuation of req.text. In tokens mode at most n_tokens pieces come back.
inline CompleteResponse complete(const Backend& backend, const CompleteRequest& req) {
    const auto desc = backend.describe();
    detail::require_capability(desc, Capability::complete);
    if (req.n_tokens < 1) throw PreconditionError("complete: n_tokens must be >= 1");
    if (!(req.temperature >= 0.0)) throw PreconditionError("complete: temperature must be >= 0");
    if (req.top_k < 0) throw PreconditionError("complete: top_k must be >= 0");
    auto resp = backend.complete(req);
    if (req.mode == CompleteRequest::Mode::tokens &&
        resp.continuation_tokens.size() > static_cast<std::size_t>(req.n_tokens)) {
        throw ProtocolError("complete: backend '" + desc.backend_id + "' returned " +
                            std::to_string(resp.continuation_tokens.size()) +
                            " tokens for n_tokens=" + std::to_string(req.n_tokens));
    }
    return resp;
}

/// Scores `text` and wraps the response as a ScoredText keyed by model_id.
inline ScoredText score(const Backend& backend, const ScoreRequest& req) {
    const auto desc = backend.describe();
    detail::require_capability(desc, Capability::score);
    if (req.text.empty()) throw PreconditionError("score: text must be non-empty");
    auto resp = backend.score(req);
    ScoredText st;
    st.text = req.text;
    st.scorer_id = desc.model_id;
    st.tokenizer_id = std::move(resp.tokenizer_id);
    st.tokens = std::move(resp.tokens);
    return st;
}

inline std::vector<std::string> tokenize(const Backend& backend, std::string_view text) {
    detail::require_capability(backend.describe(), Capability::tokenize);
    if (text.empty()) return {};
    return backend.tokenize(text);
}

inline std::string chat(const Backend& backend, std::string_view prompt) {
    detail::require_capability(backend.describe(), Capability::chat);
    return backend.chat(prompt);
}

}  // namespace toblend
