#pragma once

// Token-level ensemble generation: each chunk of the continuation comes from a
// pool member chosen uniformly at random, and the chunk is appended as decoded
// text so that members never need a shared vocabulary.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toblend/backend.hpp"
#include "toblend/core.hpp"
#include "toblend/rng.hpp"

namespace toblend {

class Pool {
public:
    struct Member {
        BackendPtr backend;
        std::optional<Sampling> sampling;  // overrides GenConfig::sampling for this member
    };

    Pool() = default;

    explicit Pool(std::vector<Member> members) : members_(std::move(members)) {
        if (members_.empty()) throw PreconditionError("pool must not be empty");
        std::set<std::string> seen;
        for (const auto& m : members_) {
            if (!m.backend) throw PreconditionError("pool member has no backend");
            auto id = m.backend->describe().backend_id;
            if (!seen.insert(id).second) throw PreconditionError("duplicate backend_id in pool: " + id);
            ids_.push_back(std::move(id));
        }
    }

    explicit Pool(const std::vector<BackendPtr>& backends) : Pool(to_members(backends)) {}

    std::size_t size() const noexcept { return members_.size(); }
    const Member& operator[](std::size_t i) const { return members_.at(i); }
    const std::string& id(std::size_t i) const { return ids_.at(i); }
    const std::vector<std::string>& ids() const noexcept { return ids_; }

private:
    static std::vector<Member> to_members(const std::vector<BackendPtr>& backends) {
        std::vector<Member> out;
        for (const auto& b : backends) out.push_back({b, std::nullopt});
        return out;
    }

    std::vector<Member> members_;
    std::vector<std::string> ids_;
};

struct StepDraw {
    int k = 0;  // 0 is the sentence-mode sentinel
    std::size_t backend_index = 0;
};

/// Draws the chunk length, then the backend index. Random mode consumes two
/// engine outputs, fixed and sentence modes one.
inline StepDraw draw_step(Rng& rng, const GenConfig& cfg, std::size_t pool_size) {
    if (pool_size == 0) throw PreconditionError("draw_step: empty pool");
    StepDraw d;
    switch (cfg.chunk_mode.kind) {
    case ChunkMode::Kind::fixed: d.k = cfg.chunk_mode.k; break;
    case ChunkMode::Kind::random: d.k = 1 + static_cast<int>(uniform_index(rng, 5)); break;
    case ChunkMode::Kind::sentence: d.k = 0; break;
    }
    d.backend_index = static_cast<std::size_t>(uniform_index(rng, pool_size));
    return d;
}

inline StepDraw draw_step(Rng& rng, const GenConfig& cfg, const Pool& pool) {
    return draw_step(rng, cfg, pool.size());
}

struct KeptChunk {
    std::string text;
    int token_count = 0;
};

/// Keeps the first min(k, n) decoded pieces; the rest are buffer and dropped.
inline KeptChunk truncate_chunk(std::span<const std::string> continuation_tokens, int k) {
    if (continuation_tokens.empty()) throw PreconditionError("truncate_chunk: empty continuation");
    if (k < 1) throw PreconditionError("truncate_chunk: k must be >= 1");
    KeptChunk out;
    const auto n = std::min(continuation_tokens.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) out.text += continuation_tokens[i];
    out.token_count = static_cast<int>(n);
    return out;
}

struct SentenceChunk {
    std::string raw;
    std::string text;
    int token_count = 0;
    bool hit_cap = false;
};

/// Asks `backend` for one sentence: tokens up to and including the first piece
/// containing '.', '!' or '?', or `cap` tokens if no terminator appears.
inline SentenceChunk sentence_complete(const Backend& backend, const std::string& running_text,
                                       int cap, const Sampling& sampling, std::uint64_t seed) {
    CompleteRequest req{running_text, cap, CompleteRequest::Mode::sentence, sampling.temperature,
                        sampling.top_k, seed};
    const auto resp = toblend::complete(backend, req);
    SentenceChunk out;
    out.raw = resp.continuation_text;
    const auto n = std::min(resp.continuation_tokens.size(), static_cast<std::size_t>(cap));
    bool terminated = false;
    for (std::size_t i = 0; i < n; ++i) {
        out.text += resp.continuation_tokens[i];
        ++out.token_count;
        if (contains_sentence_terminator(resp.continuation_tokens[i])) {
            terminated = true;
            break;
        }
    }
    out.hit_cap = !terminated;
    return out;
}

inline char last_non_whitespace(std::string_view s) {
    for (auto it = s.rbegin(); it != s.rend(); ++it)
        if (!std::isspace(static_cast<unsigned char>(*it))) return *it;
    return '\0';
}

inline bool is_complete(int total_kept_tokens, char final_char, const GenConfig& cfg) {
    const auto& rule = cfg.completion_rule;
    if (rule.kind == CompletionRule::Kind::token_count)
        return total_kept_tokens > cfg.max_content_tokens;
    return (total_kept_tokens >= rule.min_period && final_char == '.') ||
           total_kept_tokens >= rule.hard_cap;
}

/// Runs the blending loop for one (instance, setting). The per-instance random
/// stream is seeded from (cfg.seed, instance_id, setting name), so results do
/// not depend on how many instances run concurrently. A backend failure ends
/// the instance with the partial trace marked failed.
inline GenerationTrace blend_generate(const std::string& prompt, const Pool& pool,
                                      const GenConfig& cfg, const std::string& instance_id) {
    if (prompt.empty()) throw PreconditionError("blend_generate: prompt must be non-empty");
    if (pool.size() == 0) throw PreconditionError("blend_generate: pool must be non-empty");
    cfg.validate();

    GenerationTrace trace;
    trace.prompt = prompt;
    trace.final_text = prompt;
    trace.seed = cfg.seed;

    const auto stream_seed = substream_seed(cfg.seed, instance_id, setting_name(cfg.chunk_mode));
    Rng rng(stream_seed);
    const bool sentence_mode = cfg.chunk_mode.kind == ChunkMode::Kind::sentence;

    for (std::uint64_t step = 0;
         !is_complete(trace.total_kept_tokens, last_non_whitespace(trace.final_text), cfg); ++step) {
        const auto draw = draw_step(rng, cfg, pool);
        const auto& member = pool[draw.backend_index];
        const auto& sampling = member.sampling.value_or(cfg.sampling);
        const auto request_seed = splitmix64(stream_seed ^ splitmix64(step + 1));

        GenerationStep s;
        s.backend_id = pool.id(draw.backend_index);
        s.requested_k = draw.k;
        try {
            for (int attempt = 0;; ++attempt) {
                if (sentence_mode) {
                    auto chunk = sentence_complete(*member.backend, trace.final_text, cfg.sentence_cap,
                                                   sampling, request_seed);
                    s.raw_chunk = std::move(chunk.raw);
                    s.kept_chunk = std::move(chunk.text);
                    s.kept_token_count = chunk.token_count;
                    s.hit_sentence_cap = chunk.hit_cap;
                } else {
                    CompleteRequest req{trace.final_text, draw.k + cfg.buffer_tokens,
                                        CompleteRequest::Mode::tokens, sampling.temperature,
                                        sampling.top_k, request_seed};
                    const auto resp = toblend::complete(*member.backend, req);
                    s.raw_chunk = resp.continuation_text;
                    if (!resp.continuation_tokens.empty()) {
                        auto kept = truncate_chunk(resp.continuation_tokens, draw.k);
                        s.kept_chunk = std::move(kept.text);
                        s.kept_token_count = kept.token_count;
                    }
                }
                if (s.kept_token_count > 0) break;
                if (attempt >= 1)
                    throw BackendError("backend '" + s.backend_id + "' returned an empty continuation",
                                       false, attempt + 1);
            }
        } catch (const Error& e) {
            trace.failed = true;
            trace.error = e.what();
            trace.flags.push_back("failed");
            return trace;
        }

        trace.final_text += s.kept_chunk;
        trace.total_kept_tokens += s.kept_token_count;
        if (s.hit_sentence_cap &&
            std::find(trace.flags.begin(), trace.flags.end(), "sentence_cap") == trace.flags.end())
            trace.flags.push_back("sentence_cap");
        trace.steps.push_back(std::move(s));
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Artifact filter
// ---------------------------------------------------------------------------

struct ArtifactRules {
    int max_char_run = 5;  // this many identical single-character tokens in a row is a violation
    double max_symbol_density = 0.20;
    int window_chars = 40;
    std::vector<std::string> blocklist{"<|endoftext|>", "< |endoftext| >", "</s>", "< /s >", "<s>"};
};

namespace detail {

// Decodes UTF-8 leniently; each invalid byte becomes U+FFFD.
inline std::vector<char32_t> decode_utf8(std::string_view s) {
    std::vector<char32_t> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 0;
        if (len == 0 || i + static_cast<std::size_t>(len) > s.size()) {
            out.push_back(0xfffd);
            ++i;
            continue;
        }
        char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1f) : len == 3 ? (c & 0x0f) : (c & 0x07);
        bool ok = true;
        for (int j = 1; j < len; ++j) {
            const auto cc = static_cast<unsigned char>(s[i + static_cast<std::size_t>(j)]);
            if ((cc >> 6) != 0x2) ok = false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        if (!ok) {
            out.push_back(0xfffd);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += static_cast<std::size_t>(len);
    }
    return out;
}

inline bool is_symbol(char32_t cp) {
    if (cp < 0x80) {
        const auto c = static_cast<char>(cp);
        if (std::isalnum(static_cast<unsigned char>(c)) || std::isspace(static_cast<unsigned char>(c)))
            return false;
        static constexpr std::string_view plain = ".,;:!?'\"()-";
        return plain.find(c) == std::string_view::npos;
    }
    if (cp <= 0xbf || cp == 0xd7 || cp == 0xf7 || cp == 0xfffd) return true;
    if (cp >= 0x2000 && cp <= 0x2bff) {
        const bool quote_or_dash = (cp >= 0x2013 && cp <= 0x2014) || (cp >= 0x2018 && cp <= 0x201d);
        return !quote_or_dash;
    }
    return false;
}

}  // namespace detail

/// Describes every artifact rule that `text` violates; empty when clean.
inline std::vector<std::string> find_artifacts(std::string_view text, const ArtifactRules& rules) {
    std::vector<std::string> found;

    for (const auto& marker : rules.blocklist) {
        if (!marker.empty() && text.find(marker) != std::string_view::npos)
            found.push_back("blocklisted marker " + marker);
    }

    const auto toks = [&] {
        std::vector<std::string> t;
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) t.emplace_back(text.substr(i, j - i));
            i = j;
        }
        return t;
    }();
    int run = 0;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        const bool single = detail::decode_utf8(toks[i]).size() == 1;
        run = single ? ((i > 0 && toks[i] == toks[i - 1] && run > 0) ? run + 1 : 1) : 0;
        if (run >= rules.max_char_run) {
            found.push_back("run of " + std::to_string(run) + " repeated '" + toks[i] + "' tokens");
            break;
        }
    }

    const auto cps = detail::decode_utf8(text);
    if (!cps.empty()) {
        const std::size_t w = std::min(cps.size(), static_cast<std::size_t>(std::max(1, rules.window_chars)));
        std::size_t symbols = 0;
        for (std::size_t i = 0; i < w; ++i) symbols += detail::is_symbol(cps[i]);
        for (std::size_t start = 0;; ++start) {
            if (static_cast<double>(symbols) / static_cast<double>(w) > rules.max_symbol_density) {
                found.push_back("symbol density above " + std::to_string(rules.max_symbol_density) +
                                " near character " + std::to_string(start));
                break;
            }
            if (start + w >= cps.size()) break;
            symbols -= detail::is_symbol(cps[start]);
            symbols += detail::is_symbol(cps[start + w]);
        }
    }
    return found;
}

/// Regenerates with seed+1, seed+2, ... while the final text violates a rule,
/// up to max_retries times. Returns the first clean trace, or the last one
/// flagged "dirty".
inline GenerationTrace filter_regenerate(GenerationTrace trace, const ArtifactRules& rules,
                                         const std::function<GenerationTrace(std::uint64_t seed)>& regenerate,
                                         int max_retries = 3) {
    if (find_artifacts(trace.final_text, rules).empty()) return trace;
    const auto base_seed = trace.seed;
    for (int retry = 1; retry <= max_retries; ++retry) {
        trace = regenerate(base_seed + static_cast<std::uint64_t>(retry));
        if (find_artifacts(trace.final_text, rules).empty()) {
            trace.flags.push_back("regenerated");
            return trace;
        }
    }
    trace.flags.push_back("dirty");
    return trace;
}

}  // namespace toblend
