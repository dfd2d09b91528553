#pragma once

// Domain types shared by every toblend module. Plain values, no I/O.
//
// All log quantities are natural logs (nats).

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace toblend {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller violated an operation's precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Malformed or out-of-contract data on the wire or in a file.
class ProtocolError : public Error {
public:
    using Error::Error;
};

// A backend could not serve the request. `retryable` is true only for
// transport-level failures; `attempts` is how many tries were made.
class BackendError : public Error {
public:
    BackendError(const std::string& what, bool retryable, int attempts = 1)
        : Error(what), retryable_(retryable), attempts_(attempts) {}

    bool retryable() const noexcept { return retryable_; }
    int attempts() const noexcept { return attempts_; }

private:
    bool retryable_;
    int attempts_;
};

class ContextOverflowError : public BackendError {
public:
    ContextOverflowError(const std::string& what, int max_context)
        : BackendError(what, false), max_context_(max_context) {}

    int max_context() const noexcept { return max_context_; }

private:
    int max_context_;
};

// ---------------------------------------------------------------------------
// Scoring records
// ---------------------------------------------------------------------------

/// Per-position statistics of one token under a scoring model.
struct TokenStat {
    std::string token_text;
    double logp = 0.0;     // log p(x_i | x_<i)
    int rank = 1;          // 1-indexed rank of x_i, descending probability, ties by token id
    double entropy = 0.0;  // H(p(. | x_<i))
    double mu = 0.0;       // E_v[log p(v | x_<i)]  (= -entropy)
    double m2 = 0.0;       // E_v[(log p(v | x_<i))^2]

    bool operator==(const TokenStat&) const = default;
};

/// Returns an empty string when `s` satisfies the TokenStat invariants,
/// otherwise a description of the first violated one.
inline std::string check_token_stat(const TokenStat& s, int vocab_size, double tol = 1e-9) {
    if (!std::isfinite(s.logp) || s.logp > tol) return "logp must be finite and <= 0";
    if (s.rank < 1 || (vocab_size > 0 && s.rank > vocab_size)) return "rank out of [1, vocab_size]";
    if (!(s.entropy >= -tol)) return "entropy must be >= 0";
    if (std::abs(s.mu + s.entropy) > tol) return "mu must equal -entropy";
    if (s.m2 < s.mu * s.mu - tol) return "m2 must be >= mu^2";
    return {};
}

/// A text and its per-position statistics under one scorer. Position 1 of the
/// scorer's tokenization has no context and carries no TokenStat.
struct ScoredText {
    std::string text;
    std::string scorer_id;
    std::string tokenizer_id;
    std::vector<TokenStat> tokens;
    int prompt_token_count = 0;

    bool operator==(const ScoredText&) const = default;
};

// ---------------------------------------------------------------------------
// Generation configuration and traces
// ---------------------------------------------------------------------------

struct ChunkMode {
    enum class Kind { fixed, random, sentence };

    Kind kind = Kind::fixed;
    int k = 1;  // meaningful for Kind::fixed only

    static ChunkMode fixed(int k) {
        if (k < 1 || k > 5) throw PreconditionError("fixed chunk length must be in [1, 5]");
        return {Kind::fixed, k};
    }
    static ChunkMode random() { return {Kind::random, 0}; }
    static ChunkMode sentence() { return {Kind::sentence, 0}; }

    bool operator==(const ChunkMode&) const = default;
};

// Setting names used in generation output: tl1..tl5, rand, sent.
inline std::string setting_name(const ChunkMode& m) {
    switch (m.kind) {
    case ChunkMode::Kind::fixed: return "tl" + std::to_string(m.k);
    case ChunkMode::Kind::random: return "rand";
    case ChunkMode::Kind::sentence: return "sent";
    }
    return {};
}

inline std::optional<ChunkMode> chunk_mode_from_setting(std::string_view s) {
    if (s.size() == 3 && s.substr(0, 2) == "tl" && s[2] >= '1' && s[2] <= '5')
        return ChunkMode::fixed(s[2] - '0');
    if (s == "rand") return ChunkMode::random();
    if (s == "sent") return ChunkMode::sentence();
    return std::nullopt;
}

inline const std::vector<std::string>& blend_settings() {
    static const std::vector<std::string> names{"tl1", "tl2", "tl3", "tl4", "tl5", "rand", "sent"};
    return names;
}

struct CompletionRule {
    enum class Kind { token_count, period_or_cap };

    Kind kind = Kind::token_count;
    int min_period = 100;
    int hard_cap = 150;

    bool operator==(const CompletionRule&) const = default;
};

struct Sampling {
    double temperature = 1.0;  // 0 means greedy argmax
    int top_k = 50;            // 0 disables top-k truncation

    bool operator==(const Sampling&) const = default;
};

struct GenConfig {
    ChunkMode chunk_mode = ChunkMode::fixed(1);
    int buffer_tokens = 3;
    int max_content_tokens = 170;
    int prompt_tokens = 30;
    CompletionRule completion_rule{};
    std::uint64_t seed = 0;
    Sampling sampling{};
    int sentence_cap = 64;

    void validate() const {
        if (buffer_tokens < 0) throw PreconditionError("buffer_tokens must be >= 0");
        if (max_content_tokens <= 0) throw PreconditionError("max_content_tokens must be > 0");
        if (prompt_tokens < 0) throw PreconditionError("prompt_tokens must be >= 0");
        if (!(sampling.temperature >= 0.0)) throw PreconditionError("temperature must be >= 0");
        if (sampling.top_k < 0) throw PreconditionError("top_k must be >= 0");
        if (sentence_cap < 1) throw PreconditionError("sentence_cap must be >= 1");
    }
};

struct GenerationStep {
    std::string backend_id;
    int requested_k = 0;  // 0 in sentence mode
    std::string raw_chunk;
    std::string kept_chunk;
    int kept_token_count = 0;
    bool hit_sentence_cap = false;

    bool operator==(const GenerationStep&) const = default;
};

struct GenerationTrace {
    std::string prompt;
    std::vector<GenerationStep> steps;
    std::string final_text;
    int total_kept_tokens = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    std::vector<std::string> flags;

    bool operator==(const GenerationTrace&) const = default;
};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

enum class Capability { complete, score, tokenize, chat };

inline std::string_view to_string(Capability c) {
    switch (c) {
    case Capability::complete: return "complete";
    case Capability::score: return "score";
    case Capability::tokenize: return "tokenize";
    case Capability::chat: return "chat";
    }
    return "";
}

inline std::optional<Capability> capability_from_string(std::string_view s) {
    if (s == "complete") return Capability::complete;
    if (s == "score") return Capability::score;
    if (s == "tokenize") return Capability::tokenize;
    if (s == "chat") return Capability::chat;
    return std::nullopt;
}

struct BackendDescriptor {
    std::string backend_id;
    std::string endpoint = "in-process";
    std::string model_id;
    int vocab_size = 2;
    int max_context = 2048;
    std::set<Capability> capabilities;

    bool has(Capability c) const { return capabilities.count(c) != 0; }
    bool operator==(const BackendDescriptor&) const = default;
};

// ---------------------------------------------------------------------------
// Detection and evaluation records
// ---------------------------------------------------------------------------

enum class Metric {
    likelihood,
    rank,
    logrank,
    entropy,
    lrr,
    fast_curvature,
    detectgpt,
    npr,
    classifier,
    judge
};

inline std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::likelihood: return "likelihood";
    case Metric::rank: return "rank";
    case Metric::logrank: return "logrank";
    case Metric::entropy: return "entropy";
    case Metric::lrr: return "lrr";
    case Metric::fast_curvature: return "fast_curvature";
    case Metric::detectgpt: return "detectgpt";
    case Metric::npr: return "npr";
    case Metric::classifier: return "classifier";
    case Metric::judge: return "judge";
    }
    return "";
}

inline std::optional<Metric> metric_from_string(std::string_view s) {
    for (auto m : {Metric::likelihood, Metric::rank, Metric::logrank, Metric::entropy, Metric::lrr,
                   Metric::fast_curvature, Metric::detectgpt, Metric::npr, Metric::classifier,
                   Metric::judge}) {
        if (to_string(m) == s) return m;
    }
    return std::nullopt;
}

enum class Direction { higher_is_machine, as_reported };

inline std::string_view to_string(Direction d) {
    return d == Direction::higher_is_machine ? "higher_is_machine" : "as_reported";
}

struct DetectionScore {
    Metric metric = Metric::likelihood;
    double value = 0.0;
    Direction direction = Direction::higher_is_machine;
};

/// AUROC grid keyed by (dataset, metric, setting); baselines keyed by (dataset, metric).
struct AurocTable {
    using CellKey = std::tuple<std::string, std::string, std::string>;
    using BaselineKey = std::pair<std::string, std::string>;

    std::map<CellKey, double> cells;
    std::map<BaselineKey, double> baselines;

    bool operator==(const AurocTable&) const = default;
};

struct AnnotationRecord {
    std::string instance_id;
    std::string setting;
    std::string annotator;
    int coherence = 1;
    int fluency = 1;
    bool best_pick = false;

    bool operator==(const AnnotationRecord&) const = default;
};

}  // namespace toblend
