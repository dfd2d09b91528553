#pragma once

// Exact add-k smoothed n-gram language model over whitespace tokens, and the
// in-process Backend that serves it.
//
// Token ids follow ascending byte-lexicographic order of the vocabulary. The
// vocabulary is the corpus tokens plus the begin pad "<s>" and end "</s>"
// symbols (plus "<unk>" for open-vocabulary models). Prediction backs off to
// the longest context suffix that was observed in training; a context with no
// observed suffix gets the uniform distribution.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "toblend/backend.hpp"
#include "toblend/core.hpp"
#include "toblend/rng.hpp"

namespace toblend {

inline std::vector<std::string> whitespace_tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const auto is_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string whitespace_detokenize(std::span<const std::string> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

class NgramModel {
public:
    static constexpr std::string_view pad_token = "<s>";
    static constexpr std::string_view end_token = "</s>";
    static constexpr std::string_view unk_token = "<unk>";

    struct Options {
        int order = 3;
        double add_k = 0.5;
        // Map unseen tokens to "<unk>" instead of rejecting them.
        bool open_vocab = false;
    };

    static NgramModel train(std::span<const std::string> corpus_lines, Options opts) {
        if (opts.order < 1) throw PreconditionError("ngram: order must be >= 1");
        if (!(opts.add_k > 0.0)) throw PreconditionError("ngram: add_k must be > 0");

        std::vector<std::vector<std::string>> lines;
        std::vector<std::string> words;
        for (const auto& line : corpus_lines) {
            auto toks = whitespace_tokenize(line);
            if (toks.empty()) continue;
            words.insert(words.end(), toks.begin(), toks.end());
            lines.push_back(std::move(toks));
        }
        if (lines.empty()) throw PreconditionError("ngram: corpus is empty");

        NgramModel m(opts, std::move(words));
        const int pad = *m.token_id(pad_token);
        const int end = *m.token_id(end_token);
        for (const auto& toks : lines) {
            std::vector<int> seq(static_cast<std::size_t>(opts.order - 1), pad);
            for (const auto& t : toks) seq.push_back(*m.token_id(t));
            seq.push_back(end);
            for (std::size_t t = static_cast<std::size_t>(opts.order - 1); t < seq.size(); ++t) {
                for (int len = 0; len < opts.order; ++len) {
                    std::vector<int> ctx(seq.begin() + static_cast<long>(t) - len,
                                         seq.begin() + static_cast<long>(t));
                    auto& c = m.counts_[ctx];
                    c.total += 1;
                    c.next[seq[t]] += 1;
                }
            }
        }
        return m;
    }

    static NgramModel train(std::span<const std::string> corpus_lines, int order, double add_k) {
        return train(corpus_lines, Options{order, add_k, false});
    }

    /// Order-1 model without counts: every token of `words` ∪ {pad, end} is
    /// equally likely in every context.
    static NgramModel uniform(std::vector<std::string> words, double add_k = 1.0) {
        if (words.empty()) throw PreconditionError("ngram: uniform model needs at least one word");
        return NgramModel(Options{1, add_k, false}, std::move(words));
    }

    int order() const noexcept { return opts_.order; }
    double add_k() const noexcept { return opts_.add_k; }
    bool open_vocab() const noexcept { return opts_.open_vocab; }
    const std::vector<std::string>& vocab() const noexcept { return vocab_; }
    std::size_t vocab_size() const noexcept { return vocab_.size(); }

    std::optional<int> token_id(std::string_view tok) const {
        auto it = std::lower_bound(vocab_.begin(), vocab_.end(), tok,
                                   [](const std::string& a, std::string_view b) { return a < b; });
        if (it == vocab_.end() || *it != tok) return std::nullopt;
        return static_cast<int>(it - vocab_.begin());
    }

    /// Id used for a token in a context: -1 marks a token the model cannot
    /// represent (it breaks every suffix that contains it).
    int context_id(std::string_view tok) const {
        if (auto id = token_id(tok)) return *id;
        if (opts_.open_vocab) return *token_id(unk_token);
        return -1;
    }

    bool is_special(int id) const {
        const auto& t = vocab_[static_cast<std::size_t>(id)];
        return t == pad_token || t == end_token || t == unk_token;
    }

    /// Full next-token distribution, indexed by token id.
    std::vector<double> next_dist(std::span<const int> context) const {
        const std::size_t v = vocab_.size();
        const Counts* c = find_counts(context);
        if (c == nullptr) return std::vector<double>(v, 1.0 / static_cast<double>(v));
        const double denom = static_cast<double>(c->total) + opts_.add_k * static_cast<double>(v);
        std::vector<double> p(v, opts_.add_k / denom);
        for (const auto& [id, n] : c->next)
            p[static_cast<std::size_t>(id)] = (static_cast<double>(n) + opts_.add_k) / denom;
        return p;
    }

    std::vector<double> next_dist(std::span<const std::string> context) const {
        return next_dist(context_ids(context));
    }

    std::vector<int> context_ids(std::span<const std::string> tokens) const {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(context_id(t));
        return ids;
    }

private:
    struct Counts {
        std::uint64_t total = 0;
        std::unordered_map<int, std::uint64_t> next;
    };

    struct VecHash {
        std::size_t operator()(const std::vector<int>& v) const noexcept {
            std::uint64_t h = 0x84222325cbf29ce4ULL;
            for (int x : v) h = splitmix64(h ^ static_cast<std::uint32_t>(x));
            return static_cast<std::size_t>(h);
        }
    };

    NgramModel(Options opts, std::vector<std::string> words) : opts_(opts) {
        words.emplace_back(pad_token);
        words.emplace_back(end_token);
        if (opts.open_vocab) words.emplace_back(unk_token);
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
        vocab_ = std::move(words);
    }

    const Counts* find_counts(std::span<const int> context) const {
        if (opts_.order == 1) {
            auto it = counts_.find(std::vector<int>{});
            return it == counts_.end() ? nullptr : &it->second;
        }
        if (context.empty()) {
            std::vector<int> pads(static_cast<std::size_t>(opts_.order - 1), *token_id(pad_token));
            auto it = counts_.find(pads);
            return it == counts_.end() ? nullptr : &it->second;
        }
        const std::size_t max_len = std::min<std::size_t>(context.size(), opts_.order - 1);
        for (std::size_t len = max_len; len >= 1; --len) {
            std::vector<int> key(context.end() - static_cast<long>(len), context.end());
            if (std::find(key.begin(), key.end(), -1) != key.end()) continue;
            auto it = counts_.find(key);
            if (it != counts_.end() && it->second.total > 0) return &it->second;
        }
        return nullptr;
    }

    Options opts_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::vector<int>, Counts, VecHash> counts_;
};

/// Samples one non-special token id from `probs`. temperature 0 is greedy
/// (ties to the lowest id); top_k > 0 keeps the k most likely candidates.
inline int sample_token(const NgramModel& model, std::span<const double> probs, double temperature,
                        int top_k, Rng& rng) {
    std::vector<int> cand;
    cand.reserve(probs.size());
    for (std::size_t v = 0; v < probs.size(); ++v)
        if (!model.is_special(static_cast<int>(v))) cand.push_back(static_cast<int>(v));
    if (cand.empty()) throw BackendError("ngram: no generatable tokens in vocabulary", false);

    const auto by_prob = [&](int a, int b) {
        return probs[a] > probs[b] || (probs[a] == probs[b] && a < b);
    };
    if (temperature == 0.0) return *std::min_element(cand.begin(), cand.end(), by_prob);

    if (top_k > 0 && static_cast<std::size_t>(top_k) < cand.size()) {
        std::partial_sort(cand.begin(), cand.begin() + top_k, cand.end(), by_prob);
        cand.resize(static_cast<std::size_t>(top_k));
        std::sort(cand.begin(), cand.end());
    }
    double max_lp = -INFINITY;
    for (int c : cand) max_lp = std::max(max_lp, std::log(probs[c]));
    std::vector<double> w(cand.size());
    double total = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        w[i] = std::exp((std::log(probs[cand[i]]) - max_lp) / temperature);
        total += w[i];
    }
    double u = uniform01(rng) * total;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (u < w[i]) return cand[i];
        u -= w[i];
    }
    return cand.back();
}

/// Resamples ceil(fraction * n) distinct whitespace-token positions of `text`
/// from `perturber`, left to right, each conditioned on its current left
/// context. All other tokens are unchanged; the output has n tokens.
inline std::string span_perturb(std::string_view text, double fraction, Rng& rng,
                                const NgramModel& perturber) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw PreconditionError("span_perturb: fraction must be in (0, 1]");
    auto toks = whitespace_tokenize(text);
    if (toks.size() < 2) throw PreconditionError("span_perturb: text needs at least 2 tokens");

    const std::size_t n = toks.size();
    const auto m = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12)));
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
        std::swap(pos[i], pos[j]);
    }
    pos.resize(m);
    std::sort(pos.begin(), pos.end());

    for (auto p : pos) {
        std::span<const std::string> left(toks.data(), p);
        const auto probs = perturber.next_dist(left);
        const int id = sample_token(perturber, probs, 1.0, 0, rng);
        toks[p] = perturber.vocab()[static_cast<std::size_t>(id)];
    }
    return whitespace_detokenize(toks);
}

/// In-process backend over an NgramModel. Supports complete, score, tokenize.
class NgramBackend final : public Backend {
public:
    NgramBackend(std::shared_ptr<const NgramModel> model, std::string backend_id,
                 std::string model_id = {}, int max_context = 2048)
        : model_(std::move(model)) {
        desc_.backend_id = std::move(backend_id);
        desc_.model_id = model_id.empty() ? desc_.backend_id : std::move(model_id);
        desc_.endpoint = "in-process";
        desc_.vocab_size = static_cast<int>(model_->vocab_size());
        desc_.max_context = max_context;
        desc_.capabilities = {Capability::complete, Capability::score, Capability::tokenize};
    }

    const NgramModel& model() const noexcept { return *model_; }

    BackendDescriptor describe() const override { return desc_; }

    CompleteResponse complete(const CompleteRequest& req) const override {
        auto ctx_tokens = whitespace_tokenize(req.text);
        if (ctx_tokens.size() + static_cast<std::size_t>(req.n_tokens) >
            static_cast<std::size_t>(desc_.max_context)) {
            throw ContextOverflowError("context overflow: max_context is " +
                                           std::to_string(desc_.max_context),
                                       desc_.max_context);
        }
        auto ctx = model_->context_ids(ctx_tokens);
        Rng rng(req.seed);
        CompleteResponse resp;
        bool need_space = !req.text.empty() && !std::isspace(static_cast<unsigned char>(req.text.back()));
        for (int i = 0; i < req.n_tokens; ++i) {
            const auto probs = model_->next_dist(ctx);
            const int id = sample_token(*model_, probs, req.temperature, req.top_k, rng);
            const auto& tok = model_->vocab()[static_cast<std::size_t>(id)];
            std::string piece = need_space ? " " + tok : tok;
            need_space = true;
            resp.continuation_text += piece;
            resp.continuation_tokens.push_back(std::move(piece));
            ctx.push_back(id);
            if (req.mode == CompleteRequest::Mode::sentence && contains_sentence_terminator(tok)) break;
        }
        return resp;
    }

    ScoreResponse score(const ScoreRequest& req) const override {
        const auto toks = whitespace_tokenize(req.text);
        if (toks.size() > static_cast<std::size_t>(desc_.max_context)) {
            throw ContextOverflowError("text has " + std::to_string(toks.size()) +
                                           " tokens; max_context is " +
                                           std::to_string(desc_.max_context),
                                       desc_.max_context);
        }
        const auto ids = model_->context_ids(toks);
        ScoreResponse resp;
        resp.tokenizer_id = "whitespace";
        for (std::size_t i = 1; i < toks.size(); ++i) {
            if (ids[i] < 0)
                throw BackendError("token '" + toks[i] + "' at position " + std::to_string(i + 1) +
                                       " is outside the closed vocabulary of " + desc_.model_id,
                                   false);
            const auto probs = model_->next_dist(std::span<const int>(ids.data(), i));
            resp.tokens.push_back(
                token_stat_from_distribution(probs, static_cast<std::size_t>(ids[i]), toks[i]));
        }
        return resp;
    }

    std::vector<std::string> tokenize(std::string_view text) const override {
        return whitespace_tokenize(text);
    }

private:
    std::shared_ptr<const NgramModel> model_;
    BackendDescriptor desc_;
};

}  // namespace toblend
