#pragma once

// Zero-shot detection statistics over ScoredText, perturbation-based scores,
// and adapters for external classifiers and chat judges.
//
// Sign conventions: every metric except entropy is oriented so that a higher
// value means "more machine-like". Entropy is reported raw.

#include <httplib.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toblend/backend.hpp"
#include "toblend/core.hpp"
#include "toblend/http_backend.hpp"
#include "toblend/ngram.hpp"
#include "toblend/rng.hpp"
#include "toblend/wire.hpp"

namespace toblend {

struct ScoringOptions {
    // When set, positions 1..prompt_token_count of the scorer's tokenization
    // (the prompt) are left out of every statistic.
    bool exclude_prompt = false;
    int prompt_token_count = 0;
    double epsilon = 1e-8;
};

/// The TokenStats a metric consumes under `opts`.
inline std::span<const TokenStat> scored_region(const ScoredText& st, const ScoringOptions& opts) {
    if (!(opts.epsilon > 0.0)) throw PreconditionError("epsilon must be > 0");
    std::size_t skip = 0;
    // TokenStat j describes position j + 2, so positions <= p are the first p - 1 stats.
    if (opts.exclude_prompt && opts.prompt_token_count > 1)
        skip = std::min(st.tokens.size(), static_cast<std::size_t>(opts.prompt_token_count - 1));
    std::span<const TokenStat> all(st.tokens);
    auto region = all.subspan(skip);
    if (region.empty()) throw PreconditionError("scored region is empty");
    return region;
}

namespace detail {

template <class F>
double mean_of(std::span<const TokenStat> r, F f) {
    double s = 0.0;
    for (const auto& t : r) s += f(t);
    return s / static_cast<double>(r.size());
}

inline double sum_logp(std::span<const TokenStat> r) {
    double s = 0.0;
    for (const auto& t : r) s += t.logp;
    return s;
}

inline double sum_log_rank(std::span<const TokenStat> r) {
    double s = 0.0;
    for (const auto& t : r) s += std::log(static_cast<double>(t.rank));
    return s;
}

// (num / den) with the zero rule: 0 when both are below epsilon.
inline double z_ratio(double num, double den, double eps) {
    if (den < eps && std::abs(num) < eps) return 0.0;
    return num / std::max(den, eps);
}

}  // namespace detail

inline DetectionScore likelihood(const ScoredText& st, const ScoringOptions& opts = {}) {
    const auto r = scored_region(st, opts);
    return {Metric::likelihood, detail::mean_of(r, [](const TokenStat& t) { return t.logp; }),
            Direction::higher_is_machine};
}

inline DetectionScore mean_rank(const ScoredText& st, const ScoringOptions& opts = {}) {
    const auto r = scored_region(st, opts);
    return {Metric::rank,
            -detail::mean_of(r, [](const TokenStat& t) { return static_cast<double>(t.rank); }),
            Direction::higher_is_machine};
}

inline DetectionScore log_rank(const ScoredText& st, const ScoringOptions& opts = {}) {
    const auto r = scored_region(st, opts);
    return {Metric::logrank,
            -detail::mean_of(r, [](const TokenStat& t) { return std::log(static_cast<double>(t.rank)); }),
            Direction::higher_is_machine};
}

inline DetectionScore entropy_score(const ScoredText& st, const ScoringOptions& opts = {}) {
    const auto r = scored_region(st, opts);
    return {Metric::entropy, detail::mean_of(r, [](const TokenStat& t) { return t.entropy; }),
            Direction::as_reported};
}

/// Log-likelihood / log-rank ratio: (-sum logp) / max(sum ln rank, eps).
inline DetectionScore lrr(const ScoredText& st, const ScoringOptions& opts = {}) {
    const auto r = scored_region(st, opts);
    const double value = -detail::sum_logp(r) / std::max(detail::sum_log_rank(r), opts.epsilon);
    return {Metric::lrr, value, Direction::higher_is_machine};
}

/// Analytic conditional probability curvature: (L - mu) / sigma with
/// L = sum logp, mu = sum mu_i, sigma^2 = sum (m2_i - mu_i^2).
inline DetectionScore fast_curvature(const ScoredText& st, const ScoringOptions& opts = {}) {
    const auto r = scored_region(st, opts);
    double L = 0.0, mu = 0.0, var = 0.0;
    for (const auto& t : r) {
        L += t.logp;
        mu += t.mu;
        var += std::max(0.0, t.m2 - t.mu * t.mu);
    }
    return {Metric::fast_curvature, detail::z_ratio(L - mu, std::sqrt(var), opts.epsilon),
            Direction::higher_is_machine};
}

// ---------------------------------------------------------------------------
// Perturbation-based scores
// ---------------------------------------------------------------------------

/// Maps a text to its score under some scorer (a backend, possibly cached).
using ScoreFn = std::function<ScoredText(const std::string&)>;

/// Returns the variant of `text` for a given seed.
using Perturber = std::function<std::string(const std::string& text, std::uint64_t seed)>;

inline ScoreFn scorer_fn(BackendPtr backend) {
    return [backend = std::move(backend)](const std::string& text) {
        return toblend::score(*backend, ScoreRequest{text});
    };
}

/// Built-in perturber: span_perturb with an n-gram model.
inline Perturber span_perturber(std::shared_ptr<const NgramModel> model, double fraction = 0.15) {
    return [model = std::move(model), fraction](const std::string& text, std::uint64_t seed) {
        Rng rng(seed);
        return span_perturb(text, fraction, rng, *model);
    };
}

struct PerturbationOptions {
    int m = 20;
    std::uint64_t seed = 0;
    bool concurrent = true;
};

namespace detail {

// Scores the m perturbations of `text` in index order.
inline std::vector<ScoredText> score_perturbations(const std::string& text, const ScoreFn& scorer,
                                                   const Perturber& perturber,
                                                   const PerturbationOptions& popts) {
    if (popts.m < 2) throw PreconditionError("perturbation count m must be >= 2");
    auto one = [&](int j) {
        std::string variant;
        try {
            variant = perturber(text, splitmix64(popts.seed ^ splitmix64(static_cast<std::uint64_t>(j) + 1)));
        } catch (const std::exception& e) {
            throw Error("perturber failed on variant " + std::to_string(j) + ": " + e.what());
        }
        return scorer(variant);
    };
    std::vector<ScoredText> out;
    out.reserve(static_cast<std::size_t>(popts.m));
    if (popts.concurrent) {
        std::vector<std::future<ScoredText>> futs;
        for (int j = 0; j < popts.m; ++j) futs.push_back(std::async(std::launch::async, one, j));
        for (auto& f : futs) out.push_back(f.get());
    } else {
        for (int j = 0; j < popts.m; ++j) out.push_back(one(j));
    }
    return out;
}

}  // namespace detail

/// (L(x) - mean_j L(x_j)) / std_j L(x_j) over m perturbations, L = sum logp.
/// The spread is the population standard deviation.
inline DetectionScore detectgpt_score(const std::string& text, const ScoreFn& scorer,
                                      const Perturber& perturber, const PerturbationOptions& popts = {},
                                      const ScoringOptions& opts = {}) {
    const auto original = scorer(text);
    const double L = detail::sum_logp(scored_region(original, opts));
    const auto variants = detail::score_perturbations(text, scorer, perturber, popts);
    std::vector<double> ls;
    for (const auto& v : variants) ls.push_back(detail::sum_logp(scored_region(v, opts)));
    const double mean = std::accumulate(ls.begin(), ls.end(), 0.0) / static_cast<double>(ls.size());
    double var = 0.0;
    for (double l : ls) var += (l - mean) * (l - mean);
    var /= static_cast<double>(ls.size());
    return {Metric::detectgpt, detail::z_ratio(L - mean, std::sqrt(var), opts.epsilon),
            Direction::higher_is_machine};
}

/// mean_j(sum ln rank(x_j)) / max(sum ln rank(x), eps).
inline DetectionScore npr_score(const std::string& text, const ScoreFn& scorer,
                                const Perturber& perturber, const PerturbationOptions& popts = {},
                                const ScoringOptions& opts = {}) {
    const auto original = scorer(text);
    const double base = detail::sum_log_rank(scored_region(original, opts));
    const auto variants = detail::score_perturbations(text, scorer, perturber, popts);
    double total = 0.0;
    for (const auto& v : variants) total += detail::sum_log_rank(scored_region(v, opts));
    const double mean = total / static_cast<double>(variants.size());
    return {Metric::npr, mean / std::max(base, opts.epsilon), Direction::higher_is_machine};
}

// ---------------------------------------------------------------------------
// External classifiers and chat judges
// ---------------------------------------------------------------------------

/// POST {endpoint}/v1/classify {text} -> {p_machine}.
inline DetectionScore classifier_score(const std::string& text, const std::string& classifier_endpoint,
                                       HttpOptions http = {}) {
    HttpJsonClient client(classifier_endpoint, std::move(http));
    const auto j = client.post("/v1/classify", json{{"text", text}});
    const double p = wire::field<double>(j, "p_machine");
    if (!(p >= 0.0 && p <= 1.0))
        throw ProtocolError("classifier returned p_machine outside [0, 1]: " + std::to_string(p));
    return {Metric::classifier, p, Direction::higher_is_machine};
}

enum class JudgeLabel { yes, no, uncertain };

inline std::string_view to_string(JudgeLabel l) {
    switch (l) {
    case JudgeLabel::yes: return "Yes";
    case JudgeLabel::no: return "No";
    case JudgeLabel::uncertain: return "Uncertain";
    }
    return "";
}

struct JudgeVerdict {
    JudgeLabel label = JudgeLabel::uncertain;
    std::string rationale;
};

inline std::string judge_prompt(std::string_view text) {
    std::string p =
        "Please answer whether the given short text is generated by Artificial Intelligence models "
        "but not written from real human.\n\nThe short text is: ";
    p += text;
    p += "\n\nPlease answer by Yes, No or Uncertain. And then explain why in shortly in one or two "
         "sentences.";
    return p;
}

/// First word of the reply that is yes/no/uncertain (any case) decides the label.
inline JudgeLabel parse_judge_label(std::string_view reply) {
    std::size_t i = 0;
    while (i < reply.size()) {
        while (i < reply.size() && !std::isalpha(static_cast<unsigned char>(reply[i]))) ++i;
        std::size_t j = i;
        while (j < reply.size() && std::isalpha(static_cast<unsigned char>(reply[j]))) ++j;
        std::string word;
        for (std::size_t c = i; c < j; ++c)
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(reply[c]))));
        if (word == "yes") return JudgeLabel::yes;
        if (word == "no") return JudgeLabel::no;
        if (word == "uncertain") return JudgeLabel::uncertain;
        i = j;
    }
    return JudgeLabel::uncertain;
}

inline JudgeVerdict judge_classify(const std::string& text, const Backend& chat_backend) {
    const auto reply = toblend::chat(chat_backend, judge_prompt(text));
    return {parse_judge_label(reply), reply};
}

}  // namespace toblend
