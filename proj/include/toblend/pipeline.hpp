#pragma once

// Batch pipeline behind the command-line tool: run configuration, backend
// construction, resumable generation, scoring, table building and export.
//
// Exit statuses: 0 success, 2 partial (some records skipped), 1 hard failure.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "toblend/blend.hpp"
#include "toblend/data.hpp"
#include "toblend/detect.hpp"
#include "toblend/eval.hpp"
#include "toblend/http_backend.hpp"
#include "toblend/ngram.hpp"
#include "toblend/records.hpp"
#include "toblend/score_cache.hpp"
#include "toblend/sha256.hpp"
#include "toblend/wire.hpp"

namespace toblend {

enum ExitStatus : int { exit_ok = 0, exit_failure = 1, exit_partial = 2 };

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// One backend entry of a run configuration. `endpoint` is either an
/// http(s) URL speaking the wire protocol or "ngram:<corpus path>", which
/// trains an in-process n-gram model on the corpus.
struct BackendSpec {
    std::string backend_id;
    std::string endpoint;
    std::string model_id;
    std::optional<Sampling> sampling;
    int order = 3;
    double add_k = 0.5;
    bool open_vocab = true;
};

struct PerturberSpec {
    std::string corpus;
    int order = 3;
    double add_k = 0.5;
    double fraction = 0.15;
    int m = 20;
};

struct RunConfig {
    std::map<std::string, std::vector<BackendSpec>> pools;
    std::optional<BackendSpec> scorer;
    std::optional<PerturberSpec> perturber;
    std::string reference_backend;  // backend_id of a pool member used for prompt tokenization
    GenConfig generation;
    std::map<std::string, std::string> datasets;
    std::string output_dir = ".";
    std::string cache_dir;
    int parallelism = 4;
    int max_in_flight = 4;
    std::string config_sha256;
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ProtocolError(where + ": expected an object");
    for (const auto& [k, _] : j.items())
        if (!allowed.count(k)) throw ProtocolError(where + ": unknown key '" + k + "'");
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

inline void require_exists(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path)) throw PreconditionError(what + " does not exist: " + path);
}

inline BackendSpec parse_backend_spec(const json& j, const std::filesystem::path& base, const std::string& where) {
    reject_unknown_keys(j, {"backend_id", "endpoint", "model_id", "temperature", "top_k", "order", "add_k", "open_vocab"},
                        where);
    BackendSpec s;
    s.backend_id = wire::field<std::string>(j, "backend_id");
    s.endpoint = wire::field<std::string>(j, "endpoint");
    s.model_id = wire::field_or<std::string>(j, "model_id", s.backend_id);
    if (j.contains("temperature") || j.contains("top_k")) {
        Sampling smp;
        smp.temperature = wire::field_or<double>(j, "temperature", smp.temperature);
        smp.top_k = wire::field_or<int>(j, "top_k", smp.top_k);
        s.sampling = smp;
    }
    s.order = wire::field_or<int>(j, "order", s.order);
    s.add_k = wire::field_or<double>(j, "add_k", s.add_k);
    s.open_vocab = wire::field_or<bool>(j, "open_vocab", s.open_vocab);
    if (s.endpoint.rfind("ngram:", 0) == 0) {
        s.endpoint = "ngram:" + resolve(base, s.endpoint.substr(6));
        require_exists(s.endpoint.substr(6), where + " corpus");
    }
    return s;
}

}  // namespace detail

inline CompletionRule completion_rule_from_string(const std::string& s) {
    if (s == "tokens") return {};
    if (s == "period-cap") return {CompletionRule::Kind::period_or_cap, 100, 150};
    throw PreconditionError("completion rule must be 'tokens' or 'period-cap', got '" + s + "'");
}

/// Parses a run configuration. Relative paths are resolved against
/// `base_dir`; unknown keys and missing referenced files are errors.
inline RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
    using detail::reject_unknown_keys;
    reject_unknown_keys(j, {"pools", "scorer", "perturber", "reference_backend", "generation", "datasets", "output_dir",
                            "cache_dir", "parallelism", "max_in_flight", "seed"},
                        "config");
    RunConfig cfg;
    const auto pools = wire::field_or<json>(j, "pools", json::object());
    for (const auto& [name, members] : pools.items()) {
        if (!members.is_array() || members.empty()) throw ProtocolError("config: pool '" + name + "' must be a non-empty list");
        for (std::size_t i = 0; i < members.size(); ++i)
            cfg.pools[name].push_back(detail::parse_backend_spec(
                members[i], base_dir, "config.pools." + name + "[" + std::to_string(i) + "]"));
    }
    if (j.contains("scorer")) cfg.scorer = detail::parse_backend_spec(j["scorer"], base_dir, "config.scorer");
    if (j.contains("perturber")) {
        const auto& p = j["perturber"];
        reject_unknown_keys(p, {"corpus", "order", "add_k", "fraction", "m"}, "config.perturber");
        PerturberSpec ps;
        ps.corpus = detail::resolve(base_dir, wire::field<std::string>(p, "corpus"));
        detail::require_exists(ps.corpus, "config.perturber corpus");
        ps.order = wire::field_or<int>(p, "order", ps.order);
        ps.add_k = wire::field_or<double>(p, "add_k", ps.add_k);
        ps.fraction = wire::field_or<double>(p, "fraction", ps.fraction);
        ps.m = wire::field_or<int>(p, "m", ps.m);
        cfg.perturber = ps;
    }
    cfg.reference_backend = wire::field_or<std::string>(j, "reference_backend", "");
    if (j.contains("generation")) {
        const auto& g = j["generation"];
        reject_unknown_keys(g, {"buffer_tokens", "max_content_tokens", "prompt_tokens", "completion_rule",
                                "temperature", "top_k", "sentence_cap"},
                            "config.generation");
        auto& gc = cfg.generation;
        gc.buffer_tokens = wire::field_or<int>(g, "buffer_tokens", gc.buffer_tokens);
        gc.max_content_tokens = wire::field_or<int>(g, "max_content_tokens", gc.max_content_tokens);
        gc.prompt_tokens = wire::field_or<int>(g, "prompt_tokens", gc.prompt_tokens);
        gc.completion_rule = completion_rule_from_string(wire::field_or<std::string>(g, "completion_rule", "tokens"));
        gc.sampling.temperature = wire::field_or<double>(g, "temperature", gc.sampling.temperature);
        gc.sampling.top_k = wire::field_or<int>(g, "top_k", gc.sampling.top_k);
        gc.sentence_cap = wire::field_or<int>(g, "sentence_cap", gc.sentence_cap);
        gc.validate();
    }
    cfg.generation.seed = wire::field_or<std::uint64_t>(j, "seed", 0);
    const auto datasets = wire::field_or<json>(j, "datasets", json::object());
    for (const auto& [name, path] : datasets.items()) {
        cfg.datasets[name] = detail::resolve(base_dir, path.get<std::string>());
        detail::require_exists(cfg.datasets[name], "config.datasets." + name);
    }
    cfg.output_dir = detail::resolve(base_dir, wire::field_or<std::string>(j, "output_dir", "."));
    cfg.cache_dir = detail::resolve(base_dir, wire::field_or<std::string>(j, "cache_dir", ""));
    cfg.parallelism = wire::field_or<int>(j, "parallelism", cfg.parallelism);
    cfg.max_in_flight = wire::field_or<int>(j, "max_in_flight", cfg.max_in_flight);
    if (cfg.parallelism < 1) throw PreconditionError("config: parallelism must be >= 1");
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open config " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto cfg = parse_run_config(wire::parse(text), path.parent_path());
    cfg.config_sha256 = sha256_hex(text);
    return cfg;
}

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

/// Corpus lines from a plain-text file, or the "text" fields of a JSONL file.
inline std::vector<std::string> read_corpus_lines(const std::filesystem::path& path) {
    std::vector<std::string> lines;
    if (path.extension() == ".jsonl") {
        for (const auto& j : read_jsonl(path)) lines.push_back(wire::field<std::string>(j, "text"));
        return lines;
    }
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

inline BackendPtr make_backend(const BackendSpec& spec, const HttpOptions& http = {}) {
    if (spec.endpoint.rfind("ngram:", 0) == 0) {
        const auto lines = read_corpus_lines(spec.endpoint.substr(6));
        auto model = std::make_shared<const NgramModel>(
            NgramModel::train(lines, NgramModel::Options{spec.order, spec.add_k, spec.open_vocab}));
        return std::make_shared<NgramBackend>(std::move(model), spec.backend_id, spec.model_id);
    }
    auto b = std::make_shared<HttpBackend>(spec.endpoint, http);
    b->with_backend_id(spec.backend_id);
    return b;
}

/// Builds the pool and checks every member answers GET /v1/info; throws one
/// error naming every unreachable member.
inline Pool make_pool(const std::vector<BackendSpec>& specs, const HttpOptions& http = {}) {
    std::vector<Pool::Member> members;
    std::string unreachable;
    for (const auto& s : specs) {
        auto b = make_backend(s, http);
        try {
            (void)b->describe();
        } catch (const std::exception& e) {
            unreachable += "\n  " + s.backend_id + " (" + s.endpoint + "): " + e.what();
        }
        members.push_back({b, s.sampling});
    }
    if (!unreachable.empty()) throw Error("unreachable backends:" + unreachable);
    return Pool(std::move(members));
}

// ---------------------------------------------------------------------------
// Ordered parallel execution
// ---------------------------------------------------------------------------

/// Raised from a signal handler. Once set, no new work items start; items
/// already running finish and are handed to the consumer.
inline std::atomic<bool>& stop_requested() {
    static std::atomic<bool> flag{false};
    return flag;
}

/// Runs produce(i) for i in [0, n) on `workers` threads and hands the results
/// to consume(i, result) strictly in index order on the calling thread.
/// Returns false when stop_requested() cut the run short.
template <class Result>
bool ordered_parallel(std::size_t n, int workers, const std::function<Result(std::size_t)>& produce,
                      const std::function<void(std::size_t, Result&)>& consume) {
    enum class State : char { pending, done, failed, skipped };
    std::vector<std::optional<Result>> slots(n);
    std::vector<std::exception_ptr> errors(n);
    std::vector<State> state(n, State::pending);
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            std::optional<Result> r;
            std::exception_ptr err;
            const bool skip = stop_requested().load();
            if (!skip) {
                try {
                    r = produce(i);
                } catch (...) {
                    err = std::current_exception();
                }
            }
            {
                std::lock_guard lock(mu);
                slots[i] = std::move(r);
                errors[i] = err;
                state[i] = skip ? State::skipped : err ? State::failed : State::done;
            }
            cv.notify_all();
        }
    };
    std::vector<std::thread> threads;
    for (int t = 0; t < std::max(1, workers); ++t) threads.emplace_back(work);
    std::exception_ptr first_error;
    bool complete = true;
    for (std::size_t i = 0; i < n; ++i) {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return state[i] != State::pending; });
        const auto st = state[i];
        auto r = std::move(slots[i]);
        slots[i].reset();
        lock.unlock();
        if (st == State::failed && !first_error) first_error = errors[i];
        if (st == State::skipped) complete = false;
        if (st == State::done && complete && !first_error) consume(i, *r);
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return complete;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_manifest(const std::filesystem::path& output, const json& manifest) {
    auto path = output;
    path += ".manifest.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << manifest.dump(2) << '\n';
}

inline json backends_manifest(const Pool& pool) {
    json arr = json::array();
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto d = pool[i].backend->describe();
        arr.push_back({{"backend_id", pool.id(i)}, {"model_id", d.model_id}, {"endpoint", d.endpoint}});
    }
    return arr;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct GenerationJob {
    std::vector<Instance> instances{};
    std::string pool_name{};
    Pool pool;
    std::vector<std::string> settings{};  // tl1..tl5, rand, sent, or single:<backend_id>
    GenConfig config{};
    BackendPtr reference{};  // prompt tokenizer; whitespace when null
    std::filesystem::path out{};
    int parallelism = 1;
    bool filter_artifacts = false;
    ArtifactRules artifact_rules{};
    std::size_t max_new_records = static_cast<std::size_t>(-1);
    std::function<void(const std::string&)> warn = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
};

struct GenerationSummary {
    std::size_t generated = 0;
    std::size_t already_present = 0;
    std::size_t failed = 0;
    std::size_t skipped_instances = 0;
    bool interrupted = false;
};

namespace detail {

// Drops an interrupted final line so that appends start on a fresh line.
inline void truncate_torn_tail(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    if (content.empty() || content.back() == '\n') return;
    const auto nl = content.rfind('\n');
    std::filesystem::resize_file(path, nl == std::string::npos ? 0 : nl + 1);
}

}  // namespace detail

/// One record per (instance, setting) appended to job.out in canonical order
/// (instances in input order, settings in the given order). Pairs already in
/// the file are skipped, so an interrupted run resumes where it stopped.
inline GenerationSummary run_generation(const GenerationJob& job) {
    GenerationSummary summary;
    for (const auto& s : job.settings) {
        if (!chunk_mode_from_setting(s) && !std::string_view(s).starts_with(single_model_prefix))
            throw PreconditionError("unknown setting '" + s + "'");
    }

    std::set<std::pair<std::string, std::string>> done;
    if (std::filesystem::exists(job.out)) {
        detail::truncate_torn_tail(job.out);
        for (const auto& j : read_jsonl(job.out, true))
            done.insert({wire::field<std::string>(j, "id"), wire::field<std::string>(j, "setting")});
    }

    const WhitespaceTokenizer whitespace;
    const Backend& reference = job.reference ? *job.reference : whitespace;

    struct Work {
        const Instance* instance;
        std::string prompt;
        std::string setting;
    };
    std::vector<Work> work;
    for (const auto& inst : job.instances) {
        std::optional<std::string> prompt;
        for (const auto& s : job.settings) {
            if (done.count({inst.id, s})) {
                ++summary.already_present;
                continue;
            }
            if (!prompt) {
                prompt = extract_prompt(inst, reference, job.config.prompt_tokens);
                if (!prompt) {
                    job.warn("instance " + inst.id + " has fewer than " + std::to_string(job.config.prompt_tokens) +
                             " tokens; skipped");
                    ++summary.skipped_instances;
                    break;
                }
            }
            if (work.size() >= job.max_new_records) break;
            work.push_back({&inst, *prompt, s});
        }
    }

    std::ofstream out(job.out, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot open " + job.out.string() + " for appending");

    summary.interrupted = !ordered_parallel<std::string>(
        work.size(), job.parallelism,
        [&](std::size_t i) {
            const auto& w = work[i];
            GenConfig cfg = job.config;
            Pool pool = job.pool;
            if (auto mode = chunk_mode_from_setting(w.setting)) {
                cfg.chunk_mode = *mode;
            } else {
                const auto member_id = w.setting.substr(single_model_prefix.size());
                std::optional<Pool::Member> member;
                for (std::size_t m = 0; m < job.pool.size(); ++m)
                    if (job.pool.id(m) == member_id) member = job.pool[m];
                if (!member) throw PreconditionError("setting " + w.setting + " names no pool member");
                pool = Pool(std::vector<Pool::Member>{*member});
                cfg.chunk_mode = ChunkMode::fixed(5);
            }
            auto generate = [&](std::uint64_t seed) {
                GenConfig c = cfg;
                c.seed = seed;
                return blend_generate(w.prompt, pool, c, w.instance->id + "\x1f" + w.setting);
            };
            auto trace = generate(cfg.seed);
            if (job.filter_artifacts && !trace.failed)
                trace = filter_regenerate(std::move(trace), job.artifact_rules, generate);
            GenerationRecord rec{w.instance->id, std::string(to_string(w.instance->dataset)), w.setting,
                                 job.pool_name, job.config.seed, w.prompt, std::move(trace)};
            return to_json_record(rec).dump() + "\n";
        },
        [&](std::size_t i, std::string& line) {
            out << line;
            out.flush();
            ++summary.generated;
            if (line.find("\"failed\"") != std::string::npos) {
                const auto j = json::parse(line);
                const auto flags = wire::field_or<std::vector<std::string>>(j, "flags", {});
                if (std::find(flags.begin(), flags.end(), "failed") != flags.end()) {
                    ++summary.failed;
                    job.warn("generation failed for " + work[i].instance->id + "/" + work[i].setting + ": " +
                             wire::field_or<std::string>(j, "error", ""));
                }
            }
        });
    return summary;
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& statistical_metrics() {
    static const std::vector<std::string> m{"likelihood", "rank", "logrank", "entropy", "lrr", "fast_curvature"};
    return m;
}

struct ScoringJob {
    std::vector<std::filesystem::path> inputs;  // generation JSONL or instance JSONL (human class)
    BackendPtr scorer;
    ScoreCache* cache = nullptr;
    ScoringOptions opts{};
    int prompt_tokens = 30;  // prompt length for human texts when excluding prompts
    Perturber perturber;     // enables detectgpt and npr when set
    PerturbationOptions perturbation{};
    std::filesystem::path out;
    int parallelism = 1;
};

struct ScoringSummary {
    std::size_t scored = 0;
    std::size_t failed = 0;
    ScoreCache::Stats cache{};
    bool interrupted = false;
};

/// Scores every record of every input and writes one ScoreRecord per line to
/// job.out. Records that fail are written to "<out>.errors.jsonl" instead.
inline ScoringSummary run_scoring(const ScoringJob& job) {
    if (!job.scorer) throw PreconditionError("scoring needs a scorer backend");
    const auto scorer_desc = job.scorer->describe();

    struct Item {
        std::string id, dataset, setting, text, prompt;
        bool failed_generation = false;
    };
    std::vector<Item> items;
    for (const auto& path : job.inputs) {
        for (const auto& j : read_jsonl(path)) {
            Item it;
            it.id = wire::field<std::string>(j, "id");
            it.dataset = std::string(to_string(dataset_from_string(wire::field_or<std::string>(j, "dataset", "custom"))));
            it.text = wire::field<std::string>(j, "text");
            if (j.contains("setting")) {
                it.setting = wire::field<std::string>(j, "setting");
                it.prompt = wire::field_or<std::string>(j, "prompt", "");
                const auto flags = wire::field_or<std::vector<std::string>>(j, "flags", {});
                it.failed_generation = std::find(flags.begin(), flags.end(), "failed") != flags.end();
            } else {
                it.setting = "human";
            }
            items.push_back(std::move(it));
        }
    }

    const ScoreFn score_fn = [&](const std::string& text) {
        return job.cache ? job.cache->get_or_score(*job.scorer, text) : toblend::score(*job.scorer, ScoreRequest{text});
    };

    json opts_json{{"exclude_prompt", job.opts.exclude_prompt}, {"epsilon", job.opts.epsilon}};
    if (job.opts.exclude_prompt) opts_json["prompt_tokens"] = job.prompt_tokens;
    if (job.perturber) opts_json["perturbations"] = job.perturbation.m;

    std::ofstream out(job.out, std::ios::binary | std::ios::trunc);
    auto err_path = job.out;
    err_path += ".errors.jsonl";
    std::ofstream errs;
    ScoringSummary summary;

    summary.interrupted = !ordered_parallel<json>(
        items.size(), job.parallelism,
        [&](std::size_t i) -> json {
            const auto& it = items[i];
            try {
                if (it.failed_generation) throw Error("generation failed; nothing to score");
                ScoringOptions opts = job.opts;
                if (opts.exclude_prompt) {
                    if (it.setting == "human") {
                        opts.prompt_token_count = job.prompt_tokens;
                    } else {
                        opts.prompt_token_count = it.prompt.empty()
                                                      ? 0
                                                      : static_cast<int>(toblend::tokenize(*job.scorer, it.prompt).size());
                    }
                }
                const auto st = score_fn(it.text);
                ScoreRecord rec{it.id, it.dataset, it.setting, scorer_desc.model_id, {}, opts_json};
                rec.metrics["likelihood"] = likelihood(st, opts).value;
                rec.metrics["rank"] = mean_rank(st, opts).value;
                rec.metrics["logrank"] = log_rank(st, opts).value;
                rec.metrics["entropy"] = entropy_score(st, opts).value;
                rec.metrics["lrr"] = lrr(st, opts).value;
                rec.metrics["fast_curvature"] = fast_curvature(st, opts).value;
                if (job.perturber) {
                    auto popts = job.perturbation;
                    popts.seed = splitmix64(popts.seed ^ fnv1a64(it.id + "\x1f" + it.setting));
                    rec.metrics["detectgpt"] = detectgpt_score(it.text, score_fn, job.perturber, popts, opts).value;
                    rec.metrics["npr"] = npr_score(it.text, score_fn, job.perturber, popts, opts).value;
                }
                return json{{"ok", to_json_record(rec)}};
            } catch (const std::exception& e) {
                return json{{"error", {{"id", it.id}, {"setting", it.setting}, {"error", e.what()}}}};
            }
        },
        [&](std::size_t, json& r) {
            if (r.contains("ok")) {
                out << r["ok"].dump() << '\n';
                ++summary.scored;
            } else {
                if (!errs.is_open()) errs.open(err_path, std::ios::binary | std::ios::trunc);
                errs << r["error"].dump() << '\n';
                ++summary.failed;
            }
        });
    if (job.cache) summary.cache = job.cache->stats();
    return summary;
}

// ---------------------------------------------------------------------------
// Tables and export
// ---------------------------------------------------------------------------

/// Datasets in canonical order (xsum, squad, writing, then others sorted).
inline std::vector<std::string> datasets_in(const std::vector<ScoreRecord>& a, const std::vector<ScoreRecord>& b) {
    std::set<std::string> seen;
    for (const auto& r : a) seen.insert(r.dataset);
    for (const auto& r : b) seen.insert(r.dataset);
    std::vector<std::string> out;
    for (const char* d : {"xsum", "squad", "writing"})
        if (seen.erase(d)) out.emplace_back(d);
    out.insert(out.end(), seen.begin(), seen.end());
    return out;
}

/// Metrics in the fixed reporting order, restricted to those present.
inline std::vector<std::string> metrics_in(const std::vector<ScoreRecord>& a, const std::vector<ScoreRecord>& b) {
    std::set<std::string> seen;
    for (const auto* v : {&a, &b})
        for (const auto& r : *v)
            for (const auto& [m, _] : r.metrics) seen.insert(m);
    std::vector<std::string> out;
    for (auto m : {Metric::likelihood, Metric::rank, Metric::logrank, Metric::entropy, Metric::lrr,
                   Metric::fast_curvature, Metric::detectgpt, Metric::npr, Metric::classifier, Metric::judge}) {
        if (seen.erase(std::string(to_string(m)))) out.emplace_back(to_string(m));
    }
    out.insert(out.end(), seen.begin(), seen.end());
    return out;
}

struct EvalResult {
    TableBuild build;
    std::vector<std::string> datasets;
    std::vector<std::string> metrics;
};

/// Builds the table and writes "<out_prefix>.csv" and "<out_prefix>.json".
inline EvalResult run_eval(const std::vector<ScoreRecord>& human, const std::vector<ScoreRecord>& machine,
                           const std::filesystem::path& out_prefix, std::vector<std::string> datasets = {},
                           std::vector<std::string> metrics = {}, std::vector<std::string> settings = {}) {
    if (datasets.empty()) datasets = datasets_in(human, machine);
    if (metrics.empty()) metrics = metrics_in(human, machine);
    if (settings.empty()) settings = blend_settings();
    EvalResult res{build_table(human, machine, datasets, metrics, settings), datasets, metrics};
    auto csv = out_prefix;
    csv += ".csv";
    auto js = out_prefix;
    js += ".json";
    std::ofstream(csv, std::ios::binary | std::ios::trunc) << table_csv(res.build.table, datasets, metrics);
    std::ofstream(js, std::ios::binary | std::ios::trunc) << table_json(res.build.table, res.build.missing).dump(2) << '\n';
    return res;
}

/// Writes one {"text": ...} object per SFT record.
inline void write_sft_jsonl(const std::vector<SftRecord>& records, const std::filesystem::path& out) {
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    for (const auto& r : records) f << json{{"text", r.text}}.dump() << '\n';
}

}  // namespace toblend
