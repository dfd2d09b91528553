// toblend: batch front end for generation, scoring, evaluation and export.

#include <csignal>
#include <iostream>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>

#include "toblend/toblend.hpp"
#include "toblend/server.hpp"

namespace fs = std::filesystem;
using namespace toblend;

namespace {

std::vector<std::string> split_comma(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

BackendSpec scorer_spec(const RunConfig* cfg, const std::string& override_endpoint, const fs::path& cwd) {
    if (!override_endpoint.empty()) {
        BackendSpec s;
        s.backend_id = s.model_id = "scorer";
        s.endpoint = override_endpoint;
        if (s.endpoint.rfind("ngram:", 0) == 0) {
            s.endpoint = "ngram:" + detail::resolve(cwd, s.endpoint.substr(6));
            s.model_id = "ngram:" + fs::path(s.endpoint.substr(6)).filename().string();
        }
        return s;
    }
    if (!cfg || !cfg->scorer) throw PreconditionError("no scorer: pass --scorer or set \"scorer\" in the config");
    return *cfg->scorer;
}

extern "C" void on_interrupt(int) {
    // A second signal abandons the graceful stop.
    if (stop_requested().exchange(true)) _exit(130);
}

void install_interrupt_handler() {
    struct sigaction sa {};
    sa.sa_handler = on_interrupt;
    sa.sa_flags = SA_RESTART;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
}

HttpOptions http_options(const RunConfig& cfg) {
    HttpOptions o;
    o.max_in_flight = cfg.max_in_flight;
    if (const char* tok = std::getenv("TOBLEND_API_TOKEN")) o.bearer_token = tok;
    return o;
}

int cmd_gen(const std::string& config_path, const std::vector<std::string>& dataset_names, std::string pool_name,
            const std::string& settings, const std::string& out, std::optional<std::uint64_t> seed,
            std::optional<int> parallelism, bool filter, const std::string& completion_rule,
            std::optional<int> limit) {
    auto cfg = load_run_config(config_path);
    if (seed) cfg.generation.seed = *seed;
    if (parallelism) cfg.parallelism = *parallelism;
    if (!completion_rule.empty()) cfg.generation.completion_rule = completion_rule_from_string(completion_rule);
    if (pool_name.empty()) {
        if (cfg.pools.size() != 1) throw PreconditionError("config has " + std::to_string(cfg.pools.size()) +
                                                           " pools; choose one with --pool");
        pool_name = cfg.pools.begin()->first;
    }
    const auto pit = cfg.pools.find(pool_name);
    if (pit == cfg.pools.end()) throw PreconditionError("no pool named '" + pool_name + "' in config");

    const auto http = http_options(cfg);
    GenerationJob job{.pool = make_pool(pit->second, http)};
    job.pool_name = pool_name;
    if (!cfg.reference_backend.empty()) {
        for (std::size_t i = 0; i < job.pool.size(); ++i)
            if (job.pool.id(i) == cfg.reference_backend) job.reference = job.pool[i].backend;
        if (!job.reference) throw PreconditionError("reference_backend '" + cfg.reference_backend + "' is not in pool " + pool_name);
    }
    auto names = dataset_names;
    if (names.empty())
        for (const auto& [name, _] : cfg.datasets) names.push_back(name);
    for (const auto& name : names) {
        const auto dit = cfg.datasets.find(name);
        if (dit == cfg.datasets.end()) throw PreconditionError("no dataset named '" + name + "' in config");
        auto insts = load_jsonl(dit->second);
        job.instances.insert(job.instances.end(), insts.begin(), insts.end());
    }
    job.settings = settings.empty() ? blend_settings() : split_comma(settings);
    job.config = cfg.generation;
    job.out = out.empty() ? fs::path(cfg.output_dir) / ("gen-" + pool_name + ".jsonl") : fs::path(out);
    if (job.out.has_parent_path()) fs::create_directories(job.out.parent_path());
    job.parallelism = cfg.parallelism;
    job.filter_artifacts = filter;
    if (limit) job.max_new_records = static_cast<std::size_t>(*limit);

    const auto started = utc_timestamp();
    install_interrupt_handler();
    const auto summary = run_generation(job);
    write_manifest(job.out, {{"command", "gen"},
                             {"config_sha256", cfg.config_sha256},
                             {"seed", cfg.generation.seed},
                             {"pool", pool_name},
                             {"backends", backends_manifest(job.pool)},
                             {"settings", job.settings},
                             {"started", started},
                             {"finished", utc_timestamp()},
                             {"generated", summary.generated},
                             {"already_present", summary.already_present},
                             {"failed", summary.failed},
                             {"skipped_instances", summary.skipped_instances},
                             {"interrupted", summary.interrupted}});
    std::cerr << "generated " << summary.generated << " records (" << summary.already_present
              << " already present, " << summary.failed << " failed, " << summary.skipped_instances
              << " instances skipped)\n";
    if (summary.interrupted) std::cerr << "interrupted; rerun the same command to resume\n";
    return summary.failed || summary.skipped_instances || summary.interrupted ? exit_partial : exit_ok;
}

int cmd_score(const std::string& config_path, const std::string& scorer, const std::vector<std::string>& inputs,
              const std::string& out, std::optional<int> parallelism, bool exclude_prompt, bool perturb,
              std::optional<std::uint64_t> seed, std::optional<int> perturbations) {
    std::optional<RunConfig> cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    const auto spec = scorer_spec(cfg ? &*cfg : nullptr, scorer, fs::current_path());
    const auto http = cfg ? http_options(*cfg) : HttpOptions{};
    auto backend = make_backend(spec, http);
    const auto desc = backend->describe();

    ScoringJob job;
    for (const auto& in : inputs) job.inputs.emplace_back(in);
    job.scorer = backend;
    job.out = out;
    job.parallelism = parallelism.value_or(cfg ? cfg->parallelism : 1);
    job.opts.exclude_prompt = exclude_prompt;
    if (cfg) job.prompt_tokens = cfg->generation.prompt_tokens;
    std::optional<ScoreCache> cache;
    if (cfg && !cfg->cache_dir.empty()) {
        cache.emplace(cfg->cache_dir);
        job.cache = &*cache;
    }
    if (perturb) {
        if (!cfg || !cfg->perturber) throw PreconditionError("--perturb needs a \"perturber\" section in the config");
        const auto& ps = *cfg->perturber;
        auto model = std::make_shared<const NgramModel>(
            NgramModel::train(read_corpus_lines(ps.corpus), NgramModel::Options{ps.order, ps.add_k, true}));
        job.perturber = span_perturber(model, ps.fraction);
        job.perturbation.m = perturbations.value_or(ps.m);
        job.perturbation.seed = seed.value_or(cfg->generation.seed);
    }

    const auto started = utc_timestamp();
    install_interrupt_handler();
    const auto summary = run_scoring(job);
    const auto lookups = summary.cache.hits + summary.cache.misses;
    json manifest{{"command", "score"},
                  {"scorer", {{"backend_id", spec.backend_id}, {"model_id", desc.model_id}, {"endpoint", spec.endpoint}}},
                  {"inputs", inputs},
                  {"seed", job.perturbation.seed},
                  {"started", started},
                  {"finished", utc_timestamp()},
                  {"scored", summary.scored},
                  {"failed", summary.failed},
                  {"interrupted", summary.interrupted},
                  {"cache", {{"hits", summary.cache.hits}, {"misses", summary.cache.misses},
                             {"invalidated", summary.cache.invalidated}}}};
    if (cfg) manifest["config_sha256"] = cfg->config_sha256;
    write_manifest(job.out, manifest);
    std::cerr << "scored " << summary.scored << " records, " << summary.failed << " failed";
    if (cache)
        std::cerr << "; cache hits " << summary.cache.hits << "/" << lookups << " ("
                  << (lookups ? 100.0 * static_cast<double>(summary.cache.hits) / static_cast<double>(lookups) : 0.0)
                  << "%)";
    std::cerr << '\n';
    if (summary.interrupted) std::cerr << "interrupted; scores are incomplete\n";
    return summary.failed || summary.interrupted ? exit_partial : exit_ok;
}

int cmd_eval(const std::vector<std::string>& score_files, const std::string& out, const std::string& datasets,
             const std::string& metrics, const std::string& settings) {
    std::vector<ScoreRecord> human, machine;
    for (const auto& f : score_files)
        for (auto& r : read_score_records(f)) (r.setting == "human" ? human : machine).push_back(std::move(r));
    const auto started = utc_timestamp();
    auto settings_list = split_comma(settings);
    const auto res = run_eval(human, machine, out, split_comma(datasets), split_comma(metrics), settings_list);
    write_manifest(out, {{"command", "eval"},
                         {"inputs", score_files},
                         {"started", started},
                         {"finished", utc_timestamp()},
                         {"cells", res.build.table.cells.size()},
                         {"missing", res.build.missing}});
    for (const auto& m : res.build.missing) std::cerr << "missing: " << m << '\n';
    std::cerr << res.build.table.cells.size() << " cells written to " << out << ".csv\n";
    return res.build.complete() ? exit_ok : exit_partial;
}

int cmd_export(const std::string& annotations, const std::vector<std::string>& generations,
               const std::vector<std::string>& humans, int threshold, const std::string& out) {
    const auto ann = load_annotations(annotations);
    std::vector<GenerationRecord> gens;
    for (const auto& g : generations) {
        auto v = read_generation_records(g);
        gens.insert(gens.end(), v.begin(), v.end());
    }
    std::vector<Instance> insts;
    for (const auto& h : humans) {
        auto v = load_jsonl(h);
        insts.insert(insts.end(), v.begin(), v.end());
    }
    const auto started = utc_timestamp();
    const auto res = export_finetune(ann, gens, insts, threshold);
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
    write_sft_jsonl(res.records, out);
    std::size_t machine = 0;
    for (const auto& r : res.records) machine += r.machine;
    write_manifest(out, {{"command", "export-finetune"},
                         {"annotations", annotations},
                         {"threshold", threshold},
                         {"started", started},
                         {"finished", utc_timestamp()},
                         {"machine_records", machine},
                         {"human_records", res.records.size() - machine}});
    std::cerr << "exported " << machine << " machine and " << res.records.size() - machine << " human records\n";
    return exit_ok;
}

int cmd_serve_ngram(const std::string& corpus, int order, double add_k, bool closed_vocab, const std::string& host,
                    int port, std::string backend_id, const std::string& model_id) {
    // Route SIGINT/SIGTERM to a dedicated thread so the handler can stop the server.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    if (backend_id.empty()) backend_id = "ngram-" + fs::path(corpus).stem().string();
    auto model = std::make_shared<const NgramModel>(
        NgramModel::train(read_corpus_lines(corpus), NgramModel::Options{order, add_k, !closed_vocab}));
    auto backend = std::make_shared<NgramBackend>(model, backend_id, model_id.empty() ? backend_id : model_id);
    BackendServer server(backend);
    const int bound = server.bind(host, port);
    std::cout << "listening on " << host << ":" << bound << std::endl;

    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    server.listen();
    // listen() also returns if the socket fails; wake the waiter in that case.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    std::cerr << "server stopped\n";
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Token-level blended generation and detection evaluation"};
    app.require_subcommand(1);

    std::string config, pool, settings, out, scorer, completion_rule;
    std::vector<std::string> datasets;
    std::optional<std::uint64_t> seed;
    std::optional<int> parallelism, limit, perturbations;
    bool filter = false;

    auto* gen = app.add_subcommand("gen", "generate blended texts for every (instance, setting)");
    gen->add_option("--config", config, "run configuration JSON")->required()->check(CLI::ExistingFile);
    gen->add_option("--dataset", datasets, "dataset name from the config (repeatable; default all)");
    gen->add_option("--pool", pool, "pool name from the config");
    gen->add_option("--settings", settings, "comma list of tl1..tl5,rand,sent,single:<backend_id>");
    gen->add_option("--out", out, "output JSONL (appended; resumable)");
    gen->add_option("--seed", seed, "global seed");
    gen->add_option("--parallelism", parallelism, "worker threads")->check(CLI::PositiveNumber);
    gen->add_flag("--filter-artifacts", filter, "regenerate texts with decoding artifacts");
    gen->add_option("--completion-rule", completion_rule, "tokens or period-cap")
        ->check(CLI::IsMember({"tokens", "period-cap"}));
    gen->add_option("--limit", limit, "stop after this many new records")->check(CLI::NonNegativeNumber);

    std::vector<std::string> inputs;
    bool exclude_prompt = false, perturb = false;
    auto* score = app.add_subcommand("score", "score generation or instance JSONL with the scorer model");
    score->add_option("--config", config, "run configuration JSON")->check(CLI::ExistingFile);
    score->add_option("--scorer", scorer, "scorer endpoint (http URL or ngram:<corpus>)");
    score->add_option("--in", inputs, "generation or instance JSONL (repeatable)")->required()->check(CLI::ExistingFile);
    score->add_option("--out", out, "output scores JSONL")->required();
    score->add_option("--parallelism", parallelism, "worker threads")->check(CLI::PositiveNumber);
    score->add_option("--seed", seed, "perturbation seed");
    score->add_option("--perturbations", perturbations, "perturbations per text")->check(CLI::PositiveNumber);
    score->add_flag("--exclude-prompt", exclude_prompt, "score only the continuation");
    score->add_flag("--perturb", perturb, "also compute perturbation-based metrics");

    std::vector<std::string> score_files;
    std::string metrics_list, datasets_list;
    auto* eval = app.add_subcommand("eval", "build the AUROC table from score files");
    eval->add_option("--scores", score_files, "scores JSONL (repeatable)")->required()->check(CLI::ExistingFile);
    eval->add_option("--out", out, "output prefix for .csv and .json")->required();
    eval->add_option("--datasets", datasets_list, "comma list (default: all present)");
    eval->add_option("--metrics", metrics_list, "comma list (default: all present)");
    eval->add_option("--settings", settings, "comma list (default: tl1..tl5,rand,sent)");

    std::string annotations;
    std::vector<std::string> generations, humans;
    int threshold = 5;
    auto* exp = app.add_subcommand("export-finetune", "export annotated texts as fine-tuning JSONL");
    exp->add_option("--annotations", annotations, "annotation CSV")->required()->check(CLI::ExistingFile);
    exp->add_option("--generations", generations, "generation JSONL (repeatable)")->required()->check(CLI::ExistingFile);
    exp->add_option("--humans", humans, "human instance JSONL (repeatable)")->required()->check(CLI::ExistingFile);
    exp->add_option("--threshold", threshold, "minimum mean coherence and fluency")->check(CLI::Range(1, 7));
    exp->add_option("--out", out, "output JSONL")->required();

    std::string corpus, host = "127.0.0.1", backend_id, model_id;
    int order = 3, port = 8080;
    double add_k = 0.5;
    bool closed_vocab = false;
    auto* serve = app.add_subcommand("serve-ngram", "serve an n-gram model over the wire protocol");
    serve->add_option("--corpus", corpus, "training corpus (text lines or JSONL with \"text\")")
        ->required()->check(CLI::ExistingFile);
    serve->add_option("--order", order, "n-gram order")->check(CLI::Range(1, 16));
    serve->add_option("--add-k", add_k, "additive smoothing constant")->check(CLI::PositiveNumber);
    serve->add_flag("--closed-vocab", closed_vocab, "reject out-of-vocabulary tokens when scoring");
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port (0 picks a free one)")->check(CLI::Range(0, 65535));
    serve->add_option("--backend-id", backend_id, "backend id reported by /v1/info");
    serve->add_option("--model-id", model_id, "model id reported by /v1/info");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen)
            return cmd_gen(config, datasets, pool, settings, out, seed, parallelism, filter, completion_rule, limit);
        if (*score)
            return cmd_score(config, scorer, inputs, out, parallelism, exclude_prompt, perturb, seed, perturbations);
        if (*eval) return cmd_eval(score_files, out, datasets_list, metrics_list, settings);
        if (*exp) return cmd_export(annotations, generations, humans, threshold, out);
        if (*serve) return cmd_serve_ngram(corpus, order, add_k, closed_vocab, host, port, backend_id, model_id);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
    return exit_failure;
}
