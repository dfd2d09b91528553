// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Everything runs against the in-process n-gram backend.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/annotation_fixture.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/workspace.hpp"
#include "toblend/toblend.hpp"

using namespace toblend;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Metrics against full-vocabulary enumeration
// ---------------------------------------------------------------------------

Outcome stat_oracle() {
    const auto lang = synth::make_language(1001);
    const auto corpus = synth::corpus(lang, -1, 600, 8, 40, 1002);
    auto model = std::make_shared<const NgramModel>(NgramModel::train(corpus, NgramModel::Options{3, 0.4, true}));
    const NgramBackend backend(model, "oracle-scorer");
    std::mt19937_64 rng(1003);
    double worst = 0;
    std::string worst_metric;
    for (int t = 0; t < 50; ++t) {
        const int len = 2 + static_cast<int>(rng() % 199);
        // Mix in-language text with arbitrary vocabulary draws.
        std::string text = synth::sample_line(lang, static_cast<int>(rng() % 4) - 1, len, rng);
        if (t % 5 == 0) {
            auto toks = whitespace_tokenize(text);
            for (auto& w : toks)
                if (rng() % 3 == 0) w = lang.words[rng() % lang.words.size()];
            text = whitespace_detokenize(toks);
        }
        const auto st = toblend::score(backend, ScoreRequest{text});
        const auto naive = oracle::metrics(oracle::enumerate_stats(*model, text));
        const std::pair<const char*, double> diffs[] = {
            {"likelihood", likelihood(st).value - naive.likelihood},
            {"rank", mean_rank(st).value - naive.rank},
            {"logrank", log_rank(st).value - naive.logrank},
            {"entropy", entropy_score(st).value - naive.entropy},
            {"lrr", lrr(st).value - naive.lrr},
            {"fast_curvature", fast_curvature(st).value - naive.fast_curvature},
        };
        for (const auto& [name, d] : diffs)
            if (std::abs(d) > worst || std::isnan(d)) {
                worst = std::isnan(d) ? INFINITY : std::abs(d);
                worst_metric = name;
            }
    }
    return {worst <= 1e-9, fmt("50 texts, max |library - enumerator| = %.2e (%s), tolerance 1e-9", worst,
                               worst_metric.empty() ? "-" : worst_metric.c_str())};
}

// ---------------------------------------------------------------------------
// 2. Analytic curvature against Monte Carlo
// ---------------------------------------------------------------------------

Outcome curvature_monte_carlo() {
    const auto lang = synth::make_language(2001);
    const auto corpus = synth::corpus(lang, -1, 500, 8, 40, 2002);
    auto model = std::make_shared<const NgramModel>(NgramModel::train(corpus, NgramModel::Options{3, 0.5, true}));
    const NgramBackend backend(model, "mc-scorer");
    std::mt19937_64 rng(2003);
    double worst_z = 0;
    int within = 0;
    for (int t = 0; t < 10; ++t) {
        const auto text = synth::sample_line(lang, -1, 15 + static_cast<int>(rng() % 10), rng);
        const double analytic = fast_curvature(toblend::score(backend, ScoreRequest{text})).value;
        const auto mc = oracle::monte_carlo_curvature(*model, text, 1'000'000, 2100 + static_cast<std::uint64_t>(t));
        const double z = std::abs(analytic - mc.estimate) / mc.standard_error;
        worst_z = std::max(worst_z, z);
        within += z <= 3.0;
    }
    return {within == 10, fmt("%d/10 texts within 3 standard errors (10^6 samples each), worst %.2f SE", within, worst_z)};
}

// ---------------------------------------------------------------------------
// 3. AUROC against pairwise counting
// ---------------------------------------------------------------------------

Outcome auroc_exactness() {
    std::mt19937_64 rng(3001);
    int exact = 0, symmetric = 0, invariant = 0;
    for (int t = 0; t < 100; ++t) {
        const auto levels = 1 + rng() % 25;  // few levels force ties
        std::vector<double> p(1 + rng() % 500), n(1 + rng() % 500);
        const double shift = static_cast<double>(rng() % 5) * 0.5;
        for (auto& x : p) x = static_cast<double>(rng() % levels) * 0.5 + shift;
        for (auto& x : n) x = static_cast<double>(rng() % levels) * 0.5;
        const double a = auroc(p, n);
        exact += a == oracle::pairwise_auroc(p, n);
        symmetric += std::abs(a + auroc(n, p) - 1.0) <= 1e-12;
        std::vector<double> pt, nt;
        for (double x : p) pt.push_back(std::atan(x) * 3.0 + 1.0);
        for (double x : n) nt.push_back(std::atan(x) * 3.0 + 1.0);
        invariant += auroc(pt, nt) == a;
    }
    return {exact == 100 && symmetric == 100 && invariant == 100,
            fmt("100 tied score sets: %d exact vs pairwise, %d symmetric, %d transform-invariant", exact, symmetric,
                invariant)};
}

// ---------------------------------------------------------------------------
// 4. Generation determinism and the stopping bound
// ---------------------------------------------------------------------------

Outcome blend_determinism() {
    fixture::WorkspaceOptions o;
    o.instances_per_dataset = 100;
    o.datasets = {"xsum"};
    o.max_content_tokens = 170;
    fixture::Workspace ws(o);
    const auto cfg = load_run_config(ws.save_config());
    auto job_for = [&](const std::string& out, int parallelism) {
        GenerationJob job{.pool = make_pool(cfg.pools.at("classic"))};
        job.pool_name = "classic";
        job.instances = load_jsonl(cfg.datasets.at("xsum"));
        job.settings = {"tl1", "tl2", "tl3", "tl4", "tl5"};
        job.config = cfg.generation;
        job.out = ws / out;
        job.parallelism = parallelism;
        return job;
    };
    run_generation(job_for("run1.jsonl", 1));
    run_generation(job_for("run2.jsonl", 1));
    run_generation(job_for("run8.jsonl", 8));
    const auto a = fixture::slurp(ws / "run1.jsonl");
    const bool same_runs = a == fixture::slurp(ws / "run2.jsonl");
    const bool same_par = a == fixture::slurp(ws / "run8.jsonl");
    std::map<int, int> in_bound, total;
    for (const auto& r : read_generation_records(ws / "run1.jsonl")) {
        const int k = r.setting.back() - '0';
        ++total[k];
        in_bound[k] += r.trace.total_kept_tokens > 170 && r.trace.total_kept_tokens <= 170 + k && !r.trace.failed;
    }
    bool bounds = true;
    std::string counts;
    for (int k = 1; k <= 5; ++k) {
        bounds = bounds && total[k] == 100 && in_bound[k] == 100;
        counts += fmt("%sk=%d %d/%d", k > 1 ? ", " : "", k, in_bound[k], total[k]);
    }
    return {same_runs && same_par && bounds,
            fmt("repeat run identical: %s; parallelism 1 vs 8 identical: %s; 170 < total <= 170+k: %s",
                same_runs ? "yes" : "no", same_par ? "yes" : "no", counts.c_str())};
}

// ---------------------------------------------------------------------------
// 5. Greedy chunk invariance
// ---------------------------------------------------------------------------

Outcome greedy_invariance() {
    const auto lang = synth::make_language(5001);
    auto model = std::make_shared<const NgramModel>(
        NgramModel::train(synth::corpus(lang, -1, 500, 8, 40, 5002), NgramModel::Options{3, 0.5, true}));
    const Pool pool(std::vector<BackendPtr>{std::make_shared<NgramBackend>(model, "solo")});
    std::mt19937_64 rng(5003);
    auto gen = [&](const std::string& prompt, ChunkMode mode, int max_tokens, std::uint64_t seed) {
        GenConfig c;
        c.chunk_mode = mode;
        c.max_content_tokens = max_tokens;
        c.sampling = Sampling{0.0, 0};
        c.seed = seed;
        return blend_generate(prompt, pool, c, "p");
    };
    int identical = 0;
    for (int i = 0; i < 50; ++i) {
        const auto prompt = synth::sample_line(lang, -1, 30, rng);
        // 179 makes every fixed length stop at exactly 180 tokens.
        const auto ref = gen(prompt, ChunkMode::fixed(1), 179, 1);
        bool ok = ref.total_kept_tokens == 180;
        for (int k = 2; k <= 5; ++k) ok = ok && gen(prompt, ChunkMode::fixed(k), 179, 1 + k).final_text == ref.final_text;
        // Random lengths overshoot by a variable amount; compare against
        // fixed(1) stopped at the same length.
        const auto rnd = gen(prompt, ChunkMode::random(), 179, 99 + static_cast<std::uint64_t>(i));
        ok = ok && rnd.final_text == gen(prompt, ChunkMode::fixed(1), rnd.total_kept_tokens - 1, 7).final_text;
        identical += ok;
    }
    return {identical == 50,
            fmt("%d/50 prompts byte-identical across fixed(1..5) and random (random compared at its own length)",
                identical)};
}

// ---------------------------------------------------------------------------
// 6. Selection uniformity
// ---------------------------------------------------------------------------

Outcome selection_uniformity() {
    GenConfig c;
    c.chunk_mode = ChunkMode::random();
    Rng rng(substream_seed(6001, "uniformity", "rand"));
    const int n = 100000;
    std::map<int, int> ks, bs;
    for (int i = 0; i < n; ++i) {
        const auto d = draw_step(rng, c, 4);
        ++ks[d.k];
        ++bs[static_cast<int>(d.backend_index)];
    }
    double worst = 0;
    for (int k = 1; k <= 5; ++k) worst = std::max(worst, std::abs(ks[k] - n * 0.2) / std::sqrt(n * 0.2 * 0.8));
    for (int b = 0; b < 4; ++b) worst = std::max(worst, std::abs(bs[b] - n * 0.25) / std::sqrt(n * 0.25 * 0.75));
    return {worst <= 3.0, fmt("10^5 draws, worst deviation %.2f sigma over 5 chunk lengths and 4 backends", worst)};
}

// ---------------------------------------------------------------------------
// 7. Blending lowers likelihood-based detectability
// ---------------------------------------------------------------------------

struct SeedResult {
    double blended = 0, single = 0;
};

SeedResult directional_seed(std::uint64_t seed) {
    const auto lang = synth::make_language(70000 + seed);
    std::vector<BackendPtr> members;
    for (int d = 0; d < 3; ++d) {
        auto m = std::make_shared<const NgramModel>(
            NgramModel::train(synth::corpus(lang, d, 400, 10, 40, seed * 100 + static_cast<std::uint64_t>(d)),
                              NgramModel::Options{3, 0.1, true}));
        members.push_back(std::make_shared<NgramBackend>(m, "member-" + std::to_string(d)));
    }
    auto scorer_model = std::make_shared<const NgramModel>(NgramModel::train(
        synth::corpus(lang, -1, 1200, 10, 40, seed * 100 + 10), NgramModel::Options{3, 0.1, true}));
    const NgramBackend scorer(scorer_model, "surrogate");
    const auto humans = synth::corpus(lang, -1, 40, 200, 200, seed * 100 + 20);

    GenConfig cfg;
    cfg.sampling = Sampling{0.7, 10};
    cfg.seed = seed;
    const Pool pool(members);
    const WhitespaceTokenizer ws;
    std::vector<double> human_ll, blended_ll;
    std::vector<std::vector<double>> single_ll(3);
    for (std::size_t i = 0; i < humans.size(); ++i) {
        const Instance inst{"h" + std::to_string(i), Dataset::custom, humans[i], ""};
        const auto prompt = *extract_prompt(inst, ws, 30);
        human_ll.push_back(likelihood(toblend::score(scorer, ScoreRequest{humans[i]})).value);
        cfg.chunk_mode = ChunkMode::fixed(1);
        const auto blended = blend_generate(prompt, pool, cfg, inst.id);
        blended_ll.push_back(likelihood(toblend::score(scorer, ScoreRequest{blended.final_text})).value);
        for (std::size_t m = 0; m < 3; ++m) {
            cfg.chunk_mode = ChunkMode::fixed(5);
            const auto single = blend_generate(prompt, Pool(std::vector<BackendPtr>{members[m]}), cfg, inst.id);
            single_ll[m].push_back(likelihood(toblend::score(scorer, ScoreRequest{single.final_text})).value);
        }
    }
    std::vector<double> per_model;
    for (const auto& s : single_ll) per_model.push_back(auroc(s, human_ll));
    return {auroc(blended_ll, human_ll), baseline_average(per_model)};
}

Outcome directional_analog(std::string& report) {
    int lower = 0;
    std::ostringstream os;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto r = directional_seed(seed);
        lower += r.blended < r.single;
        os << fmt("      seed %2d: likelihood AUROC single-model %.4f, blended tl1 %.4f\n", static_cast<int>(seed),
                  r.single, r.blended);
    }
    report = os.str();
    return {lower >= 14, fmt("blended tl1 below single-model AUROC in %d/20 seeds (need >= 14)", lower)};
}

// ---------------------------------------------------------------------------
// 8. Instruction-tuning export counts and framing
// ---------------------------------------------------------------------------

Outcome export_parity() {
    const auto in = fixture::reference_selection();
    stubs::TempDir dir;
    fixture::write_annotations_csv(in.annotations, dir / "annotations.csv");
    const auto annotations = load_annotations(dir / "annotations.csv");
    const auto res = export_finetune(annotations, in.generations, in.humans, 5);
    std::map<std::pair<bool, std::string>, int> counts;
    const std::string head =
        "### Question: Please answer whether the given short text is generated by Artificial Intelligence models "
        "but not written from real human.\n\nThe short text is:";
    const std::string mid =
        ".\n\nPlease answer by Yes, No or Uncertain. And then explain why shortly in one or two sentences.\n\n"
        "### Answer:";
    const std::string tail =
        ". Yes means the short text is more likely to be generated by AI models but not written by real human. No "
        "means the contrary.";
    std::map<std::string, std::string> source;
    for (const auto& g : in.generations) source[g.id + "/" + g.setting] = g.text();
    for (const auto& h : in.humans) source[h.id + "/"] = h.text;
    int framed = 0;
    for (const auto& r : res.records) {
        ++counts[{r.machine, r.dataset}];
        const auto& text = source.at(r.source_id + "/" + r.setting);
        framed += r.text == head + text + mid + (r.machine ? "Yes" : "No") + tail;
    }
    const int machine = counts[{true, "squad"}] + counts[{true, "xsum"}] + counts[{true, "writing"}];
    const int human = counts[{false, "squad"}] + counts[{false, "xsum"}] + counts[{false, "writing"}];
    const bool split = counts[{true, "squad"}] == 28 && counts[{true, "xsum"}] == 7 && counts[{true, "writing"}] == 2 &&
                       counts[{false, "squad"}] == 28 && counts[{false, "xsum"}] == 7 && counts[{false, "writing"}] == 2;
    return {machine == 37 && human == 37 && split && framed == 74 && res.records.size() == 74,
            fmt("%d machine + %d human; squad %d/%d, xsum %d/%d, writing %d/%d; %d/74 byte-exact template", machine,
                human, counts[{true, "squad"}], counts[{false, "squad"}], counts[{true, "xsum"}],
                counts[{false, "xsum"}], counts[{true, "writing"}], counts[{false, "writing"}], framed)};
}

// ---------------------------------------------------------------------------
// 9. Baseline averages
// ---------------------------------------------------------------------------

Outcome baseline_arithmetic() {
    const std::vector<double> xsum{0.9922, 0.9806, 0.9881, 0.9771};
    const std::vector<double> squad{0.9990, 0.9949, 0.9956, 0.9854};
    const double x = baseline_average(xsum), s = baseline_average(squad);
    auto four = [](double v) { return std::round(v * 1e4) / 1e4; };
    return {four(x) == 0.9845 && four(s) == 0.9937,
            fmt("xsum %.6f -> %.4f (expect 0.9845), squad %.6f -> %.4f (expect 0.9937)", x, four(x), s, four(s))};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;  // 0 = no runtime bound
        std::function<Outcome()> run;
    };
    std::string analog_report;
    const std::vector<Criterion> criteria{
        {1, "stat-oracle", 5, stat_oracle},
        {2, "curvature-monte-carlo", 60, curvature_monte_carlo},
        {3, "auroc-exactness", 5, auroc_exactness},
        {4, "blend-determinism-bounds", 0, blend_determinism},
        {5, "greedy-chunk-invariance", 0, greedy_invariance},
        {6, "selection-uniformity", 0, selection_uniformity},
        {7, "directional-analog", 120, [&] { return directional_analog(analog_report); }},
        {8, "export-parity", 0, export_parity},
        {9, "baseline-arithmetic", 0, baseline_arithmetic},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.budget_s == 0 || secs < c.budget_s;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("%s %d %s: %s; %.2f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    c.budget_s > 0 ? fmt(" (limit %.0f s)", c.budget_s).c_str() : "");
        if (c.id == 7) std::fputs(analog_report.c_str(), stdout);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
