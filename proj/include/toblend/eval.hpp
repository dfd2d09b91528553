#pragma once

// AUROC, experiment tables, baseline averaging, judge accuracy and the
// instruction-tuning export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "toblend/core.hpp"
#include "toblend/data.hpp"
#include "toblend/detect.hpp"
#include "toblend/records.hpp"
#include "toblend/wire.hpp"

namespace toblend {

struct ScoreSet {
    std::vector<double> positives;  // machine-generated class
    std::vector<double> negatives;  // human-written class
    std::string metric;
    Direction direction = Direction::higher_is_machine;
};

/// Probability that a positive outscores a negative, ties counting one half.
/// Computed from midranks; equal to the pairwise count exactly.
inline double auroc(std::span<const double> positives, std::span<const double> negatives) {
    if (positives.empty() || negatives.empty()) throw PreconditionError("auroc: both classes must be non-empty");
    struct Item {
        double v;
        bool pos;
    };
    std::vector<Item> all;
    all.reserve(positives.size() + negatives.size());
    for (double v : positives) {
        if (std::isnan(v)) throw PreconditionError("auroc: NaN score");
        all.push_back({v, true});
    }
    for (double v : negatives) {
        if (std::isnan(v)) throw PreconditionError("auroc: NaN score");
        all.push_back({v, false});
    }
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.v < b.v; });

    // Twice the rank sum of the positives, in integers: a tie group occupying
    // ranks i+1..j contributes midrank (i+1+j)/2 per member.
    std::uint64_t twice_rank_sum = 0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        std::uint64_t npos = 0;
        while (j < all.size() && all[j].v == all[i].v) npos += all[j++].pos;
        twice_rank_sum += npos * (i + 1 + j);
        i = j;
    }
    const std::uint64_t np = positives.size();
    const std::uint64_t nn = negatives.size();
    // 2U = 2R - np(np+1); U = #(p>n) + 0.5 #(p=n).
    const std::uint64_t twice_u = twice_rank_sum - np * (np + 1);
    return (static_cast<double>(twice_u) * 0.5) / static_cast<double>(np * nn);
}

inline double auroc(const ScoreSet& s) { return auroc(s.positives, s.negatives); }

inline double baseline_average(std::span<const double> per_model_aurocs) {
    if (per_model_aurocs.empty()) throw PreconditionError("baseline_average: empty list");
    return std::accumulate(per_model_aurocs.begin(), per_model_aurocs.end(), 0.0) /
           static_cast<double>(per_model_aurocs.size());
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Generation settings whose name starts with this prefix are single-model
/// references ("single:<backend_id>"); their AUROCs average into the baseline.
inline constexpr std::string_view single_model_prefix = "single:";

struct TableBuild {
    AurocTable table;
    std::vector<std::string> missing;  // one description per absent cell

    bool complete() const { return missing.empty(); }
};

/// One AUROC per (dataset, metric, setting) from human (negative) and machine
/// (positive) score records. Cells whose inputs are missing, or whose records
/// disagree on scorer or options, are left absent and listed in `missing`.
inline TableBuild build_table(const std::vector<ScoreRecord>& human, const std::vector<ScoreRecord>& machine,
                              const std::vector<std::string>& datasets, const std::vector<std::string>& metrics,
                              const std::vector<std::string>& settings) {
    TableBuild out;

    auto collect = [](const std::vector<ScoreRecord>& recs, const std::string& dataset,
                      const std::string& metric, auto&& setting_ok, std::vector<double>& values,
                      std::set<std::string>& scorers, std::set<std::string>& opts) {
        for (const auto& r : recs) {
            if (r.dataset != dataset || !setting_ok(r.setting)) continue;
            auto it = r.metrics.find(metric);
            if (it == r.metrics.end()) continue;
            values.push_back(it->second);
            scorers.insert(r.scorer);
            opts.insert(r.opts.dump());
        }
    };

    auto cell = [&](const std::string& dataset, const std::string& metric,
                    const std::string& setting) -> std::optional<double> {
        std::vector<double> pos, neg;
        std::set<std::string> scorers, opts;
        collect(human, dataset, metric, [](const std::string&) { return true; }, neg, scorers, opts);
        collect(machine, dataset, metric, [&](const std::string& s) { return s == setting; }, pos, scorers, opts);
        const std::string where = dataset + "/" + metric + "/" + setting;
        if (neg.empty()) {
            out.missing.push_back(where + ": no human scores");
            return std::nullopt;
        }
        if (pos.empty()) {
            out.missing.push_back(where + ": no machine scores");
            return std::nullopt;
        }
        if (scorers.size() > 1 || opts.size() > 1) {
            out.missing.push_back(where + ": records disagree on scorer or options");
            return std::nullopt;
        }
        return auroc(pos, neg);
    };

    std::set<std::string> single_settings;
    for (const auto& r : machine)
        if (std::string_view(r.setting).starts_with(single_model_prefix)) single_settings.insert(r.setting);

    for (const auto& d : datasets) {
        for (const auto& m : metrics) {
            for (const auto& s : settings)
                if (auto v = cell(d, m, s)) out.table.cells[{d, m, s}] = *v;

            std::vector<double> per_model;
            for (const auto& s : single_settings) {
                std::vector<double> pos, neg;
                std::set<std::string> scorers, opts;
                collect(human, d, m, [](const std::string&) { return true; }, neg, scorers, opts);
                collect(machine, d, m, [&](const std::string& x) { return x == s; }, pos, scorers, opts);
                if (pos.empty() || neg.empty() || scorers.size() > 1 || opts.size() > 1) continue;
                const double v = auroc(pos, neg);
                out.table.cells[{d, m, s}] = v;
                per_model.push_back(v);
            }
            if (!per_model.empty()) out.table.baselines[{d, m}] = baseline_average(per_model);
        }
    }
    return out;
}

inline const std::vector<std::string>& table_columns() {
    static const std::vector<std::string> cols{"dataset", "metric", "baseline", "tl1", "tl2",
                                               "tl3",     "tl4",    "tl5",      "rand", "sent"};
    return cols;
}

/// CSV with columns dataset,metric,baseline,tl1..tl5,rand,sent; absent cells are empty.
inline std::string table_csv(const AurocTable& t, const std::vector<std::string>& datasets,
                             const std::vector<std::string>& metrics) {
    std::ostringstream os;
    const auto& cols = table_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", v);
        return std::string(buf);
    };
    for (const auto& d : datasets) {
        for (const auto& m : metrics) {
            os << d << ',' << m << ',';
            if (auto it = t.baselines.find({d, m}); it != t.baselines.end()) os << fmt(it->second);
            for (const auto& s : blend_settings()) {
                os << ',';
                if (auto it = t.cells.find({d, m, s}); it != t.cells.end()) os << fmt(it->second);
            }
            os << '\n';
        }
    }
    return os.str();
}

inline json table_json(const AurocTable& t, const std::vector<std::string>& missing = {}) {
    json cells = json::array();
    for (const auto& [k, v] : t.cells)
        cells.push_back({{"dataset", std::get<0>(k)}, {"metric", std::get<1>(k)}, {"setting", std::get<2>(k)}, {"auroc", v}});
    json baselines = json::array();
    for (const auto& [k, v] : t.baselines)
        baselines.push_back({{"dataset", k.first}, {"metric", k.second}, {"auroc", v}});
    return json{{"cells", cells}, {"baselines", baselines}, {"missing", missing}};
}

inline AurocTable table_from_json(const json& j) {
    AurocTable t;
    for (const auto& c : wire::field<json>(j, "cells")) {
        const double v = wire::field<double>(c, "auroc");
        if (!(v >= 0.0 && v <= 1.0)) throw ProtocolError("AUROC cell outside [0, 1]");
        t.cells[{wire::field<std::string>(c, "dataset"), wire::field<std::string>(c, "metric"),
                 wire::field<std::string>(c, "setting")}] = v;
    }
    for (const auto& b : wire::field<json>(j, "baselines")) {
        t.baselines[{wire::field<std::string>(b, "dataset"), wire::field<std::string>(b, "metric")}] =
            wire::field<double>(b, "auroc");
    }
    return t;
}

// ---------------------------------------------------------------------------
// Judge accuracy
// ---------------------------------------------------------------------------

struct JudgedLabel {
    JudgeLabel gold = JudgeLabel::yes;
    JudgeLabel predicted = JudgeLabel::uncertain;
};

/// Fraction of predictions equal to gold; Uncertain is always wrong.
inline double judge_accuracy(std::span<const JudgedLabel> labels) {
    if (labels.empty()) throw PreconditionError("judge_accuracy: empty list");
    std::size_t correct = 0;
    for (const auto& l : labels)
        correct += l.predicted != JudgeLabel::uncertain && l.predicted == l.gold;
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Instruction-tuning export
// ---------------------------------------------------------------------------

inline std::string sft_text(std::string_view instance_text, bool machine) {
    std::string s =
        "### Question: Please answer whether the given short text is generated by Artificial "
        "Intelligence models but not written from real human.\n\nThe short text is:";
    s += instance_text;
    s += ".\n\nPlease answer by Yes, No or Uncertain. And then explain why shortly in one or two "
         "sentences.\n\n### Answer:";
    s += machine ? "Yes" : "No";
    s += ". Yes means the short text is more likely to be generated by AI models but not written by "
         "real human. No means the contrary.";
    return s;
}

struct SftRecord {
    std::string text;  // template-filled
    bool machine = false;
    std::string dataset;
    std::string source_id;
    std::string setting;  // empty for human records
};

struct SftExport {
    std::vector<SftRecord> records;
    std::vector<std::string> warnings;
};

/// Orders ids with embedded numbers numerically ("x2" < "x10").
inline bool natural_less(std::string_view a, std::string_view b) {
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const bool da = std::isdigit(static_cast<unsigned char>(a[i]));
        const bool db = std::isdigit(static_cast<unsigned char>(b[j]));
        if (da && db) {
            std::size_t ie = i, je = j;
            while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
            while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
            auto na = a.substr(i, ie - i), nb = b.substr(j, je - j);
            while (na.size() > 1 && na.front() == '0') na.remove_prefix(1);
            while (nb.size() > 1 && nb.front() == '0') nb.remove_prefix(1);
            if (na.size() != nb.size()) return na.size() < nb.size();
            if (na != nb) return na < nb;
            i = ie;
            j = je;
        } else {
            if (a[i] != b[j]) return a[i] < b[j];
            ++i;
            ++j;
        }
    }
    return a.size() - i < b.size() - j;
}

/// Selects blended generations whose mean coherence and mean fluency across
/// annotators are both >= threshold, pairs them with the same number of human
/// instances per dataset (lowest ids first), and fills the question/answer
/// template. Machine records come first, then human records.
inline SftExport export_finetune(const std::vector<AnnotationRecord>& annotations,
                                 const std::vector<GenerationRecord>& generations,
                                 const std::vector<Instance>& human_instances, int threshold = 5) {
    SftExport out;

    struct Agg {
        int n = 0, coherence = 0, fluency = 0;
    };
    std::map<std::pair<std::string, std::string>, Agg> agg;
    for (const auto& a : annotations) {
        const auto colon = a.setting.find(':');
        const auto base = colon == std::string::npos ? a.setting : a.setting.substr(colon + 1);
        if (!chunk_mode_from_setting(base)) continue;  // single-model references are not blended text
        auto& g = agg[{a.instance_id, a.setting}];
        ++g.n;
        g.coherence += a.coherence;
        g.fluency += a.fluency;
    }

    std::map<std::string, int> need;
    for (const auto& [key, g] : agg) {
        // mean >= threshold  <=>  sum >= threshold * n
        if (g.coherence < threshold * g.n || g.fluency < threshold * g.n) continue;
        const auto& [instance_id, setting] = key;
        const auto colon = setting.find(':');
        const auto pool = colon == std::string::npos ? std::string{} : setting.substr(0, colon);
        const auto base = colon == std::string::npos ? setting : setting.substr(colon + 1);
        const GenerationRecord* match = nullptr;
        for (const auto& gen : generations) {
            if (gen.id != instance_id || gen.setting != base) continue;
            if (!pool.empty() && gen.pool != pool) continue;
            if (match != nullptr)
                throw PreconditionError("annotation (" + instance_id + ", " + setting +
                                        ") matches more than one generation; qualify the setting with its pool");
            match = &gen;
        }
        if (match == nullptr)
            throw PreconditionError("annotation (" + instance_id + ", " + setting + ") has no generation");
        const std::string dataset(to_string(dataset_from_string(match->dataset)));
        out.records.push_back({sft_text(match->text(), true), true, dataset, instance_id, setting});
        ++need[dataset];
    }
    if (out.records.empty()) {
        out.warnings.push_back("no generation reaches mean coherence and fluency >= " + std::to_string(threshold));
        return out;
    }

    std::map<std::string, std::vector<const Instance*>> by_dataset;
    for (const auto& h : human_instances) by_dataset[std::string(to_string(h.dataset))].push_back(&h);
    std::string shortfall;
    for (const auto& [dataset, n] : need) {
        const auto have = by_dataset[dataset].size();
        if (have < static_cast<std::size_t>(n))
            shortfall += " " + dataset + ": need " + std::to_string(n) + ", have " + std::to_string(have) + ";";
    }
    if (!shortfall.empty()) throw Error("insufficient human instances:" + shortfall);

    for (const auto& [dataset, n] : need) {
        auto& pool = by_dataset[dataset];
        std::sort(pool.begin(), pool.end(), [](const Instance* a, const Instance* b) { return natural_less(a->id, b->id); });
        for (int i = 0; i < n; ++i) {
            const auto* h = pool[static_cast<std::size_t>(i)];
            out.records.push_back({sft_text(h->text, false), false, dataset, h->id, {}});
        }
    }
    return out;
}

}  // namespace toblend
