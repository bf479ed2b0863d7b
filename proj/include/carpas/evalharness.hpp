#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

#include "carpas/corpus.hpp"
#include "carpas/errors.hpp"
#include "carpas/llm.hpp"
#include "carpas/matching.hpp"
#include "carpas/strategies.hpp"
#include "carpas/textmetrics.hpp"

namespace carpas::evalharness {

struct LikertScores {
    int factuality = 0; // 1..5
    int relevance = 0;  // 1..5
};

struct EvalRecord {
    std::string document_id;
    std::string strategy;
    std::string guidance;
    std::string setting;
    std::string domain;
    int abs_asp_diff = 0;
    textmetrics::PRF rouge1, rouge2, rougeL;
    double bs_w = 0.0;
    double summary_similarity = 0.0;
    std::optional<LikertScores> likert;
    int refine_steps = 0;
    bool failed = false; // strategy run failed; zeros recorded
};

inline int abs_asp_diff(std::size_t reference_count, std::size_t generated_count) {
    return static_cast<int>(reference_count > generated_count ? reference_count - generated_count
                                                              : generated_count - reference_count);
}

namespace detail {

inline std::string aspect_text(const corpus::AspectEntry& e) {
    return e.name + ": " + e.summary;
}

// Pairwise scorer matrix (pred rows x ground cols) and its maximizing
// assignment.
inline matching::Assignment match_aspects(const std::vector<corpus::AspectEntry>& pred,
                                          const std::vector<corpus::AspectEntry>& ground,
                                          embed::TextSimilarityScorer& scorer) {
    matching::ScoreMatrix matrix;
    matrix.rows = pred.size();
    matrix.cols = ground.size();
    matrix.scores.resize(matrix.rows * matrix.cols);
    for (std::size_t r = 0; r < matrix.rows; ++r)
        for (std::size_t c = 0; c < matrix.cols; ++c)
            matrix.scores[r * matrix.cols + c] =
                scorer.score(aspect_text(pred[r]), aspect_text(ground[c]));
    return matching::optimal_assignment(matrix, matching::Objective::Maximize);
}

} // namespace detail

// Count-penalized similarity: Hungarian-matched pairwise score sum divided by
// n + |n - m|, with m predicted and n ground-truth aspects.
inline double weighted_bs(const std::vector<corpus::AspectEntry>& pred,
                          const std::vector<corpus::AspectEntry>& ground,
                          embed::TextSimilarityScorer& scorer) {
    const std::size_t m = pred.size(), n = ground.size();
    if (n == 0) throw ValidationError("weighted_bs: no ground-truth aspects");
    const double denom = static_cast<double>(n) +
                         std::abs(static_cast<double>(n) - static_cast<double>(m));
    if (m == 0) return 0.0;
    const auto assignment = detail::match_aspects(pred, ground, scorer);
    return assignment.total / denom;
}

struct SummaryScores {
    textmetrics::PRF rouge1, rouge2, rougeL;
    double similarity = 0.0;
};

// Hungarian-matches aspects, concatenates matched summaries in reference
// order on both sides, and scores the concatenations.
inline SummaryScores summary_scores(const std::vector<corpus::AspectEntry>& reference,
                                    const std::vector<corpus::AspectEntry>& generated,
                                    embed::TextSimilarityScorer& scorer) {
    SummaryScores out;
    if (generated.empty() || reference.empty()) return out;
    auto assignment = detail::match_aspects(generated, reference, scorer);
    std::sort(assignment.pairs.begin(), assignment.pairs.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    std::string gen_concat, ref_concat;
    for (const auto& [row, col] : assignment.pairs) {
        gen_concat += generated[row].summary + " ";
        ref_concat += reference[col].summary + " ";
    }
    const auto gen_tokens = textmetrics::tokenize(gen_concat);
    const auto ref_tokens = textmetrics::tokenize(ref_concat);
    out.rouge1 = textmetrics::rouge_n(gen_tokens, ref_tokens, 1);
    out.rouge2 = textmetrics::rouge_n(gen_tokens, ref_tokens, 2);
    out.rougeL = textmetrics::rouge_l(gen_tokens, ref_tokens);
    out.similarity = scorer.score(gen_concat, ref_concat);
    return out;
}

inline constexpr const char* kJudgeMarker = "Rate the aspect list on a 1-5 Likert scale";

// LLM-judge factuality/relevance on a 1-5 scale; two re-asks, then a format
// error the caller may record as "judging failed".
inline LikertScores judge_aspects(llm::ChatProvider& judge, const corpus::Document& doc,
                                  const std::vector<corpus::AspectEntry>& aspects,
                                  const llm::GenerationConfig& config,
                                  const embed::RetryPolicy& retry = {}) {
    std::string aspect_list;
    for (const auto& a : aspects) aspect_list += "- " + a.name + ": " + a.summary + "\n";
    std::vector<llm::ChatMessage> messages{
        {llm::Role::System, "You judge aspect lists against source documents."},
        {llm::Role::User,
         std::string(kJudgeMarker) +
             ": how factual is it with respect to the document, and how relevant are the "
             "aspects? Reply exactly as \"factuality: <1-5>, relevance: <1-5>\".\n\nDocument:\n" +
             doc.text + "\n\nAspect list:\n" + aspect_list}};

    static const std::regex fact_re("factuality[^0-9]*([0-9]+)", std::regex::icase);
    static const std::regex rel_re("relevance[^0-9]*([0-9]+)", std::regex::icase);
    for (int attempt = 0; attempt <= 2; ++attempt) {
        const auto reply = llm::complete_with_retry(judge, messages, config, retry).text;
        std::smatch fm, rm;
        if (std::regex_search(reply, fm, fact_re) && std::regex_search(reply, rm, rel_re)) {
            LikertScores scores;
            scores.factuality = std::clamp(std::stoi(fm[1].str()), 1, 5);
            scores.relevance = std::clamp(std::stoi(rm[1].str()), 1, 5);
            return scores;
        }
        messages.push_back({llm::Role::Assistant, reply});
        messages.push_back({llm::Role::User,
                            "Reply exactly as \"factuality: <1-5>, relevance: <1-5>\"."});
    }
    throw FormatError("judge reply lacks factuality/relevance scores for document " + doc.id);
}

// Full per-run metric bundle. A failed run scores abs_asp_diff = |reference|
// and zeros elsewhere, flagged, so aggregates keep failures visible.
inline EvalRecord evaluate_run(const strategies::StrategyRun& run, const corpus::Document& doc,
                               const std::string& setting, embed::TextSimilarityScorer& scorer) {
    EvalRecord rec;
    rec.document_id = doc.id;
    rec.strategy = run.strategy.name();
    rec.guidance = run.guidance.name();
    rec.setting = setting;
    rec.domain = corpus::domain_name(doc.domain);
    rec.refine_steps = run.refine_steps;
    if (run.error || run.output.entries.empty()) {
        rec.failed = true;
        rec.abs_asp_diff = static_cast<int>(doc.ground_truth.size());
        return rec;
    }
    rec.abs_asp_diff = abs_asp_diff(doc.ground_truth.size(), run.output.entries.size());
    rec.bs_w = weighted_bs(run.output.entries, doc.ground_truth, scorer);
    const auto scores = summary_scores(doc.ground_truth, run.output.entries, scorer);
    rec.rouge1 = scores.rouge1;
    rec.rouge2 = scores.rouge2;
    rec.rougeL = scores.rougeL;
    rec.summary_similarity = scores.similarity;
    return rec;
}

// --- aggregation ------------------------------------------------------------

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {
        "abs_asp_diff", "rouge1_f1", "rouge2_f1", "rougeL_f1",
        "bs_w",         "summary_similarity", "factuality", "relevance", "refine_steps"};
    return names;
}

inline std::optional<double> metric_value(const EvalRecord& rec, const std::string& metric) {
    if (metric == "abs_asp_diff") return rec.abs_asp_diff;
    if (metric == "rouge1_f1") return rec.rouge1.f1;
    if (metric == "rouge2_f1") return rec.rouge2.f1;
    if (metric == "rougeL_f1") return rec.rougeL.f1;
    if (metric == "bs_w") return rec.bs_w;
    if (metric == "summary_similarity") return rec.summary_similarity;
    if (metric == "factuality")
        return rec.likert ? std::optional<double>(rec.likert->factuality) : std::nullopt;
    if (metric == "relevance")
        return rec.likert ? std::optional<double>(rec.likert->relevance) : std::nullopt;
    if (metric == "refine_steps") return rec.refine_steps;
    throw ValidationError("unknown metric: " + metric);
}

struct MetricStats {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0; // population
};

struct Group {
    std::string label; // joined key values
    std::size_t count = 0;
    std::map<std::string, MetricStats> metrics;
};

struct AggregateReport {
    std::vector<std::string> group_by; // e.g. {"strategy", "guidance"}
    std::vector<Group> groups;         // sorted by label
};

inline std::string group_key_value(const EvalRecord& rec, const std::string& key) {
    if (key == "strategy") return rec.strategy;
    if (key == "guidance") return rec.guidance;
    if (key == "setting") return rec.setting;
    if (key == "domain") return rec.domain;
    throw ValidationError("unknown group-by key: " + key);
}

inline AggregateReport aggregate(const std::vector<EvalRecord>& records,
                                 const std::vector<std::string>& group_by) {
    struct Accum {
        std::size_t records = 0;
        std::map<std::string, std::pair<std::size_t, std::pair<double, double>>> sums;
    };
    std::map<std::string, Accum> buckets;
    for (const auto& rec : records) {
        std::string label;
        for (const auto& key : group_by) {
            if (!label.empty()) label += "/";
            label += group_key_value(rec, key);
        }
        auto& acc = buckets[label];
        acc.records += 1;
        for (const auto& metric : metric_names()) {
            const auto v = metric_value(rec, metric);
            if (!v) continue;
            auto& [count, sums] = acc.sums[metric];
            count += 1;
            sums.first += *v;
            sums.second += *v * *v;
        }
    }
    AggregateReport report;
    report.group_by = group_by;
    for (const auto& [label, acc] : buckets) {
        Group g;
        g.label = label;
        g.count = acc.records;
        for (const auto& [metric, data] : acc.sums) {
            const auto& [count, sums] = data;
            MetricStats stats;
            stats.count = count;
            stats.mean = sums.first / static_cast<double>(count);
            const double var =
                std::max(0.0, sums.second / static_cast<double>(count) - stats.mean * stats.mean);
            stats.stddev = std::sqrt(var);
            g.metrics[metric] = stats;
        }
        report.groups.push_back(std::move(g));
    }
    return report;
}

// --- serialization ----------------------------------------------------------

inline nlohmann::json to_json(const EvalRecord& rec) {
    nlohmann::json j{{"schema_version", corpus::kSchemaVersion},
                     {"document_id", rec.document_id},
                     {"strategy", rec.strategy},
                     {"guidance", rec.guidance},
                     {"setting", rec.setting},
                     {"domain", rec.domain},
                     {"abs_asp_diff", rec.abs_asp_diff},
                     {"rouge1_f1", rec.rouge1.f1},
                     {"rouge2_f1", rec.rouge2.f1},
                     {"rougeL_f1", rec.rougeL.f1},
                     {"bs_w", rec.bs_w},
                     {"summary_similarity", rec.summary_similarity},
                     {"refine_steps", rec.refine_steps},
                     {"failed", rec.failed}};
    if (rec.likert) {
        j["factuality"] = rec.likert->factuality;
        j["relevance"] = rec.likert->relevance;
    }
    return j;
}

inline EvalRecord record_from_json(const nlohmann::json& j) {
    EvalRecord rec;
    rec.document_id = j.at("document_id").get<std::string>();
    rec.strategy = j.at("strategy").get<std::string>();
    rec.guidance = j.at("guidance").get<std::string>();
    rec.setting = j.at("setting").get<std::string>();
    rec.domain = j.at("domain").get<std::string>();
    rec.abs_asp_diff = j.at("abs_asp_diff").get<int>();
    rec.rouge1.f1 = j.at("rouge1_f1").get<double>();
    rec.rouge2.f1 = j.at("rouge2_f1").get<double>();
    rec.rougeL.f1 = j.at("rougeL_f1").get<double>();
    rec.bs_w = j.at("bs_w").get<double>();
    rec.summary_similarity = j.at("summary_similarity").get<double>();
    rec.refine_steps = j.at("refine_steps").get<int>();
    rec.failed = j.at("failed").get<bool>();
    if (j.contains("factuality"))
        rec.likert = LikertScores{j.at("factuality").get<int>(), j.at("relevance").get<int>()};
    return rec;
}

inline nlohmann::json report_to_json(const AggregateReport& report) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : report.groups) {
        nlohmann::json metrics;
        for (const auto& [name, stats] : g.metrics)
            metrics[name] = {{"count", stats.count}, {"mean", stats.mean},
                             {"stddev", stats.stddev}};
        groups.push_back({{"label", g.label}, {"count", g.count}, {"metrics", metrics}});
    }
    return {{"schema_version", corpus::kSchemaVersion},
            {"group_by", report.group_by},
            {"groups", groups}};
}

inline AggregateReport report_from_json(const nlohmann::json& j) {
    AggregateReport report;
    report.group_by = j.at("group_by").get<std::vector<std::string>>();
    for (const auto& gj : j.at("groups")) {
        Group g;
        g.label = gj.at("label").get<std::string>();
        g.count = gj.at("count").get<std::size_t>();
        for (const auto& [name, stats] : gj.at("metrics").items()) {
            g.metrics[name] = {stats.at("count").get<std::size_t>(),
                               stats.at("mean").get<double>(),
                               stats.at("stddev").get<double>()};
        }
        report.groups.push_back(std::move(g));
    }
    return report;
}

inline void export_report(const AggregateReport& report, const std::string& format,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    if (format == "json") {
        out << report_to_json(report).dump(2) << "\n";
    } else if (format == "csv") {
        out << "group,count";
        for (const auto& metric : metric_names()) out << "," << metric << "_mean," << metric
                                                      << "_stddev";
        out << "\n";
        for (const auto& g : report.groups) {
            out << "\"" << g.label << "\"," << g.count;
            for (const auto& metric : metric_names()) {
                auto it = g.metrics.find(metric);
                if (it == g.metrics.end()) out << ",,";
                else out << "," << it->second.mean << "," << it->second.stddev;
            }
            out << "\n";
        }
    } else {
        throw ConfigError("unknown report format: " + format);
    }
    if (!out) throw ConfigError("write failed: " + path);
}

// Bar-chart-shaped data for one metric: {label, value, stddev} per group.
inline void emit_plot_data(const AggregateReport& report, const std::string& metric,
                           const std::string& path) {
    const auto& known = metric_names();
    if (std::find(known.begin(), known.end(), metric) == known.end())
        throw ValidationError("unknown metric: " + metric);
    nlohmann::json points = nlohmann::json::array();
    for (const auto& g : report.groups) {
        auto it = g.metrics.find(metric);
        if (it == g.metrics.end()) continue;
        points.push_back({{"group", g.label},
                          {"value", it->second.mean},
                          {"stddev", it->second.stddev}});
    }
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << nlohmann::json{{"metric", metric}, {"points", points}}.dump(2) << "\n";
}

} // namespace carpas::evalharness
