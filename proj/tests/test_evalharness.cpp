#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "carpas/evalharness.hpp"
#include "carpas/offline_provider.hpp"

using namespace carpas;
using namespace carpas::evalharness;

namespace {

// Scores 1.0 for identical normalized names and a fixed off-diagonal value
// otherwise; ignores summaries.
class NameScorer : public embed::TextSimilarityScorer {
public:
    explicit NameScorer(double off_diagonal = 0.0) : off_(off_diagonal) {}
    double score(const std::string& a, const std::string& b) override {
        const auto name = [](const std::string& t) {
            return corpus::normalize_aspect_name(t.substr(0, t.find(':')));
        };
        return name(a) == name(b) ? 1.0 : off_;
    }

private:
    double off_;
};

// Deterministic pseudo-random pairwise scorer for cross-checks.
class HashScorer : public embed::TextSimilarityScorer {
public:
    double score(const std::string& a, const std::string& b) override {
        const auto h = fnv1a64(a + "\x1f" + b) ^ fnv1a64(b + "\x1f" + a);
        return static_cast<double>(h % 10000) / 10000.0;
    }
};

std::vector<corpus::AspectEntry> entries(const std::vector<std::string>& names) {
    std::vector<corpus::AspectEntry> out;
    for (const auto& n : names) out.push_back({n, "summary of " + n});
    return out;
}

corpus::Document make_doc(const std::vector<std::string>& names) {
    corpus::Document doc;
    doc.id = "doc-1";
    doc.domain = corpus::Domain::ECT;
    doc.text = "document body";
    doc.ground_truth = entries(names);
    return doc;
}

// Exhaustive BS_w: best injective assignment via permutation enumeration.
double brute_bs_w(const std::vector<corpus::AspectEntry>& pred,
                  const std::vector<corpus::AspectEntry>& ground,
                  embed::TextSimilarityScorer& scorer) {
    const std::size_t m = pred.size(), n = ground.size();
    if (m == 0) return 0.0;
    const bool pred_small = m <= n;
    const std::size_t big = std::max(m, n);
    std::vector<std::size_t> perm(big);
    std::iota(perm.begin(), perm.end(), 0);
    double best = -1.0;
    const auto text = [](const corpus::AspectEntry& e) { return e.name + ": " + e.summary; };
    do {
        double total = 0.0;
        for (std::size_t i = 0; i < std::min(m, n); ++i) {
            const auto& p = pred_small ? pred[i] : pred[perm[i]];
            const auto& g = pred_small ? ground[perm[i]] : ground[i];
            total += scorer.score(text(p), text(g));
        }
        best = std::max(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const double denom =
        static_cast<double>(n) + std::abs(static_cast<double>(n) - static_cast<double>(m));
    return best / denom;
}

} // namespace

TEST_CASE("abs_asp_diff") {
    CHECK(abs_asp_diff(4, 4) == 0);
    CHECK(abs_asp_diff(4, 6) == 2);
    CHECK(abs_asp_diff(6, 4) == 2);
    CHECK(abs_asp_diff(0, 3) == 3);
}

TEST_CASE("weighted_bs hand cases") {
    NameScorer scorer;
    const auto ground = entries({"Revenue", "Margins", "Guidance", "Cash Flow"});

    SECTION("perfect match scores 1.0") {
        CHECK(weighted_bs(ground, ground, scorer) == Catch::Approx(1.0));
    }

    SECTION("3 of 4 matched plus 3 extras: 3 / (4 + 2) = 0.5") {
        const auto pred =
            entries({"Revenue", "Margins", "Guidance", "Extra A", "Extra B", "Extra C"});
        CHECK(weighted_bs(pred, ground, scorer) == Catch::Approx(0.5));
    }

    SECTION("missing predictions are penalized by the count term") {
        const auto pred = entries({"Revenue", "Margins"});
        // matched sum 2, denom 4 + 2 = 6
        CHECK(weighted_bs(pred, ground, scorer) == Catch::Approx(2.0 / 6.0));
    }

    SECTION("empty prediction scores 0") {
        CHECK(weighted_bs({}, ground, scorer) == 0.0);
    }

    SECTION("empty ground truth is rejected") {
        CHECK_THROWS_AS(weighted_bs(ground, {}, scorer), ValidationError);
    }
}

TEST_CASE("weighted_bs agrees with exhaustive assignment") {
    HashScorer scorer;
    Rng rng(606);
    const std::vector<std::string> pool = {"Revenue", "Margins",  "Guidance", "Cash Flow",
                                           "Capex",   "Buybacks", "Dividends"};
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = static_cast<std::size_t>(rng.between(1, 5));
        const auto n = static_cast<std::size_t>(rng.between(1, 5));
        const auto pred = entries(rng.sample(pool, m));
        const auto ground = entries(rng.sample(pool, n));
        CHECK(weighted_bs(pred, ground, scorer) ==
              Catch::Approx(brute_bs_w(pred, ground, scorer)).margin(1e-9));
    }
}

TEST_CASE("summary_scores on identical lists is perfect") {
    NameScorer scorer(0.1);
    const auto ref = entries({"Revenue", "Margins", "Guidance"});
    const auto scores = summary_scores(ref, ref, scorer);
    CHECK(scores.rouge1.f1 == Catch::Approx(1.0));
    CHECK(scores.rouge2.f1 == Catch::Approx(1.0));
    CHECK(scores.rougeL.f1 == Catch::Approx(1.0));
    CHECK(scores.similarity == Catch::Approx(1.0));
}

TEST_CASE("summary_scores aligns shuffled aspects via matching") {
    NameScorer scorer(0.1);
    const auto ref = entries({"Revenue", "Margins", "Guidance"});
    const auto shuffled = entries({"Guidance", "Revenue", "Margins"});
    const auto scores = summary_scores(ref, shuffled, scorer);
    // matched summaries line up pairwise regardless of order
    CHECK(scores.rouge1.f1 == Catch::Approx(1.0));
    CHECK(scores.rouge2.f1 == Catch::Approx(1.0));
}

TEST_CASE("summary_scores is zero for empty sides") {
    NameScorer scorer;
    const auto ref = entries({"Revenue"});
    CHECK(summary_scores(ref, {}, scorer).rouge1.f1 == 0.0);
    CHECK(summary_scores({}, ref, scorer).similarity == 0.0);
}

TEST_CASE("judge parses, clamps, and errors") {
    const auto doc = make_doc({"Revenue"});
    const auto aspects = entries({"Revenue"});
    llm::GenerationConfig cfg;

    llm::ScriptedChatProvider ok({llm::on_substring(kJudgeMarker, "factuality: 4, relevance: 5")});
    const auto scores = judge_aspects(ok, doc, aspects, cfg);
    CHECK(scores.factuality == 4);
    CHECK(scores.relevance == 5);

    llm::ScriptedChatProvider wordy({llm::on_substring(
        kJudgeMarker, "I would rate Factuality at 9 and the relevance around 0 overall.")});
    const auto clamped = judge_aspects(wordy, doc, aspects, cfg);
    CHECK(clamped.factuality == 5);
    CHECK(clamped.relevance == 1);

    int calls = 0;
    llm::ScriptedChatProvider useless(
        {[&](const std::vector<llm::ChatMessage>&) -> std::optional<std::string> {
            ++calls;
            return "no scores here";
        }});
    CHECK_THROWS_AS(judge_aspects(useless, doc, aspects, cfg), FormatError);
    CHECK(calls == 3); // initial + two re-asks

    // recovery on the re-ask
    int attempts = 0;
    llm::ScriptedChatProvider second_try(
        {[&](const std::vector<llm::ChatMessage>&) -> std::optional<std::string> {
            return ++attempts == 1 ? "hmm" : "factuality: 3, relevance: 3";
        }});
    CHECK(judge_aspects(second_try, doc, aspects, cfg).factuality == 3);
}

TEST_CASE("offline provider answers the judge prompt") {
    offline::OfflineChatProvider provider;
    const auto doc = make_doc({"Revenue"});
    const auto scores = judge_aspects(provider, doc, entries({"Revenue"}), {});
    CHECK(scores.factuality == 4);
    CHECK(scores.relevance == 5);
}

TEST_CASE("evaluate_run records all fields") {
    const auto doc = make_doc({"Revenue", "Margins", "Guidance", "Cash Flow"});
    NameScorer scorer;

    strategies::StrategyRun run;
    run.document_id = doc.id;
    run.strategy = strategies::StrategyKind::cot();
    run.guidance = strategies::GuidanceMode::aspect_llm(4);
    run.refine_steps = 0;
    run.output.entries = entries({"Revenue", "Margins"});

    const auto rec = evaluate_run(run, doc, "y2n2", scorer);
    CHECK(rec.document_id == "doc-1");
    CHECK(rec.strategy == "cot");
    CHECK(rec.guidance == "llm");
    CHECK(rec.setting == "y2n2");
    CHECK(rec.domain == "ect");
    CHECK(rec.abs_asp_diff == 2);
    CHECK(rec.bs_w == Catch::Approx(2.0 / 6.0));
    CHECK(rec.rouge1.f1 > 0.0);
    CHECK_FALSE(rec.failed);
}

TEST_CASE("failed runs score worst-case diff and zeros") {
    const auto doc = make_doc({"Revenue", "Margins", "Guidance"});
    NameScorer scorer;
    strategies::StrategyRun run;
    run.document_id = doc.id;
    run.error = "unparseable reply";
    const auto rec = evaluate_run(run, doc, "y0n2", scorer);
    CHECK(rec.failed);
    CHECK(rec.abs_asp_diff == 3);
    CHECK(rec.bs_w == 0.0);
    CHECK(rec.rouge1.f1 == 0.0);
}

TEST_CASE("aggregate computes mean and population stddev per group") {
    std::vector<EvalRecord> records;
    for (int i = 0; i < 3; ++i) {
        EvalRecord rec;
        rec.strategy = "dp";
        rec.guidance = i < 2 ? "prelim" : "llm";
        rec.setting = "y2n2";
        rec.domain = "ect";
        rec.bs_w = 0.2 * (i + 1); // prelim group: 0.2, 0.4; llm group: 0.6
        records.push_back(rec);
    }
    const auto report = aggregate(records, {"strategy", "guidance"});
    REQUIRE(report.groups.size() == 2);
    // labels sort: dp/llm before dp/prelim
    CHECK(report.groups[0].label == "dp/llm");
    CHECK(report.groups[0].count == 1);
    CHECK(report.groups[0].metrics.at("bs_w").mean == Catch::Approx(0.6));
    CHECK(report.groups[0].metrics.at("bs_w").stddev == Catch::Approx(0.0).margin(1e-12));
    CHECK(report.groups[1].label == "dp/prelim");
    CHECK(report.groups[1].metrics.at("bs_w").mean == Catch::Approx(0.3));
    CHECK(report.groups[1].metrics.at("bs_w").stddev == Catch::Approx(0.1));
    // likert absent -> no factuality stats
    CHECK(report.groups[0].metrics.find("factuality") == report.groups[0].metrics.end());

    CHECK_THROWS_AS(aggregate(records, {"nope"}), ValidationError);
}

TEST_CASE("likert scores aggregate only where present") {
    EvalRecord with, without;
    with.strategy = without.strategy = "dp";
    with.guidance = without.guidance = "prelim";
    with.setting = without.setting = "y2n2";
    with.domain = without.domain = "ect";
    with.likert = LikertScores{4, 5};
    const auto report = aggregate({with, without}, {"strategy"});
    REQUIRE(report.groups.size() == 1);
    CHECK(report.groups[0].count == 2);
    CHECK(report.groups[0].metrics.at("factuality").count == 1);
    CHECK(report.groups[0].metrics.at("factuality").mean == Catch::Approx(4.0));
    CHECK(report.groups[0].metrics.at("bs_w").count == 2);
}

TEST_CASE("record JSON round-trip") {
    EvalRecord rec;
    rec.document_id = "d";
    rec.strategy = "selfrefine";
    rec.guidance = "rm";
    rec.setting = "y4n4";
    rec.domain = "covid19pc";
    rec.abs_asp_diff = 1;
    rec.rouge1.f1 = 0.5;
    rec.rouge2.f1 = 0.25;
    rec.rougeL.f1 = 0.4;
    rec.bs_w = 0.7;
    rec.summary_similarity = 0.9;
    rec.refine_steps = 3;
    rec.likert = LikertScores{4, 5};
    const auto loaded = record_from_json(to_json(rec));
    CHECK(loaded.document_id == rec.document_id);
    CHECK(loaded.strategy == rec.strategy);
    CHECK(loaded.setting == rec.setting);
    CHECK(loaded.abs_asp_diff == rec.abs_asp_diff);
    CHECK(loaded.bs_w == rec.bs_w);
    CHECK(loaded.refine_steps == rec.refine_steps);
    REQUIRE(loaded.likert.has_value());
    CHECK(loaded.likert->factuality == 4);
    CHECK(loaded.likert->relevance == 5);
}

TEST_CASE("report export and plot data") {
    namespace fs = std::filesystem;
    EvalRecord rec;
    rec.strategy = "dp";
    rec.guidance = "prelim";
    rec.setting = "y2n2";
    rec.domain = "ect";
    rec.bs_w = 0.5;
    const auto report = aggregate({rec}, {"strategy", "guidance"});

    SECTION("json round-trips") {
        const auto path = (fs::temp_directory_path() / "carpas_test_report.json").string();
        export_report(report, "json", path);
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        const auto loaded = report_from_json(j);
        REQUIRE(loaded.groups.size() == 1);
        CHECK(loaded.groups[0].label == "dp/prelim");
        CHECK(loaded.groups[0].metrics.at("bs_w").mean == Catch::Approx(0.5));
        std::remove(path.c_str());
    }

    SECTION("csv has a header and one row per group") {
        const auto path = (fs::temp_directory_path() / "carpas_test_report.csv").string();
        export_report(report, "csv", path);
        std::ifstream in(path);
        std::string header, row;
        REQUIRE(std::getline(in, header));
        REQUIRE(std::getline(in, row));
        CHECK(header.rfind("group,count,", 0) == 0);
        CHECK(header.find("bs_w_mean") != std::string::npos);
        CHECK(row.find("\"dp/prelim\",1") != std::string::npos);
        std::remove(path.c_str());
    }

    SECTION("unknown format is rejected") {
        CHECK_THROWS_AS(export_report(report, "xml", "/tmp/x"), ConfigError);
    }

    SECTION("plot data emits one point per group") {
        const auto path = (fs::temp_directory_path() / "carpas_test_plot.json").string();
        emit_plot_data(report, "bs_w", path);
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        CHECK(j.at("metric") == "bs_w");
        REQUIRE(j.at("points").size() == 1);
        CHECK(j.at("points")[0].at("group") == "dp/prelim");
        CHECK(j.at("points")[0].at("value") == Catch::Approx(0.5));
        std::remove(path.c_str());
        CHECK_THROWS_AS(emit_plot_data(report, "nope", path), ValidationError);
    }
}
