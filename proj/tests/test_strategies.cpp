#include <catch2/catch_amalgamated.hpp>

#include "carpas/offline_provider.hpp"
#include "carpas/strategies.hpp"

using namespace carpas;
using namespace carpas::strategies;

namespace {

corpus::Document make_doc() {
    corpus::Document doc;
    doc.id = "doc-1";
    doc.domain = corpus::Domain::ECT;
    doc.text = "### Revenue\nRevenue grew.\n### Margins\nMargins expanded.\n";
    doc.ground_truth = {{"Revenue", "Revenue grew."}, {"Margins", "Margins expanded."}};
    return doc;
}

const std::vector<std::string> kProvided{"Revenue", "Margins", "Dividends"};

llm::GenerationConfig config() { return {}; }

} // namespace

TEST_CASE("guided prompt carries the count-guidance sentence") {
    const auto doc = make_doc();
    const auto guided = build_guided_prompt(doc, kProvided, GuidanceMode::aspect_llm(4));
    CHECK(guided.back().content.find(
              "This document likely contains around 4 aspects. Please identify the 4 most "
              "relevant aspects and provide a concise summary for each.") != std::string::npos);

    const auto plain = build_guided_prompt(doc, kProvided, GuidanceMode::preliminary());
    CHECK(plain.back().content.find("likely contains around") == std::string::npos);
    CHECK(plain.back().content.find("- Revenue\n- Margins\n- Dividends\n") != std::string::npos);
    CHECK(plain.back().content.find(doc.text) != std::string::npos);

    CHECK_THROWS_AS(build_guided_prompt(doc, {}, GuidanceMode::preliminary()), ValidationError);
}

TEST_CASE("direct prompting with the offline provider") {
    offline::OfflineChatProvider provider;
    const auto doc = make_doc();

    SECTION("preliminary mode complies with the provided count") {
        const auto run = run_dp(provider, doc, kProvided, GuidanceMode::preliminary(), config());
        REQUIRE_FALSE(run.error.has_value());
        CHECK(run.output.size() == kProvided.size());
        CHECK(run.refine_steps == 0);
        CHECK(run.reasoning_traces.empty());
        CHECK(run.transcript.size() == 1);
        CHECK(run.usage.prompt_tokens > 0);
    }

    SECTION("guided mode obeys the predicted count") {
        const auto run = run_dp(provider, doc, kProvided, GuidanceMode::aspect_llm(2), config());
        REQUIRE_FALSE(run.error.has_value());
        CHECK(run.output.size() == 2);
    }
}

TEST_CASE("chain-of-thought captures the reasoning trace") {
    offline::OfflineChatProvider provider;
    const auto run =
        run_cot(provider, make_doc(), kProvided, GuidanceMode::aspect_rm(2), config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(run.output.size() == 2);
    REQUIRE(run.reasoning_traces.size() == 1);
    CHECK(run.reasoning_traces[0].find("Reasoning") != std::string::npos);
}

TEST_CASE("parse re-asks recover from one malformed reply") {
    int asked = 0;
    llm::ScriptedChatProvider provider({[&](const std::vector<llm::ChatMessage>& messages)
                                            -> std::optional<std::string> {
        if (messages.back().content.find(kRefineTaskMarker) == std::string::npos &&
            messages.back().content.find("could not be parsed") == std::string::npos)
            return std::nullopt;
        return ++asked == 1 ? "garbled reply without an array"
                            : R"([{"aspect": "Revenue", "summary": "grew"}])";
    }});
    const auto run =
        run_dp(provider, make_doc(), kProvided, GuidanceMode::preliminary(), config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(asked == 2);
    CHECK(run.output.size() == 1);
    CHECK(run.transcript.size() == 2);
}

TEST_CASE("persistently malformed replies surface as a run error") {
    llm::ScriptedChatProvider provider(
        {[](const std::vector<llm::ChatMessage>&) -> std::optional<std::string> {
            return "never valid";
        }});
    const auto run =
        run_dp(provider, make_doc(), kProvided, GuidanceMode::preliminary(), config());
    REQUIRE(run.error.has_value());
    CHECK(run.output.size() == 0);
    CHECK(run.transcript.size() == 3); // initial ask + 2 re-asks
}

TEST_CASE("cot-sc samples k paths and selects by index") {
    offline::OfflineChatProvider provider;
    const auto run = run_cot_sc(provider, make_doc(), kProvided, GuidanceMode::aspect_llm(2), 5,
                                config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(run.output.size() == 2);
    CHECK(run.reasoning_traces.size() == 5);
    CHECK(run.transcript.size() == 6); // 5 paths + 1 selection
    CHECK_FALSE(run.flagged);
    CHECK_THROWS_AS(run_cot_sc(provider, make_doc(), kProvided, GuidanceMode::preliminary(), 1,
                               config()),
                    ValidationError);
}

TEST_CASE("cot-sc falls back to the modal count when selection is unusable") {
    int path = 0;
    llm::ScriptedChatProvider provider({
        llm::on_substring(kSelectionMarker, "none of them"),
        llm::on_substring(kRefineTaskMarker,
                          [&](const std::string&) {
                              // sizes 1, 2, 2 -> modal count 2, earliest is path 2
                              const int size = (++path == 1) ? 1 : 2;
                              std::string marker =
                                  "path" + std::to_string(path) + "marker";
                              return offline::aspect_array_reply({marker}, size);
                          }),
    });
    const auto run = run_cot_sc(provider, make_doc(), kProvided, GuidanceMode::preliminary(), 3,
                                config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(run.flagged);
    CHECK(run.output.size() == 2);
    CHECK(run.output.entries[0].name == "path2marker");
}

TEST_CASE("self-refine accepts immediately with the offline provider") {
    offline::OfflineChatProvider provider;
    const auto run = run_self_refine(provider, make_doc(), kProvided,
                                     GuidanceMode::preliminary(), 16, config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(run.refine_steps == 1);
    CHECK(run.output.size() == kProvided.size());
    CHECK_FALSE(run.flagged);
}

TEST_CASE("self-refine loops refine then accept") {
    int evaluator_calls = 0;
    llm::ScriptedChatProvider provider({
        llm::on_substring(kEvaluatorMarker,
                          [&](const std::string&) {
                              return ++evaluator_calls == 1
                                         ? "REFINE: drop the Dividends aspect."
                                         : "ACCEPT";
                          }),
        llm::on_substring(kRefinerMarker, R"(["Revenue", "Margins"])"),
        llm::on_substring(kSummarizerMarker,
                          [](const std::string& prompt) {
                              const auto aspects = offline::extract_aspect_list(prompt);
                              return offline::aspect_array_reply(
                                  aspects, static_cast<int>(aspects.size()));
                          }),
    });
    const auto run = run_self_refine(provider, make_doc(), kProvided,
                                     GuidanceMode::preliminary(), 16, config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(run.refine_steps == 2);
    CHECK(run.output.size() == 2);
    CHECK(run.output.entries[0].name == "Revenue");
    CHECK_FALSE(run.flagged);
}

TEST_CASE("self-refine stops at the iteration cap") {
    int evaluator_calls = 0;
    llm::ScriptedChatProvider provider({
        llm::on_substring(kEvaluatorMarker,
                          [&](const std::string&) {
                              ++evaluator_calls;
                              return std::string("REFINE: still not right.");
                          }),
        llm::on_substring(kRefinerMarker, R"(["Revenue", "Margins"])"),
        llm::on_substring(kSummarizerMarker,
                          [](const std::string& prompt) {
                              const auto aspects = offline::extract_aspect_list(prompt);
                              return offline::aspect_array_reply(
                                  aspects, static_cast<int>(aspects.size()));
                          }),
    });
    const auto run = run_self_refine(provider, make_doc(), kProvided,
                                     GuidanceMode::preliminary(), 16, config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(run.refine_steps == 16);
    CHECK(evaluator_calls == 16);
    CHECK(run.output.size() == 2);
}

TEST_CASE("self-refine treats an undecidable evaluator as accept and flags") {
    llm::ScriptedChatProvider provider({
        llm::on_substring(kEvaluatorMarker, "maybe?"),
        llm::on_substring("Answer again", "still unsure"),
        llm::on_substring(kSummarizerMarker,
                          [](const std::string& prompt) {
                              const auto aspects = offline::extract_aspect_list(prompt);
                              return offline::aspect_array_reply(
                                  aspects, static_cast<int>(aspects.size()));
                          }),
    });
    const auto run = run_self_refine(provider, make_doc(), kProvided,
                                     GuidanceMode::preliminary(), 16, config());
    REQUIRE_FALSE(run.error.has_value());
    CHECK(run.flagged);
    CHECK(run.refine_steps == 1);
    CHECK(run.output.size() == kProvided.size());
}

TEST_CASE("run_strategy dispatches all four strategies") {
    offline::OfflineChatProvider provider;
    const auto doc = make_doc();
    for (const auto& strategy : {StrategyKind::dp(), StrategyKind::cot(), StrategyKind::cot_sc(),
                                 StrategyKind::self_refine()}) {
        const auto run = run_strategy(provider, doc, kProvided, GuidanceMode::aspect_llm(2),
                                      strategy, config());
        INFO(strategy.name());
        REQUIRE_FALSE(run.error.has_value());
        CHECK(run.output.size() == 2);
        CHECK(run.strategy.name() == strategy.name());
    }
}

TEST_CASE("resolve_guidance") {
    offline::OfflineChatProvider chat;
    const auto doc = make_doc(); // two "### " sections

    SECTION("preliminary passes through") {
        const auto g = resolve_guidance(GuidanceMode::preliminary(), doc, nullptr, nullptr,
                                        nullptr, config());
        CHECK(g.kind == GuidanceMode::Kind::Preliminary);
        CHECK(g.n_pred == 0);
    }

    SECTION("aspect-llm counts via the chat provider") {
        const auto g =
            resolve_guidance(GuidanceMode::aspect_llm(), doc, &chat, nullptr, nullptr, config());
        CHECK(g.kind == GuidanceMode::Kind::AspectLLM);
        CHECK(g.n_pred == 2);
    }

    SECTION("aspect-rm predicts via the head") {
        Rng rng(3);
        auto head = regressor::make_head(16, rng);
        std::fill(head.W1.begin(), head.W1.end(), 0.0);
        std::fill(head.W2.begin(), head.W2.end(), 0.0);
        head.b2 = 6.2;
        embed::MockEmbeddingProvider embedder(1, 16);
        const auto g = resolve_guidance(GuidanceMode::aspect_rm(), doc, nullptr, &head,
                                        &embedder, config());
        CHECK(g.kind == GuidanceMode::Kind::AspectRM);
        CHECK(g.n_pred == 6);
    }

    SECTION("missing dependencies are rejected") {
        CHECK_THROWS_AS(resolve_guidance(GuidanceMode::aspect_llm(), doc, nullptr, nullptr,
                                         nullptr, config()),
                        ValidationError);
        CHECK_THROWS_AS(resolve_guidance(GuidanceMode::aspect_rm(), doc, &chat, nullptr, nullptr,
                                         config()),
                        ValidationError);
    }
}

TEST_CASE("compliance versus obedience mock behaviors") {
    const auto doc = make_doc();
    llm::ScriptedChatProvider compliant({offline::compliance_rule()});
    llm::ScriptedChatProvider obedient({offline::obedient_rule()});

    // The compliant model ignores guidance and mirrors the provided count.
    const auto c =
        run_dp(compliant, doc, kProvided, GuidanceMode::aspect_llm(2), config());
    CHECK(c.output.size() == kProvided.size());

    // The obedient model follows the guidance sentence instead.
    const auto o = run_dp(obedient, doc, kProvided, GuidanceMode::aspect_llm(2), config());
    CHECK(o.output.size() == 2);
    const auto o2 = run_dp(obedient, doc, kProvided, GuidanceMode::preliminary(), config());
    CHECK(o2.output.size() == kProvided.size());
}

TEST_CASE("avg_step") {
    StrategyRun a, b;
    a.strategy = StrategyKind::self_refine();
    a.refine_steps = 1;
    b.strategy = StrategyKind::self_refine();
    b.refine_steps = 4;
    CHECK(avg_step({a, b}) == Catch::Approx(2.5));
    CHECK_THROWS_AS(avg_step({}), ValidationError);
    b.strategy = StrategyKind::dp();
    CHECK_THROWS_AS(avg_step({a, b}), ValidationError);
}

TEST_CASE("strategy run JSON round-trip") {
    offline::OfflineChatProvider provider;
    auto run = run_strategy(provider, make_doc(), kProvided, GuidanceMode::aspect_llm(2),
                            StrategyKind::cot(), config());
    run.error = std::nullopt;
    const auto loaded = run_from_json(to_json(run));
    CHECK(loaded.document_id == run.document_id);
    CHECK(loaded.guidance.kind == run.guidance.kind);
    CHECK(loaded.guidance.n_pred == run.guidance.n_pred);
    CHECK(loaded.strategy.kind == run.strategy.kind);
    REQUIRE(loaded.output.size() == run.output.size());
    for (std::size_t i = 0; i < run.output.size(); ++i) {
        CHECK(loaded.output.entries[i].name == run.output.entries[i].name);
        CHECK(loaded.output.entries[i].summary == run.output.entries[i].summary);
    }
    CHECK(loaded.refine_steps == run.refine_steps);
    CHECK(loaded.usage.prompt_tokens == run.usage.prompt_tokens);
    CHECK(loaded.flagged == run.flagged);

    // redaction drops the transcript but keeps everything else
    const auto redacted = to_json(run, /*redact_transcript=*/true);
    CHECK_FALSE(redacted.contains("transcript"));
    CHECK(to_json(run).contains("transcript"));
}
