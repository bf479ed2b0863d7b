#pragma once

#include <chrono>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "carpas/corpus.hpp"
#include "carpas/errors.hpp"
#include "carpas/llm.hpp"
#include "carpas/regressor.hpp"

namespace carpas::strategies {

struct GuidanceMode {
    enum class Kind { Preliminary, AspectLLM, AspectRM };
    Kind kind = Kind::Preliminary;
    // Resolved predicted aspect count; 0 until resolve_guidance runs.
    int n_pred = 0;

    static GuidanceMode preliminary() { return {Kind::Preliminary, 0}; }
    static GuidanceMode aspect_llm(int n = 0) { return {Kind::AspectLLM, n}; }
    static GuidanceMode aspect_rm(int n = 0) { return {Kind::AspectRM, n}; }

    std::string name() const {
        switch (kind) {
            case Kind::Preliminary: return "prelim";
            case Kind::AspectLLM: return "llm";
            case Kind::AspectRM: return "rm";
        }
        return "prelim";
    }
};

struct StrategyKind {
    enum class Kind { DP, CoT, CoTSC, SelfRefine };
    Kind kind = Kind::DP;
    int paths = 5;           // CoT-SC sample count
    int max_iterations = 16; // Self-Refine evaluator cap

    static StrategyKind dp() { return {Kind::DP}; }
    static StrategyKind cot() { return {Kind::CoT}; }
    static StrategyKind cot_sc(int k = 5) { return {Kind::CoTSC, k}; }
    static StrategyKind self_refine(int cap = 16) { return {Kind::SelfRefine, 5, cap}; }

    std::string name() const {
        switch (kind) {
            case Kind::DP: return "dp";
            case Kind::CoT: return "cot";
            case Kind::CoTSC: return "cotsc";
            case Kind::SelfRefine: return "selfrefine";
        }
        return "dp";
    }
};

struct Exchange {
    std::string prompt;
    std::string reply;
};

struct StrategyRun {
    std::string document_id;
    GuidanceMode guidance;
    StrategyKind strategy;
    llm::AspectOutput output;
    std::vector<std::string> reasoning_traces;
    int refine_steps = 0;
    llm::TokenUsage usage;
    double wall_time_ms = 0.0;
    bool flagged = false;          // fallback or lenient handling was applied
    std::optional<std::string> error; // set when the strategy failed outright
    std::vector<Exchange> transcript;
};

// Prompt fragments shared with scripted providers and tests.
inline constexpr const char* kSchemaInstruction =
    "Respond with a JSON array of objects, one per aspect, each of the form "
    "{\"aspect\": \"<name>\", \"summary\": \"<summary>\"}.";
inline constexpr const char* kRefineTaskMarker = "Refine the provided aspects";
inline constexpr const char* kCotInstruction =
    "First write a step-by-step explanation of your reasoning for refining the provided aspects "
    "(why specific aspects are retained, modified, removed, or added), then output the final "
    "JSON array.";
inline constexpr const char* kSelectionMarker = "select the most coherent and logical";
inline constexpr const char* kEvaluatorMarker = "Reply ACCEPT if the aspect list needs no change";
inline constexpr const char* kRefinerMarker = "Output the revised aspect-name list";
inline constexpr const char* kSummarizerMarker = "Write a concise summary for each aspect";

inline std::string guidance_sentence(int n_pred) {
    const std::string n = std::to_string(n_pred);
    return "This document likely contains around " + n + " aspects. Please identify the " + n +
           " most relevant aspects and provide a concise summary for each.";
}

inline std::string render_aspect_list(const std::vector<std::string>& aspects) {
    std::string out;
    for (const auto& a : aspects) out += "- " + a + "\n";
    return out;
}

// Core refinement prompt; guidance modes append the count-guidance sentence.
inline std::vector<llm::ChatMessage> build_guided_prompt(
    const corpus::Document& doc, const std::vector<std::string>& provided_aspects,
    const GuidanceMode& guidance, bool chain_of_thought = false) {
    if (provided_aspects.empty())
        throw ValidationError("build_guided_prompt: no provided aspects");
    std::string user;
    user += std::string(kRefineTaskMarker) +
            " so they match the document content: remove irrelevant aspects, add missing ones, "
            "and then write an aspect-based summary for each refined aspect.\n\n";
    user += "Document:\n" + doc.text + "\n\n";
    user += "Provided aspects:\n" + render_aspect_list(provided_aspects) + "\n";
    if (guidance.kind != GuidanceMode::Kind::Preliminary)
        user += guidance_sentence(guidance.n_pred) + "\n\n";
    if (chain_of_thought) user += std::string(kCotInstruction) + "\n";
    user += kSchemaInstruction;
    return {{llm::Role::System,
             "You are an expert analyst producing aspect-based summaries."},
            {llm::Role::User, user}};
}

namespace detail {

class Session {
public:
    Session(llm::ChatProvider& provider, const llm::GenerationConfig& config,
            const embed::RetryPolicy& retry, StrategyRun& run)
        : provider_(provider), config_(config), retry_(retry), run_(run) {}

    std::string ask(std::vector<llm::ChatMessage> messages) {
        const llm::ChatReply reply =
            llm::complete_with_retry(provider_, messages, config_, retry_);
        run_.usage += reply.usage;
        run_.transcript.push_back({messages.back().content, reply.text});
        return reply.text;
    }

    // Asks, parses; on parse failure re-asks up to `reasks` times with the
    // error explained. Returns nullopt when all attempts fail.
    std::optional<llm::AspectOutput> ask_for_aspects(std::vector<llm::ChatMessage> messages,
                                                     std::string* raw_reply = nullptr,
                                                     int reasks = 2) {
        for (int attempt = 0;; ++attempt) {
            const std::string reply = ask(messages);
            if (raw_reply) *raw_reply = reply;
            try {
                return llm::parse_aspect_output(reply);
            } catch (const Error& e) {
                last_parse_error_ = e.what();
                if (attempt >= reasks) return std::nullopt;
                messages.push_back({llm::Role::Assistant, reply});
                messages.push_back(
                    {llm::Role::User,
                     std::string("Your previous reply could not be parsed (") + e.what() +
                         "). " + kSchemaInstruction});
            }
        }
    }

    const std::string& last_parse_error() const { return last_parse_error_; }

private:
    llm::ChatProvider& provider_;
    llm::GenerationConfig config_;
    embed::RetryPolicy retry_;
    StrategyRun& run_;
    std::string last_parse_error_;
};

inline StrategyRun make_run(const corpus::Document& doc, const GuidanceMode& guidance,
                            const StrategyKind& strategy) {
    StrategyRun run;
    run.document_id = doc.id;
    run.guidance = guidance;
    run.strategy = strategy;
    return run;
}

// Splits a CoT reply into reasoning (text before the JSON array) and output.
inline std::string reasoning_prefix(const std::string& reply) {
    const auto pos = reply.find('[');
    if (pos == std::string::npos) return "";
    return llm::trim(reply.substr(0, pos));
}

class Timer {
public:
    explicit Timer(StrategyRun& run) : run_(run), start_(clock::now()) {}
    ~Timer() {
        run_.wall_time_ms =
            std::chrono::duration<double, std::milli>(clock::now() - start_).count();
    }

private:
    using clock = std::chrono::steady_clock;
    StrategyRun& run_;
    clock::time_point start_;
};

} // namespace detail

// Direct prompting: one completion, refine_steps = 0.
inline StrategyRun run_dp(llm::ChatProvider& provider, const corpus::Document& doc,
                          const std::vector<std::string>& provided_aspects,
                          const GuidanceMode& guidance, const llm::GenerationConfig& config,
                          const embed::RetryPolicy& retry = {}) {
    StrategyRun run = detail::make_run(doc, guidance, StrategyKind::dp());
    detail::Timer timer(run);
    detail::Session session(provider, config, retry, run);
    auto output = session.ask_for_aspects(build_guided_prompt(doc, provided_aspects, guidance));
    if (output) run.output = std::move(*output);
    else run.error = "unparseable reply: " + session.last_parse_error();
    return run;
}

// Chain-of-thought: reasoning section captured, then the JSON block.
inline StrategyRun run_cot(llm::ChatProvider& provider, const corpus::Document& doc,
                           const std::vector<std::string>& provided_aspects,
                           const GuidanceMode& guidance, const llm::GenerationConfig& config,
                           const embed::RetryPolicy& retry = {}) {
    StrategyRun run = detail::make_run(doc, guidance, StrategyKind::cot());
    detail::Timer timer(run);
    detail::Session session(provider, config, retry, run);
    std::string raw;
    auto output = session.ask_for_aspects(
        build_guided_prompt(doc, provided_aspects, guidance, /*chain_of_thought=*/true), &raw);
    if (output) {
        run.output = std::move(*output);
        run.reasoning_traces.push_back(detail::reasoning_prefix(raw));
    } else {
        run.error = "unparseable reply: " + session.last_parse_error();
    }
    return run;
}

// CoT with self-consistency: k sampled paths, then a selection completion
// that must answer with the 1-based index of the chosen path.
inline StrategyRun run_cot_sc(llm::ChatProvider& provider, const corpus::Document& doc,
                              const std::vector<std::string>& provided_aspects,
                              const GuidanceMode& guidance, int k,
                              const llm::GenerationConfig& config,
                              const embed::RetryPolicy& retry = {}) {
    if (k < 2) throw ValidationError("run_cot_sc: k must be >= 2");
    StrategyRun run = detail::make_run(doc, guidance, StrategyKind::cot_sc(k));
    detail::Timer timer(run);
    detail::Session session(provider, config, retry, run);

    std::vector<llm::AspectOutput> candidates;
    for (int i = 0; i < k; ++i) {
        std::string raw;
        auto messages = build_guided_prompt(doc, provided_aspects, guidance, true);
        messages.back().content += "\n(reasoning path " + std::to_string(i + 1) + ")";
        auto output = session.ask_for_aspects(std::move(messages), &raw);
        if (!output) {
            run.error = "path " + std::to_string(i + 1) +
                        " unparseable: " + session.last_parse_error();
            return run;
        }
        run.reasoning_traces.push_back(detail::reasoning_prefix(raw));
        candidates.push_back(std::move(*output));
    }

    std::string selection_prompt =
        "Several reasoning paths produced candidate aspect sets. Evaluate all paths and " +
        std::string(kSelectionMarker) + " one. Reply with the path number (1-" +
        std::to_string(k) + ").\n\n";
    for (int i = 0; i < k; ++i) {
        selection_prompt += "Path " + std::to_string(i + 1) + ":\n" +
                            llm::render_aspect_output(candidates[static_cast<std::size_t>(i)]) +
                            "\n\n";
    }
    const std::string reply = session.ask(
        {{llm::Role::System, "You judge reasoning paths."}, {llm::Role::User, selection_prompt}});

    const auto index = llm::first_integer(reply);
    if (index && *index >= 1 && *index <= k) {
        run.output = candidates[static_cast<std::size_t>(*index - 1)];
        return run;
    }

    // Fallback: candidate whose entry count equals the modal count, earliest
    // on ties; flagged.
    std::map<std::size_t, int> count_freq;
    for (const auto& c : candidates) count_freq[c.size()]++;
    std::size_t modal = candidates.front().size();
    int best = 0;
    for (const auto& [count, freq] : count_freq) {
        if (freq > best) {
            best = freq;
            modal = count;
        }
    }
    for (const auto& c : candidates) {
        if (c.size() == modal) {
            run.output = c;
            break;
        }
    }
    run.flagged = true;
    return run;
}

// Self-Refine: evaluator / refiner loop over the aspect-name list, then a
// summarizer pass. refine_steps counts evaluator rounds (immediate ACCEPT = 1).
inline StrategyRun run_self_refine(llm::ChatProvider& provider, const corpus::Document& doc,
                                   const std::vector<std::string>& provided_aspects,
                                   const GuidanceMode& guidance, int max_iterations,
                                   const llm::GenerationConfig& config,
                                   const embed::RetryPolicy& retry = {}) {
    if (max_iterations < 1) throw ValidationError("run_self_refine: max_iterations must be >= 1");
    StrategyRun run = detail::make_run(doc, guidance, StrategyKind::self_refine(max_iterations));
    detail::Timer timer(run);
    detail::Session session(provider, config, retry, run);

    std::vector<std::string> aspects = provided_aspects;

    const auto evaluator_prompt = [&](const std::vector<std::string>& current) {
        std::string p = "Evaluate whether the aspect list below matches the document. " +
                        std::string(kEvaluatorMarker) +
                        ", or REFINE followed by a critique if it does.\n\n";
        p += "Document:\n" + doc.text + "\n\nCurrent aspects:\n" + render_aspect_list(current);
        if (guidance.kind != GuidanceMode::Kind::Preliminary)
            p += "\n" + guidance_sentence(guidance.n_pred);
        return p;
    };

    bool accepted = false;
    for (int round = 0; round < max_iterations && !accepted; ++round) {
        run.refine_steps = round + 1;
        std::string verdict;
        bool decided = false;
        std::vector<llm::ChatMessage> messages{
            {llm::Role::System, "You evaluate aspect lists against documents."},
            {llm::Role::User, evaluator_prompt(aspects)}};
        for (int attempt = 0; attempt <= 2; ++attempt) {
            verdict = session.ask(messages);
            if (verdict.find("ACCEPT") != std::string::npos ||
                verdict.find("REFINE") != std::string::npos) {
                decided = true;
                break;
            }
            messages.push_back({llm::Role::Assistant, verdict});
            messages.push_back({llm::Role::User,
                                "Your reply must contain either ACCEPT or REFINE. Answer again."});
        }
        if (!decided) {
            accepted = true; // treated as ACCEPT
            run.flagged = true;
            break;
        }
        // ACCEPT wins when both tokens appear (e.g. quoted instructions).
        if (verdict.find("REFINE") == std::string::npos ||
            verdict.find("ACCEPT") != std::string::npos) {
            accepted = true;
            break;
        }

        std::string refine_prompt =
            "A critique of the current aspect list follows. " + std::string(kRefinerMarker) +
            " as a JSON array of strings.\n\nDocument:\n" + doc.text + "\n\nCurrent aspects:\n" +
            render_aspect_list(aspects) + "\nCritique:\n" + verdict;
        if (guidance.kind != GuidanceMode::Kind::Preliminary)
            refine_prompt += "\n" + guidance_sentence(guidance.n_pred);
        const std::string revised = session.ask(
            {{llm::Role::System, "You revise aspect lists."}, {llm::Role::User, refine_prompt}});
        try {
            const auto fragment = llm::detail::first_json_array(revised);
            if (!fragment) throw FormatError("no JSON array in refiner reply");
            const auto arr = nlohmann::json::parse(*fragment);
            std::vector<std::string> next;
            for (const auto& item : arr) {
                if (item.is_string()) {
                    const std::string name = llm::trim(item.get<std::string>());
                    if (!name.empty()) next.push_back(name);
                }
            }
            if (next.empty()) throw FormatError("refiner produced an empty aspect list");
            aspects = std::move(next);
        } catch (const std::exception&) {
            // Keep the previous list and let the evaluator re-judge it.
            run.flagged = true;
        }
    }

    std::string summarize_prompt =
        std::string(kSummarizerMarker) + " in the final list below, based on the document.\n\n" +
        "Document:\n" + doc.text + "\n\nFinal aspects:\n" + render_aspect_list(aspects) + "\n" +
        kSchemaInstruction;
    auto output = session.ask_for_aspects(
        {{llm::Role::System, "You write aspect-based summaries."},
         {llm::Role::User, summarize_prompt}});
    if (output) run.output = std::move(*output);
    else run.error = "unparseable summarizer reply: " + session.last_parse_error();
    return run;
}

inline StrategyRun run_strategy(llm::ChatProvider& provider, const corpus::Document& doc,
                                const std::vector<std::string>& provided_aspects,
                                const GuidanceMode& guidance, const StrategyKind& strategy,
                                const llm::GenerationConfig& config,
                                const embed::RetryPolicy& retry = {}) {
    switch (strategy.kind) {
        case StrategyKind::Kind::DP:
            return run_dp(provider, doc, provided_aspects, guidance, config, retry);
        case StrategyKind::Kind::CoT:
            return run_cot(provider, doc, provided_aspects, guidance, config, retry);
        case StrategyKind::Kind::CoTSC:
            return run_cot_sc(provider, doc, provided_aspects, guidance, strategy.paths, config,
                              retry);
        case StrategyKind::Kind::SelfRefine:
            return run_self_refine(provider, doc, provided_aspects, guidance,
                                   strategy.max_iterations, config, retry);
    }
    throw ValidationError("unknown strategy kind");
}

// Fills in n_pred for the count-guided modes.
inline GuidanceMode resolve_guidance(const GuidanceMode& mode, const corpus::Document& doc,
                                     llm::ChatProvider* chat,
                                     const regressor::RegressionHead* head,
                                     embed::EmbeddingProvider* embedder,
                                     const llm::GenerationConfig& config,
                                     embed::EmbeddingCache* cache = nullptr) {
    switch (mode.kind) {
        case GuidanceMode::Kind::Preliminary:
            return mode;
        case GuidanceMode::Kind::AspectLLM: {
            if (!chat) throw ValidationError("AspectLLM guidance requires a chat provider");
            return GuidanceMode::aspect_llm(llm::estimate_aspect_count_llm(*chat, doc, config));
        }
        case GuidanceMode::Kind::AspectRM: {
            if (!head || !embedder)
                throw ValidationError("AspectRM guidance requires a head and embedding provider");
            return GuidanceMode::aspect_rm(regressor::predict_count(*head, *embedder, doc, cache));
        }
    }
    throw ValidationError("unknown guidance mode");
}

// Mean Self-Refine evaluator rounds (Avg. Step).
inline double avg_step(const std::vector<StrategyRun>& runs) {
    if (runs.empty()) throw ValidationError("avg_step: no runs");
    double sum = 0.0;
    for (const auto& run : runs) {
        if (run.strategy.kind != StrategyKind::Kind::SelfRefine)
            throw ValidationError("avg_step: run for document " + run.document_id +
                                  " is not a Self-Refine run");
        sum += run.refine_steps;
    }
    return sum / static_cast<double>(runs.size());
}

// --- JSONL persistence ------------------------------------------------------

inline nlohmann::json to_json(const StrategyRun& run, bool redact_transcript = false) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : run.output.entries)
        entries.push_back({{"aspect", e.name}, {"summary", e.summary}});
    nlohmann::json j{{"document_id", run.document_id},
                     {"guidance", run.guidance.name()},
                     {"n_pred", run.guidance.n_pred},
                     {"strategy", run.strategy.name()},
                     {"output", entries},
                     {"reasoning_traces", run.reasoning_traces},
                     {"refine_steps", run.refine_steps},
                     {"prompt_tokens", run.usage.prompt_tokens},
                     {"completion_tokens", run.usage.completion_tokens},
                     {"wall_time_ms", run.wall_time_ms},
                     {"flagged", run.flagged}};
    if (run.error) j["error"] = *run.error;
    if (!redact_transcript) {
        nlohmann::json transcript = nlohmann::json::array();
        for (const auto& ex : run.transcript)
            transcript.push_back({{"prompt", ex.prompt}, {"reply", ex.reply}});
        j["transcript"] = transcript;
    }
    return j;
}

inline StrategyRun run_from_json(const nlohmann::json& j) {
    StrategyRun run;
    run.document_id = j.at("document_id").get<std::string>();
    const std::string g = j.at("guidance").get<std::string>();
    run.guidance.kind = g == "llm"  ? GuidanceMode::Kind::AspectLLM
                        : g == "rm" ? GuidanceMode::Kind::AspectRM
                                    : GuidanceMode::Kind::Preliminary;
    run.guidance.n_pred = j.at("n_pred").get<int>();
    const std::string s = j.at("strategy").get<std::string>();
    run.strategy.kind = s == "cot"          ? StrategyKind::Kind::CoT
                        : s == "cotsc"      ? StrategyKind::Kind::CoTSC
                        : s == "selfrefine" ? StrategyKind::Kind::SelfRefine
                                            : StrategyKind::Kind::DP;
    for (const auto& e : j.at("output"))
        run.output.entries.push_back(
            {e.at("aspect").get<std::string>(), e.at("summary").get<std::string>()});
    run.reasoning_traces = j.at("reasoning_traces").get<std::vector<std::string>>();
    run.refine_steps = j.at("refine_steps").get<int>();
    run.usage.prompt_tokens = j.at("prompt_tokens").get<long>();
    run.usage.completion_tokens = j.at("completion_tokens").get<long>();
    run.wall_time_ms = j.at("wall_time_ms").get<double>();
    run.flagged = j.at("flagged").get<bool>();
    if (j.contains("error")) run.error = j.at("error").get<std::string>();
    return run;
}

} // namespace carpas::strategies
