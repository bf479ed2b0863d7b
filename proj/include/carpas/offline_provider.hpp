#pragma once

#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "carpas/datagen.hpp"
#include "carpas/evalharness.hpp"
#include "carpas/llm.hpp"
#include "carpas/rng.hpp"
#include "carpas/strategies.hpp"

namespace carpas::offline {

// Deterministic word salad derived from a seed string; used to give offline
// replies distinct, reproducible vocabulary.
inline std::string filler_words(const std::string& seed, std::size_t count) {
    static const std::vector<std::string> vocabulary = {
        "figure",  "quarter", "measure", "update",  "detail",  "outlook", "signal",
        "segment", "driver",  "factor",  "trend",   "margin",  "program", "target",
        "impact",  "status",  "result",  "change",  "region",  "period",  "balance",
        "effort",  "review",  "metric",  "volume",  "level",   "phase",   "plan"};
    Rng rng(fnv1a64(seed));
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        if (!out.empty()) out += " ";
        out += vocabulary[static_cast<std::size_t>(rng.below(vocabulary.size()))] +
               std::to_string(rng.below(1000));
    }
    return out;
}

inline std::string summary_for_aspect(const std::string& aspect) {
    return "The " + aspect + " update covered " + filler_words("summary|" + aspect, 6) + ".";
}

inline std::string paragraph_for_aspect(const std::string& prompt_seed,
                                        const std::string& aspect) {
    return "Regarding " + aspect + ", " + filler_words("paragraph|" + prompt_seed, 24) + ".";
}

// Pulls "- name" lines following a "...aspects:" header out of a prompt.
inline std::vector<std::string> extract_aspect_list(const std::string& prompt) {
    std::vector<std::string> aspects;
    std::istringstream in(prompt);
    std::string line;
    bool in_list = false;
    while (std::getline(in, line)) {
        if (line.rfind("- ", 0) == 0) {
            in_list = true;
            aspects.push_back(llm::trim(line.substr(2)));
        } else if (in_list && llm::trim(line).empty()) {
            break;
        } else if (in_list) {
            break;
        }
    }
    return aspects;
}

inline std::optional<int> extract_guidance_n(const std::string& prompt) {
    static const std::regex re("around ([0-9]+) aspects");
    std::smatch m;
    if (std::regex_search(prompt, m, re)) return std::stoi(m[1].str());
    return std::nullopt;
}

inline std::optional<std::string> extract_quoted(const std::string& prompt) {
    const auto a = prompt.find('"');
    if (a == std::string::npos) return std::nullopt;
    const auto b = prompt.find('"', a + 1);
    if (b == std::string::npos) return std::nullopt;
    return prompt.substr(a + 1, b - a - 1);
}

// Builds an aspect JSON array reply of exactly `count` entries, drawing names
// from the provided list first and inventing extras when short.
inline std::string aspect_array_reply(const std::vector<std::string>& provided, int count) {
    llm::AspectOutput out;
    std::set<std::string> seen;
    for (const auto& name : provided) {
        if (static_cast<int>(out.entries.size()) >= count) break;
        if (!seen.insert(corpus::normalize_aspect_name(name)).second) continue;
        out.entries.push_back({name, summary_for_aspect(name)});
    }
    int extra = 1;
    while (static_cast<int>(out.entries.size()) < count) {
        const std::string name = "Additional Topic " + std::to_string(extra++);
        out.entries.push_back({name, summary_for_aspect(name)});
    }
    return llm::render_aspect_output(out);
}

// The full-pipeline deterministic provider used by `--provider offline` and
// the end-to-end tests. Refinement replies obey the count-guidance sentence
// when present and otherwise comply with the provided aspect count,
// mirroring the compliance behavior of real models.
class OfflineChatProvider : public llm::ChatProvider {
public:
    std::string provider_id() const override { return "offline"; }

    llm::ChatReply complete(const std::vector<llm::ChatMessage>& messages,
                            const llm::GenerationConfig&) override {
        const std::string& prompt = last_user(messages);
        llm::ChatReply reply;
        reply.text = respond(prompt);
        reply.usage.prompt_tokens = static_cast<long>(prompt.size() / 4);
        reply.usage.completion_tokens = static_cast<long>(reply.text.size() / 4);
        return reply;
    }

private:
    static const std::string& last_user(const std::vector<llm::ChatMessage>& messages) {
        for (auto it = messages.rbegin(); it != messages.rend(); ++it)
            if (it->role == llm::Role::User) return it->content;
        throw ValidationError("offline provider: no user message");
    }

    static bool has(const std::string& prompt, const char* marker) {
        return prompt.find(marker) != std::string::npos;
    }

    std::string respond(const std::string& prompt) const {
        using namespace datagen;
        using namespace strategies;
        if (has(prompt, kParagraphMarker)) {
            const auto aspect = extract_quoted(prompt);
            if (!aspect) throw ScriptedGapError("paragraph prompt without quoted aspect");
            return paragraph_for_aspect(prompt, *aspect);
        }
        if (has(prompt, kSynthesisMarker)) {
            // Echo the content sections; the template preamble stays in front.
            const auto pos = prompt.find("Content paragraphs:");
            std::string body = pos == std::string::npos ? prompt : prompt.substr(pos + 19);
            return "Transcript. " + llm::trim(body);
        }
        if (has(prompt, kGroundTruthMarker)) {
            const auto aspect = extract_quoted(prompt);
            if (!aspect) throw ScriptedGapError("summary prompt without quoted aspect");
            return summary_for_aspect(*aspect);
        }
        if (has(prompt, llm::kCountPromptSentence)) {
            // The synthesized transcripts mark each content section with
            // "### <aspect>"; counting them gives an informed estimate.
            int count = 0;
            for (std::size_t pos = prompt.find("### "); pos != std::string::npos;
                 pos = prompt.find("### ", pos + 4))
                ++count;
            return std::to_string(count > 0 ? count : 5);
        }
        if (has(prompt, kSelectionMarker)) return "1";
        if (has(prompt, "ACCEPT") && has(prompt, "REFINE")) {
            // Evaluator: demand a revision while the list size disagrees with
            // the count-guidance sentence, accept otherwise.
            const auto n = extract_guidance_n(prompt);
            const auto current = extract_aspect_list(prompt);
            if (n && static_cast<int>(current.size()) != *n)
                return "REFINE: the list should contain " + std::to_string(*n) + " aspects.";
            return "ACCEPT";
        }
        if (has(prompt, kRefinerMarker)) {
            const auto current = extract_aspect_list(prompt);
            const auto n = extract_guidance_n(prompt);
            const std::size_t count = n ? static_cast<std::size_t>(*n) : current.size();
            nlohmann::json arr = nlohmann::json::array();
            for (std::size_t i = 0; i < count && i < current.size(); ++i) arr.push_back(current[i]);
            for (std::size_t i = current.size(); i < count; ++i)
                arr.push_back("Additional Topic " + std::to_string(i - current.size() + 1));
            return arr.dump();
        }
        if (has(prompt, kSummarizerMarker)) {
            const auto aspects = extract_aspect_list(prompt);
            return aspect_array_reply(aspects, static_cast<int>(aspects.size()));
        }
        if (has(prompt, kRefineTaskMarker)) {
            const auto provided = extract_aspect_list(prompt);
            const auto n = extract_guidance_n(prompt);
            const int count = n ? *n : static_cast<int>(provided.size());
            std::string reasoning;
            if (has(prompt, "step-by-step"))
                reasoning = "Reasoning: reviewed each provided aspect against the document.\n\n";
            return reasoning + aspect_array_reply(provided, count);
        }
        if (has(prompt, evalharness::kJudgeMarker)) return "factuality: 4, relevance: 5";
        throw ScriptedGapError("offline provider: unrecognized prompt: " + prompt.substr(0, 200));
    }
};

// Script builders for focused tests.

// Always emits exactly as many aspects as were provided, ignoring guidance:
// the compliance phenomenon as a mock behavior.
inline llm::ScriptRule compliance_rule() {
    return llm::on_substring(strategies::kRefineTaskMarker, [](const std::string& prompt) {
        const auto provided = extract_aspect_list(prompt);
        std::string reasoning;
        if (prompt.find("step-by-step") != std::string::npos)
            reasoning = "Reasoning: kept every provided aspect.\n\n";
        return reasoning + aspect_array_reply(provided, static_cast<int>(provided.size()));
    });
}

// Obeys "around N aspects" when present, otherwise complies with the
// provided count.
inline llm::ScriptRule obedient_rule() {
    return llm::on_substring(strategies::kRefineTaskMarker, [](const std::string& prompt) {
        const auto provided = extract_aspect_list(prompt);
        const auto n = extract_guidance_n(prompt);
        const int count = n ? *n : static_cast<int>(provided.size());
        std::string reasoning;
        if (prompt.find("step-by-step") != std::string::npos)
            reasoning = "Reasoning: selected the most relevant aspects.\n\n";
        return reasoning + aspect_array_reply(provided, count);
    });
}

} // namespace carpas::offline
