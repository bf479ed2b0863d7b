#pragma once

#include <cctype>
#include <functional>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "carpas/corpus.hpp"
#include "carpas/embed.hpp" // RetryPolicy
#include "carpas/errors.hpp"

namespace carpas::llm {

enum class Role { System, User, Assistant };

inline std::string role_name(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

struct ChatMessage {
    Role role = Role::User;
    std::string content;
};

struct GenerationConfig {
    double temperature = 0.7;
    int max_tokens = 4096;
    std::string model;
};

struct TokenUsage {
    long prompt_tokens = 0;
    long completion_tokens = 0;

    TokenUsage& operator+=(const TokenUsage& o) {
        prompt_tokens += o.prompt_tokens;
        completion_tokens += o.completion_tokens;
        return *this;
    }
};

struct ChatReply {
    std::string text;
    TokenUsage usage;
};

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual std::string provider_id() const = 0;
    virtual ChatReply complete(const std::vector<ChatMessage>& messages,
                               const GenerationConfig& config) = 0;
};

// Transient-fault retry wrapper; authentication and scripted-gap failures are
// rethrown immediately.
inline ChatReply complete_with_retry(ChatProvider& provider,
                                     const std::vector<ChatMessage>& messages,
                                     const GenerationConfig& config,
                                     const embed::RetryPolicy& retry = {},
                                     int* retries_used = nullptr) {
    if (messages.empty()) throw ValidationError("complete_with_retry: empty message list");
    double delay = retry.base_delay_seconds;
    for (int attempt = 1;; ++attempt) {
        try {
            ChatReply reply = provider.complete(messages, config);
            if (retries_used) *retries_used = attempt - 1;
            return reply;
        } catch (const ScriptedGapError&) {
            throw;
        } catch (const ProviderError&) {
            if (attempt >= retry.max_attempts) throw;
            retry.sleep(delay);
            delay *= retry.backoff_factor;
        }
    }
}

// Parsed (aspect, summary) list from a model reply.
struct AspectOutput {
    std::vector<corpus::AspectEntry> entries;

    std::size_t size() const { return entries.size(); }
};

inline std::string render_aspect_output(const AspectOutput& output) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : output.entries)
        arr.push_back({{"aspect", e.name}, {"summary", e.summary}});
    return arr.dump(2);
}

namespace detail {

// Extracts the first balanced JSON array literal from free text, skipping
// bracket characters inside string literals.
inline std::optional<std::string> first_json_array(const std::string& text) {
    for (std::size_t start = 0; start < text.size(); ++start) {
        if (text[start] != '[') continue;
        int depth = 0;
        bool in_string = false, escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == '[') ++depth;
            else if (c == ']') {
                if (--depth == 0) return text.substr(start, i - start + 1);
            }
        }
    }
    return std::nullopt;
}

} // namespace detail

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Finds the first JSON array of {aspect, summary} objects in a reply (fenced
// or bare) and validates it.
inline AspectOutput parse_aspect_output(const std::string& text) {
    std::size_t search_from = 0;
    AspectOutput out;
    while (true) {
        const auto fragment = detail::first_json_array(text.substr(search_from));
        if (!fragment)
            throw FormatError("no JSON aspect array found in reply: " + text.substr(0, 200));
        nlohmann::json arr;
        bool ok = true;
        try {
            arr = nlohmann::json::parse(*fragment);
        } catch (const nlohmann::json::exception&) {
            ok = false;
        }
        if (!ok || !arr.is_array() ||
            (!arr.empty() && !(arr.front().is_object() && arr.front().contains("aspect")))) {
            // Not the aspect array (e.g. an array inside prose); keep scanning.
            search_from += text.substr(search_from).find('[') + 1;
            if (search_from >= text.size())
                throw FormatError("no JSON aspect array found in reply: " + text.substr(0, 200));
            continue;
        }
        if (arr.empty()) throw FormatError("empty aspect list in reply");
        std::set<std::string> seen;
        std::vector<std::string> dupes;
        for (const auto& item : arr) {
            if (!item.is_object() || !item.contains("aspect") || !item.contains("summary"))
                throw FormatError("aspect array item missing aspect/summary fields");
            corpus::AspectEntry entry{trim(item.at("aspect").get<std::string>()),
                                      trim(item.at("summary").get<std::string>())};
            if (entry.name.empty()) throw FormatError("empty aspect name in reply");
            const std::string key = corpus::normalize_aspect_name(entry.name);
            if (!seen.insert(key).second) dupes.push_back(entry.name);
            out.entries.push_back(std::move(entry));
        }
        if (!dupes.empty()) {
            std::string msg = "duplicate aspect names in reply:";
            for (const auto& d : dupes) msg += " \"" + d + "\"";
            throw ValidationError(msg);
        }
        return out;
    }
}

// First integer token in a string, if any.
inline std::optional<long> first_integer(const std::string& text) {
    static const std::regex digits("\\d+");
    std::smatch m;
    if (std::regex_search(text, m, digits)) return std::stol(m.str());
    return std::nullopt;
}

inline constexpr const char* kCountPromptSentence =
    "Estimate how many distinct, non-overlapping aspects or key themes are present";

// #Aspect-LLM: ask the model for a count, take the first integer in the
// reply, clamp to [1, 20]. Count calls run at temperature 0.
inline int estimate_aspect_count_llm(ChatProvider& provider, const corpus::Document& doc,
                                     GenerationConfig config,
                                     const embed::RetryPolicy& retry = {}) {
    config.temperature = 0.0;
    std::vector<ChatMessage> messages{
        {Role::System,
         "You count topical aspects in documents. Reply with a single integer."},
        {Role::User, std::string(kCountPromptSentence) +
                         " in the following document. Reply with the number only.\n\n" +
                         doc.text}};
    const ChatReply reply = complete_with_retry(provider, messages, config, retry);
    const auto n = first_integer(reply.text);
    if (!n) throw FormatError("count reply contains no integer: " + reply.text.substr(0, 200));
    return static_cast<int>(std::min<long>(20, std::max<long>(1, *n)));
}

// --- scripted provider (test double) ---------------------------------------

// A rule inspects the full message list (usually the last user message) and
// either produces a reply or passes.
using ScriptRule = std::function<std::optional<std::string>(const std::vector<ChatMessage>&)>;

class ScriptedChatProvider : public ChatProvider {
public:
    explicit ScriptedChatProvider(std::vector<ScriptRule> rules, std::string id = "scripted")
        : rules_(std::move(rules)), id_(std::move(id)) {}

    std::string provider_id() const override { return id_; }

    ChatReply complete(const std::vector<ChatMessage>& messages,
                       const GenerationConfig&) override {
        for (const auto& rule : rules_) {
            if (auto reply = rule(messages)) {
                ChatReply r;
                r.text = *reply;
                r.usage.prompt_tokens = static_cast<long>(messages.back().content.size() / 4);
                r.usage.completion_tokens = static_cast<long>(reply->size() / 4);
                return r;
            }
        }
        throw ScriptedGapError("no script rule matches prompt: " +
                               messages.back().content.substr(0, 300));
    }

private:
    std::vector<ScriptRule> rules_;
    std::string id_;
};

// Rule builder: reply when the last user message contains `needle`.
inline ScriptRule on_substring(std::string needle,
                               std::function<std::string(const std::string&)> make_reply) {
    return [needle = std::move(needle),
            make_reply = std::move(make_reply)](const std::vector<ChatMessage>& messages)
               -> std::optional<std::string> {
        for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
            if (it->role != Role::User) continue;
            if (it->content.find(needle) != std::string::npos) return make_reply(it->content);
            return std::nullopt;
        }
        return std::nullopt;
    };
}

inline ScriptRule on_substring(std::string needle, std::string canned_reply) {
    return on_substring(std::move(needle),
                        [reply = std::move(canned_reply)](const std::string&) { return reply; });
}

} // namespace carpas::llm
