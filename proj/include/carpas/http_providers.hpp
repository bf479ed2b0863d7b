#pragma once

#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "carpas/embed.hpp"
#include "carpas/errors.hpp"
#include "carpas/llm.hpp"

namespace carpas::http {

namespace detail {

inline nlohmann::json post_json(const std::string& base_url, const std::string& path,
                                const std::string& api_key, const nlohmann::json& body) {
    httplib::Client client(base_url);
    client.set_connection_timeout(30);
    client.set_read_timeout(120);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key}};
    const auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw ProviderError("transport failure talking to " + base_url + path);
    if (res->status == 401 || res->status == 403)
        throw ValidationError("authentication failed against " + base_url + path);
    if (res->status < 200 || res->status >= 300)
        throw ProviderError("HTTP " + std::to_string(res->status) + " from " + base_url + path +
                            ": " + res->body.substr(0, 300));
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw ProviderError(std::string("unparseable response body: ") + e.what());
    }
}

} // namespace detail

// POST /v1/chat/completions, OpenAI wire shape. API key from CHAT_API_KEY.
class HttpChatProvider : public llm::ChatProvider {
public:
    HttpChatProvider(std::string base_url, std::string model, std::string api_key)
        : base_url_(std::move(base_url)), model_(std::move(model)),
          api_key_(std::move(api_key)) {}

    std::string provider_id() const override { return "http:" + base_url_; }

    llm::ChatReply complete(const std::vector<llm::ChatMessage>& messages,
                            const llm::GenerationConfig& config) override {
        nlohmann::json payload_messages = nlohmann::json::array();
        for (const auto& m : messages)
            payload_messages.push_back({{"role", llm::role_name(m.role)}, {"content", m.content}});
        const nlohmann::json body{{"model", config.model.empty() ? model_ : config.model},
                                  {"messages", payload_messages},
                                  {"temperature", config.temperature},
                                  {"max_tokens", config.max_tokens}};
        const auto response = detail::post_json(base_url_, "/v1/chat/completions", api_key_, body);
        llm::ChatReply reply;
        try {
            reply.text = response.at("choices").at(0).at("message").at("content")
                             .get<std::string>();
            if (response.contains("usage")) {
                reply.usage.prompt_tokens = response["usage"].value("prompt_tokens", 0L);
                reply.usage.completion_tokens = response["usage"].value("completion_tokens", 0L);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("unexpected chat completion shape: ") + e.what());
        }
        return reply;
    }

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_;
};

// POST /v1/embeddings, OpenAI wire shape. API key from EMBED_API_KEY.
class HttpEmbeddingProvider : public embed::EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string base_url, std::string model, std::string api_key,
                          std::size_t declared_dimension = 0, std::size_t max_chars = 0)
        : base_url_(std::move(base_url)), model_(std::move(model)), api_key_(std::move(api_key)),
          dimension_(declared_dimension), max_chars_(max_chars) {}

    std::string provider_id() const override { return "http:" + base_url_; }
    std::string model_id() const override { return model_; }

    std::size_t dimension() const override {
        if (dimension_ == 0)
            throw ValidationError("embedding dimension unknown until the first fetch");
        return dimension_;
    }

    std::size_t max_input_chars() const override { return max_chars_; }

    embed::EmbeddingVector fetch(const std::string& text) override {
        const nlohmann::json body{{"model", model_}, {"input", text}};
        const auto response = detail::post_json(base_url_, "/v1/embeddings", api_key_, body);
        embed::EmbeddingVector v;
        try {
            v = response.at("data").at(0).at("embedding").get<embed::EmbeddingVector>();
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("unexpected embeddings shape: ") + e.what());
        }
        if (dimension_ == 0) dimension_ = v.size();
        return v;
    }

private:
    std::string base_url_;
    std::string model_;
    std::string api_key_;
    std::size_t dimension_;
    std::size_t max_chars_;
};

} // namespace carpas::http
