#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "carpas/errors.hpp"
#include "carpas/rng.hpp"

namespace carpas::embed {

using EmbeddingVector = std::vector<double>;

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size())
        throw ValidationError("cosine: dimension mismatch " + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()));
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    // Inputs are unit-norm by contract, so the dot product is the cosine.
    return dot;
}

inline EmbeddingVector l2_normalize(EmbeddingVector v) {
    double norm2 = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) throw ValidationError("embedding contains non-finite entry");
        norm2 += x * x;
    }
    if (norm2 <= 0.0) throw ValidationError("cannot normalize a zero embedding");
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

inline EmbeddingVector mean_pool(const std::vector<EmbeddingVector>& vectors) {
    if (vectors.empty()) throw ValidationError("mean_pool: empty input");
    const std::size_t d = vectors.front().size();
    EmbeddingVector mean(d, 0.0);
    for (const auto& v : vectors) {
        if (v.size() != d) throw ValidationError("mean_pool: dimension mismatch");
        for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
    }
    for (double& x : mean) x /= static_cast<double>(vectors.size());
    return l2_normalize(std::move(mean));
}

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;

    virtual std::string provider_id() const = 0;
    virtual std::string model_id() const = 0;
    virtual std::size_t dimension() const = 0;

    // 0 means unlimited; otherwise long inputs are chunked by the caller.
    virtual std::size_t max_input_chars() const { return 0; }

    // Raw (un-normalized) embedding for one text.
    virtual EmbeddingVector fetch(const std::string& text) = 0;
};

// Append-only on-disk embedding cache with an in-memory index, keyed by
// (provider, model, content digest). Writes are serialized.
class EmbeddingCache {
public:
    EmbeddingCache() = default; // memory-only

    explicit EmbeddingCache(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                index_[j.at("key").get<std::string>()] =
                    j.at("values").get<EmbeddingVector>();
            } catch (const nlohmann::json::exception&) {
                // Torn tail write from an interrupted run; ignore the line.
            }
        }
    }

    static std::string make_key(const EmbeddingProvider& p, const std::string& text) {
        return p.provider_id() + "/" + p.model_id() + "/" + fnv1a64_hex(text);
    }

    std::optional<EmbeddingVector> lookup(const std::string& key) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = index_.find(key);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    void store(const std::string& key, const EmbeddingVector& v) {
        std::lock_guard<std::mutex> lock(mutex_);
        index_[key] = v;
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            out << nlohmann::json{{"key", key}, {"values", v}}.dump() << "\n";
        }
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return index_.size();
    }

private:
    std::string path_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, EmbeddingVector> index_;
};

struct RetryPolicy {
    int max_attempts = 3;
    double base_delay_seconds = 1.0;
    double backoff_factor = 2.0;
    // Tests replace this with a no-op.
    std::function<void(double)> sleep = [](double s) {
        std::this_thread::sleep_for(std::chrono::duration<double>(s));
    };
};

// Cached, normalized embedding lookup. The returned vector is unit-norm.
inline EmbeddingVector embed_text(EmbeddingProvider& provider, const std::string& text,
                                  EmbeddingCache* cache = nullptr,
                                  const RetryPolicy& retry = {}) {
    if (text.empty()) throw ValidationError("embed_text: empty text");
    std::string key;
    if (cache) {
        key = EmbeddingCache::make_key(provider, text);
        if (auto hit = cache->lookup(key)) return *hit;
    }
    EmbeddingVector raw;
    double delay = retry.base_delay_seconds;
    for (int attempt = 1;; ++attempt) {
        try {
            raw = provider.fetch(text);
            break;
        } catch (const ProviderError&) {
            if (attempt >= retry.max_attempts) throw;
            retry.sleep(delay);
            delay *= retry.backoff_factor;
        }
    }
    if (raw.size() != provider.dimension()) {
        throw ProviderError("provider " + provider.provider_id() + " returned dimension " +
                            std::to_string(raw.size()) + ", declared " +
                            std::to_string(provider.dimension()));
    }
    EmbeddingVector v = l2_normalize(std::move(raw));
    if (cache) cache->store(key, v);
    return v;
}

// Embeds a document of arbitrary length: chunked and mean-pooled when the
// provider enforces an input limit.
inline EmbeddingVector embed_document(EmbeddingProvider& provider, const std::string& text,
                                      EmbeddingCache* cache = nullptr,
                                      const RetryPolicy& retry = {}) {
    const std::size_t limit = provider.max_input_chars();
    if (limit == 0 || text.size() <= limit) return embed_text(provider, text, cache, retry);
    std::vector<EmbeddingVector> chunks;
    for (std::size_t off = 0; off < text.size(); off += limit)
        chunks.push_back(embed_text(provider, text.substr(off, limit), cache, retry));
    return mean_pool(chunks);
}

// Deterministic test double: digest(text) + seed -> pseudorandom unit vector.
class MockEmbeddingProvider : public EmbeddingProvider {
public:
    MockEmbeddingProvider(std::uint64_t seed, std::size_t dimension)
        : seed_(seed), dimension_(dimension) {
        if (dimension < 2) throw ValidationError("mock provider needs dimension >= 2");
    }

    std::string provider_id() const override { return "mock"; }
    std::string model_id() const override { return "mock-" + std::to_string(seed_); }
    std::size_t dimension() const override { return dimension_; }

    EmbeddingVector fetch(const std::string& text) override {
        Rng rng(derive_seed(seed_, text));
        EmbeddingVector v(dimension_);
        for (double& x : v) x = rng.symmetric(1.0);
        // Retry until nonzero; astronomically unlikely to loop.
        double norm2 = 0.0;
        for (double x : v) norm2 += x * x;
        if (norm2 == 0.0) v[0] = 1.0;
        return v;
    }

private:
    std::uint64_t seed_;
    std::size_t dimension_;
};

// Pluggable similarity in [0, 1] standing in for BERTScore-style scoring.
class TextSimilarityScorer {
public:
    virtual ~TextSimilarityScorer() = default;
    virtual double score(const std::string& a, const std::string& b) = 0;
};

// Default scorer: whole-text embedding cosine rescaled from [-1,1] to [0,1].
class EmbeddingSimilarityScorer : public TextSimilarityScorer {
public:
    EmbeddingSimilarityScorer(EmbeddingProvider& provider, EmbeddingCache* cache = nullptr)
        : provider_(provider), cache_(cache) {}

    double score(const std::string& a, const std::string& b) override {
        if (a.empty() || b.empty())
            throw ValidationError("text_similarity: empty text");
        const double c = cosine(embed_document(provider_, a, cache_),
                                embed_document(provider_, b, cache_));
        return std::clamp((c + 1.0) / 2.0, 0.0, 1.0);
    }

private:
    EmbeddingProvider& provider_;
    EmbeddingCache* cache_;
};

} // namespace carpas::embed
