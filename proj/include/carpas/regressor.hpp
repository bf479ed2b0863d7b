#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "carpas/corpus.hpp"
#include "carpas/embed.hpp"
#include "carpas/errors.hpp"
#include "carpas/rng.hpp"

namespace carpas::regressor {

// Two-layer regression head over a frozen document embedding:
// d -> d/2 linear, ReLU, dropout(0.2), -> scalar.
struct RegressionHead {
    std::size_t d = 0;
    std::size_t h = 0;
    std::vector<double> W1; // h x d, row-major
    std::vector<double> b1; // h
    std::vector<double> W2; // h
    double b2 = 0.0;
    double dropout_rate = 0.2;
};

struct TrainConfig {
    double learning_rate = 2e-5;
    int epochs = 30;
    int batch_size = 1;
    std::uint64_t seed = 42;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

struct Gradients {
    std::vector<double> W1, b1, W2;
    double b2 = 0.0;
};

struct OptimizerState {
    std::vector<double> m_W1, v_W1, m_b1, v_b1, m_W2, v_W2;
    double m_b2 = 0.0, v_b2 = 0.0;
    std::uint64_t t = 0;
};

struct TrainingExample {
    embed::EmbeddingVector embedding;
    double target_count = 0.0;
};

inline RegressionHead make_head(std::size_t d, Rng& rng, double dropout_rate = 0.2) {
    if (d < 2) throw ValidationError("regression head needs input dimension >= 2");
    RegressionHead head;
    head.d = d;
    head.h = d / 2;
    head.dropout_rate = dropout_rate;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(head.h));
    head.W1.resize(head.h * d);
    head.b1.assign(head.h, 0.0);
    head.W2.resize(head.h);
    for (double& w : head.W1) w = rng.symmetric(s1);
    for (double& b : head.b1) b = rng.symmetric(s1);
    for (double& w : head.W2) w = rng.symmetric(s2);
    head.b2 = rng.symmetric(s2);
    return head;
}

namespace detail {

struct ForwardCache {
    std::vector<double> pre;     // W1 x + b1
    std::vector<double> hidden;  // after ReLU + dropout scaling
    std::vector<double> mask;    // dropout keep mask, already scaled by 1/(1-p)
    double output = 0.0;
};

inline ForwardCache forward_impl(const RegressionHead& head, const embed::EmbeddingVector& x,
                                 bool train, Rng* rng) {
    if (x.size() != head.d)
        throw ValidationError("forward: input dimension " + std::to_string(x.size()) +
                              " does not match head dimension " + std::to_string(head.d));
    ForwardCache cache;
    cache.pre.resize(head.h);
    cache.hidden.resize(head.h);
    cache.mask.assign(head.h, 1.0);
    if (train && head.dropout_rate > 0.0) {
        const double keep_scale = 1.0 / (1.0 - head.dropout_rate);
        for (std::size_t j = 0; j < head.h; ++j)
            cache.mask[j] = (rng->unit() < head.dropout_rate) ? 0.0 : keep_scale;
    }
    double y = head.b2;
    for (std::size_t j = 0; j < head.h; ++j) {
        double z = head.b1[j];
        const double* row = head.W1.data() + j * head.d;
        for (std::size_t i = 0; i < head.d; ++i) z += row[i] * x[i];
        cache.pre[j] = z;
        cache.hidden[j] = std::max(z, 0.0) * cache.mask[j];
        y += head.W2[j] * cache.hidden[j];
    }
    cache.output = y;
    return cache;
}

} // namespace detail

// Inference-mode forward pass; deterministic, dropout inactive.
inline double forward(const RegressionHead& head, const embed::EmbeddingVector& x) {
    return detail::forward_impl(head, x, false, nullptr).output;
}

// Train-mode forward pass with inverted dropout driven by rng.
inline double forward_train(const RegressionHead& head, const embed::EmbeddingVector& x, Rng& rng) {
    return detail::forward_impl(head, x, true, &rng).output;
}

inline double mae_loss(double prediction, double target) {
    return std::abs(prediction - target);
}

// Subgradient of |pred - target| w.r.t. pred; 0 at the kink.
inline double mae_grad(double prediction, double target) {
    if (prediction > target) return 1.0;
    if (prediction < target) return -1.0;
    return 0.0;
}

// Exact gradients of mae_loss(forward_train(x), target), sharing one dropout
// mask between the forward and backward passes. Returns the train-mode loss.
inline double backward(const RegressionHead& head, const embed::EmbeddingVector& x, double target,
                       Rng& rng, Gradients& grads) {
    const auto cache = detail::forward_impl(head, x, true, &rng);
    const double g = mae_grad(cache.output, target);

    grads.W1.assign(head.h * head.d, 0.0);
    grads.b1.assign(head.h, 0.0);
    grads.W2.assign(head.h, 0.0);
    grads.b2 = g;
    for (std::size_t j = 0; j < head.h; ++j) {
        grads.W2[j] = g * cache.hidden[j];
        const double dz = g * head.W2[j] * cache.mask[j] * (cache.pre[j] > 0.0 ? 1.0 : 0.0);
        grads.b1[j] = dz;
        double* row = grads.W1.data() + j * head.d;
        for (std::size_t i = 0; i < head.d; ++i) row[i] = dz * x[i];
    }
    return mae_loss(cache.output, target);
}

namespace detail {

inline void adamw_update(std::vector<double>& theta, const std::vector<double>& g,
                         std::vector<double>& m, std::vector<double>& v, double bc1, double bc2,
                         const TrainConfig& cfg) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= cfg.learning_rate *
                    (mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * theta[i]);
    }
}

} // namespace detail

// One AdamW step with decoupled weight decay.
inline void optimizer_step(RegressionHead& head, const Gradients& grads, OptimizerState& state,
                           const TrainConfig& cfg) {
    if (state.t == 0) {
        state.m_W1.assign(head.W1.size(), 0.0);
        state.v_W1.assign(head.W1.size(), 0.0);
        state.m_b1.assign(head.b1.size(), 0.0);
        state.v_b1.assign(head.b1.size(), 0.0);
        state.m_W2.assign(head.W2.size(), 0.0);
        state.v_W2.assign(head.W2.size(), 0.0);
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    detail::adamw_update(head.W1, grads.W1, state.m_W1, state.v_W1, bc1, bc2, cfg);
    detail::adamw_update(head.b1, grads.b1, state.m_b1, state.v_b1, bc1, bc2, cfg);
    detail::adamw_update(head.W2, grads.W2, state.m_W2, state.v_W2, bc1, bc2, cfg);
    {
        state.m_b2 = cfg.beta1 * state.m_b2 + (1.0 - cfg.beta1) * grads.b2;
        state.v_b2 = cfg.beta2 * state.v_b2 + (1.0 - cfg.beta2) * grads.b2 * grads.b2;
        const double mhat = state.m_b2 / bc1;
        const double vhat = state.v_b2 / bc2;
        head.b2 -= cfg.learning_rate *
                   (mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * head.b2);
    }
}

inline nlohmann::json state_to_json(const OptimizerState& s) {
    return {{"m_W1", s.m_W1}, {"v_W1", s.v_W1}, {"m_b1", s.m_b1}, {"v_b1", s.v_b1},
            {"m_W2", s.m_W2}, {"v_W2", s.v_W2}, {"m_b2", s.m_b2}, {"v_b2", s.v_b2},
            {"t", s.t}};
}

inline OptimizerState state_from_json(const nlohmann::json& j) {
    OptimizerState s;
    s.m_W1 = j.at("m_W1").get<std::vector<double>>();
    s.v_W1 = j.at("v_W1").get<std::vector<double>>();
    s.m_b1 = j.at("m_b1").get<std::vector<double>>();
    s.v_b1 = j.at("v_b1").get<std::vector<double>>();
    s.m_W2 = j.at("m_W2").get<std::vector<double>>();
    s.v_W2 = j.at("v_W2").get<std::vector<double>>();
    s.m_b2 = j.at("m_b2").get<double>();
    s.v_b2 = j.at("v_b2").get<double>();
    s.t = j.at("t").get<std::uint64_t>();
    return s;
}

struct TrainResult {
    RegressionHead head;
    std::vector<double> epoch_mean_mae; // one entry per epoch
};

// Single-example (batch size 1) training loop: per-epoch seeded shuffle,
// AdamW updates, per-epoch mean MAE history. Deterministic for a fixed seed.
inline TrainResult train(const std::vector<TrainingExample>& examples, const TrainConfig& cfg) {
    if (examples.empty()) throw ValidationError("train: empty dataset");
    if (cfg.epochs < 1) throw ValidationError("train: epochs must be >= 1");
    const std::size_t d = examples.front().embedding.size();
    for (const auto& ex : examples) {
        if (ex.embedding.size() != d)
            throw ValidationError("train: inconsistent embedding dimensions");
    }

    Rng rng(cfg.seed);
    TrainResult result;
    result.head = make_head(d, rng);
    OptimizerState state;
    Gradients grads;

    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t idx : order) {
            const auto& ex = examples[idx];
            loss_sum += backward(result.head, ex.embedding, ex.target_count, rng, grads);
            optimizer_step(result.head, grads, state, cfg);
        }
        result.epoch_mean_mae.push_back(loss_sum / static_cast<double>(examples.size()));
    }
    return result;
}

// Round half away from zero, clamp to [1, 20].
inline int decode_count(double raw) {
    const double rounded = std::round(raw);
    return static_cast<int>(std::min(20.0, std::max(1.0, rounded)));
}

inline int predict_count(const RegressionHead& head, embed::EmbeddingProvider& provider,
                         const corpus::Document& doc, embed::EmbeddingCache* cache = nullptr) {
    const auto x = embed::embed_document(provider, doc.text, cache);
    return decode_count(forward(head, x));
}

// --- binary head file -------------------------------------------------------

inline constexpr char kHeadMagic[8] = {'C', 'A', 'R', 'P', 'A', 'S', 'R', 'H'};
inline constexpr std::uint32_t kHeadVersion = 1;

inline void save_head(const RegressionHead& head, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out.write(kHeadMagic, sizeof(kHeadMagic));
    const std::uint32_t version = kHeadVersion;
    const std::uint64_t d = head.d, h = head.h;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(reinterpret_cast<const char*>(&head.dropout_rate), sizeof(double));
    auto write_vec = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    write_vec(head.W1);
    write_vec(head.b1);
    write_vec(head.W2);
    out.write(reinterpret_cast<const char*>(&head.b2), sizeof(double));
    if (!out) throw ConfigError("write failed: " + path);
}

inline RegressionHead load_head(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kHeadMagic, sizeof(magic)) != 0)
        throw FormatError(path + ": not a regression head file (bad magic)");
    std::uint32_t version = 0;
    std::uint64_t d = 0, h = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kHeadVersion)
        throw FormatError(path + ": unsupported head version " + std::to_string(version));
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    in.read(reinterpret_cast<char*>(&h), sizeof(h));
    RegressionHead head;
    head.d = d;
    head.h = h;
    if (head.h != head.d / 2 || head.h < 1)
        throw FormatError(path + ": inconsistent dimensions");
    in.read(reinterpret_cast<char*>(&head.dropout_rate), sizeof(double));
    head.W1.resize(head.h * head.d);
    head.b1.resize(head.h);
    head.W2.resize(head.h);
    auto read_vec = [&](std::vector<double>& v) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    read_vec(head.W1);
    read_vec(head.b1);
    read_vec(head.W2);
    in.read(reinterpret_cast<char*>(&head.b2), sizeof(double));
    if (!in) throw FormatError(path + ": truncated head file");
    return head;
}

} // namespace carpas::regressor
